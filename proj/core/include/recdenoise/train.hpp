#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "recdenoise/data.hpp"
#include "recdenoise/denoiser.hpp"
#include "recdenoise/eval.hpp"
#include "recdenoise/model.hpp"

namespace recdenoise {

/// Non-finite loss or parameters during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Estimator { kNone, kArm, kAr };

std::string to_string(Estimator e);
/// Accepts "none", "arm", "ar" (case-insensitive).
Estimator parse_estimator(const std::string& name);

struct TrainConfig {
  Estimator estimator = Estimator::kArm;
  double beta = 1e-2;   // L0 weight
  double gamma = 1e-3;  // Jacobian weight
  double learning_rate = 1e-3;
  double mask_learning_rate = 1e-2;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;
  std::size_t jacobian_probes = 1;
  double jvp_eps = 1e-3;
  std::size_t patience = 20;  // evaluations without validation NDCG improvement
  double mask_init = 2.0;     // initial Phi
  /// Fixed causal sliding-window mask of this width (0 = off). Only valid
  /// with estimator none.
  std::size_t window = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Adaptive-moment optimizer over a fixed list of tensors.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Independent generator for one purpose (init, batches, dropout, masks,
/// probes) derived from the run seed.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

enum RngStream : std::uint64_t { kInitStream = 0, kBatchStream = 1, kDropoutStream = 2, kMaskStream = 3, kProbeStream = 4 };

/// Builds shifted-target training batches: input = train[:-1], positives =
/// train[1:], one negative per position outside the user's full history.
class BatchSampler {
 public:
  BatchSampler(const SplitDataset& data, std::size_t seq_len, std::size_t batch_size);

  /// Users with at least two training items, in a freshly shuffled order,
  /// cut into batches.
  std::vector<SequenceBatch> epoch(std::mt19937_64& rng) const;
  SequenceBatch make_batch(std::span<const std::size_t> users, std::mt19937_64& rng) const;
  const std::vector<std::vector<int>>& histories() const { return histories_; }
  std::size_t trainable_users() const { return trainable_.size(); }

 private:
  const SplitDataset* data_;
  std::size_t seq_len_, batch_size_;
  std::vector<std::vector<int>> histories_;  // full sequences, for BCE checks
  std::vector<std::vector<int>> sorted_;     // sorted histories, for rejection
  std::vector<std::size_t> trainable_;
};

struct JointLoss {
  BceTerms bce;
  double l0 = 0.0;                 // l0_surrogate(Phi), 0 without masks
  std::optional<Var> jacobian;     // R_J; absent when gamma = 0
  std::size_t probes_run = 0;
  Var objective;                   // bce.total + gamma * R_J (the Theta objective)
  double total = 0.0;              // objective + beta * l0
  ModelLoss parts;
};

/// L_BCE(masked model) + beta l0(Phi) + gamma R_J. `probes` fixes the
/// Jacobian probes; otherwise they are drawn from `probe_rng` (required when
/// gamma > 0).
JointLoss joint_loss(Tape& tape, const BoundParams& params, const SequenceBatch& batch, std::span<const Tensor> masks,
                     const MaskParams* phi, const ModelConfig& model, const TrainConfig& train,
                     const ForwardOptions& forward, const std::vector<std::vector<Tensor>>* probes = nullptr,
                     std::mt19937_64* probe_rng = nullptr, const BceOptions& bce = {});

struct StepStats {
  double loss = 0.0;
  double bce = 0.0;
  double l0 = 0.0;
  double jacobian = 0.0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over batches
  double bce = 0.0;
  double l0 = 0.0;
  double jacobian = 0.0;
};

struct LogRow {
  EpochStats stats;
  double val_hit = 0.0;
  double val_ndcg = 0.0;
  double mask_density = 1.0;
};

/// Header and row of the training log CSV.
std::string log_header();
std::string log_line(const LogRow& row);

/// Everything needed to continue a run exactly.
struct TrainState {
  ModelParams params;
  MaskParams phi;
  std::uint64_t theta_steps = 0, phi_steps = 0;
  std::vector<Tensor> theta_m, theta_v, phi_m, phi_v;
  std::string batch_rng, dropout_rng, mask_rng, probe_rng;  // serialized generators
  std::size_t epoch = 0;
  double best_ndcg = -1.0;
  std::size_t best_epoch = 0;
  std::size_t evals_since_best = 0;
};

struct Counters {
  std::size_t bce_evaluations = 0;
  std::size_t jacobian_probes = 0;
  std::size_t steps = 0;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& train, const SplitDataset& data);
  /// Resumes from a saved state.
  Trainer(const ModelConfig& model, const TrainConfig& train, const SplitDataset& data, TrainState state);

  StepStats train_step(const SequenceBatch& batch);
  EpochStats train_epoch();

  using LogSink = std::function<void(const LogRow&)>;
  /// Trains until max_epochs or until validation NDCG stalls for `patience`
  /// evaluations. The final (not the best) parameters are kept.
  std::vector<LogRow> fit(const LogSink& sink = {});

  /// Masks used at evaluation time: inference_mask for ARM/AR, the window
  /// for window runs, none otherwise.
  std::vector<Tensor> eval_masks() const;
  EvalReport evaluate(EvalSplit split, std::uint64_t seed, std::size_t num_negatives = 100) const;

  const ModelParams& params() const { return params_; }
  const MaskParams& mask_params() const { return phi_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }
  const Counters& counters() const { return counters_; }
  const BatchSampler& sampler() const { return sampler_; }
  std::size_t epoch() const { return epoch_; }
  bool stopped_early() const { return stopped_early_; }
  TrainState state() const;

 private:
  std::vector<Tensor> training_masks(std::optional<MaskSample>& sample);

  ModelConfig model_;
  TrainConfig train_;
  const SplitDataset* data_;
  BatchSampler sampler_;
  ModelParams params_;
  MaskParams phi_;
  Adam theta_opt_, phi_opt_;
  std::mt19937_64 batch_rng_, dropout_rng_, mask_rng_, probe_rng_;
  std::size_t epoch_ = 0;
  double best_ndcg_ = -1.0;
  std::size_t best_epoch_ = 0;
  std::size_t evals_since_best_ = 0;
  bool stopped_early_ = false;
  Counters counters_;
};

}  // namespace recdenoise
