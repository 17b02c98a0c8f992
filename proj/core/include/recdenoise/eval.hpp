#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "recdenoise/data.hpp"
#include "recdenoise/denoiser.hpp"
#include "recdenoise/model.hpp"

namespace recdenoise {

enum class EvalSplit { kValid, kTest };

struct EvalOptions {
  std::size_t top_n = 10;
  std::size_t num_negatives = 100;
  std::uint64_t seed = 0;
  EvalSplit split = EvalSplit::kTest;
  std::size_t batch_size = 256;
};

struct EvalReport {
  double hit = 0.0;   // mean Hit@N
  double ndcg = 0.0;  // mean NDCG@N
  std::size_t top_n = 10;
  std::size_t num_negatives = 100;
  std::uint64_t seed = 0;
  std::vector<std::size_t> users;  // SplitDataset user index
  std::vector<std::size_t> ranks;  // 1-based, aligned with users
};

/// 1 + number of negatives scoring at least as high as the ground truth.
std::size_t rank_from_scores(double truth_score, std::span<const double> negative_scores);

/// Ranks `truth` against `negatives` by <state, item embedding>. Throws
/// DataError if a negative appears in `history`.
std::size_t rank_candidates(std::span<const double> state, int truth, std::span<const int> negatives,
                            std::span<const int> history, const ModelParams& params);

double hit_at_n(std::size_t rank, std::size_t n);
double ndcg_at_n(std::size_t rank, std::size_t n);

/// 100 * (model - baseline) / baseline; baseline must be positive.
double relative_improvement(double model, double baseline);

/// `count` distinct items drawn uniformly from 1..num_items minus `history`,
/// from a generator seeded by (seed, user, tag).
std::vector<int> sample_eval_negatives(std::span<const int> history, std::size_t num_items, std::size_t count,
                                       std::uint64_t seed, std::size_t user, std::uint64_t tag = 0);

/// The sequence fed to the model when predicting the held-out item:
/// train for validation, train + valid for test.
std::vector<int> eval_input(const UserSplit& user, EvalSplit split);

/// Final-position hidden states (one row of d values per sequence) with
/// dropout off. `masks` is empty or one (n x n) mask per block.
std::vector<std::vector<double>> final_states(const ModelParams& params, const ModelConfig& config,
                                              std::span<const Tensor> masks,
                                              std::span<const std::vector<int>> sequences);

/// Sampled-negative Hit@N / NDCG@N over every user of `data`.
EvalReport evaluate(const ModelParams& params, const ModelConfig& config, std::span<const Tensor> masks,
                    const SplitDataset& data, const EvalOptions& options = {});

struct NoiseRecovery {
  bool applicable = false;  // false when there are no noisy (or no clean) positions
  double clean_mean = 0.0;
  double noisy_mean = 0.0;
  double difference = 0.0;  // clean_mean - noisy_mean
  double p_value = 1.0;     // one-sided rank-sum, clean > noisy
  std::size_t clean_count = 0;
  std::size_t noisy_count = 0;
};

/// Mean inference-mask keep probability of each key column, averaged over
/// the causal rows of every block.
std::vector<double> column_keep(const MaskParams& phi);

/// Column keep probabilities at the clean and noisy positions of a set of
/// input sequences. `noisy[k]` flags the items of the k-th model input,
/// oldest first; sequences are right-aligned to the mask window as in
/// training.
struct KeepSamples {
  std::vector<double> clean, noisy;

  void append(const KeepSamples& other);
};

KeepSamples keep_samples(const MaskParams& phi, std::span<const std::vector<bool>> noisy);
NoiseRecovery recovery_from_samples(const KeepSamples& samples);

/// Compares column keep probabilities at noisy and clean positions.
NoiseRecovery mask_noise_recovery(const MaskParams& phi, std::span<const std::vector<bool>> noisy);

/// Noise flags of the test-time input (train + valid) of every user in
/// `split`, taken from the synthetic generator's ground truth.
std::vector<std::vector<bool>> test_input_noise(const SyntheticDataset& synth, const SplitDataset& split);

}  // namespace recdenoise
