#include "recdenoise/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "recdenoise/jacobian.hpp"

namespace recdenoise {

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& text, const char* what) {
  std::istringstream in(text);
  in >> rng;
  if (!in) throw std::invalid_argument(std::string("TrainState: bad ") + what + " generator state");
}

std::vector<Tensor*> tensor_list(ModelParams& params) {
  std::vector<Tensor*> out;
  params.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<Tensor*> tensor_list(MaskParams& phi) {
  std::vector<Tensor*> out;
  for (auto& t : phi.logits) out.push_back(&t);
  return out;
}

}  // namespace

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::kNone: return "none";
    case Estimator::kArm: return "arm";
    case Estimator::kAr: return "ar";
  }
  return "?";
}

Estimator parse_estimator(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "none") return Estimator::kNone;
  if (lower == "arm") return Estimator::kArm;
  if (lower == "ar") return Estimator::kAr;
  throw std::invalid_argument("unknown estimator '" + name + "' (expected none, arm or ar)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("TrainConfig." + msg); };
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (!(gamma >= 0.0)) fail("gamma must be >= 0");
  if (estimator == Estimator::kNone && beta > 0.0) fail("beta must be 0 when estimator is none");
  if (window > 0 && estimator != Estimator::kNone) fail("window requires estimator none");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(mask_learning_rate >= 0.0)) fail("mask_learning_rate must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (jacobian_probes < 1) fail("jacobian_probes must be >= 1");
  if (!(jvp_eps > 0.0)) fail("jvp_eps must be > 0");
  if (patience < 1) fail("patience must be >= 1");
  if (!std::isfinite(mask_init)) fail("mask_init must be finite");
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam::step: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape(), 0.0);
      v_.emplace_back(p->shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam::step: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (g.shape() != p.shape()) throw ShapeError("Adam::step: gradient " + std::to_string(k) + " has wrong shape");
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw std::invalid_argument("Adam::restore: moment lists differ in length");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return std::mt19937_64(seq);
}

BatchSampler::BatchSampler(const SplitDataset& data, std::size_t seq_len, std::size_t batch_size)
    : data_(&data), seq_len_(seq_len), batch_size_(batch_size) {
  if (seq_len < 1 || batch_size < 1) throw std::invalid_argument("BatchSampler: seq_len and batch_size must be >= 1");
  histories_ = data.histories();
  sorted_ = histories_;
  for (std::size_t u = 0; u < data.users.size(); ++u) {
    auto& s = sorted_[u];
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.size() >= data.num_items) throw DataError("user " + std::to_string(u) + " has interacted with every item");
    if (data.users[u].train.size() >= 2) trainable_.push_back(u);
  }
  if (trainable_.empty()) throw DataError("no user has two or more training interactions");
}

std::vector<SequenceBatch> BatchSampler::epoch(std::mt19937_64& rng) const {
  std::vector<std::size_t> order = trainable_;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<SequenceBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size_) {
    const std::size_t end = std::min(order.size(), start + batch_size_);
    out.push_back(make_batch(std::span(order).subspan(start, end - start), rng));
  }
  return out;
}

SequenceBatch BatchSampler::make_batch(std::span<const std::size_t> users, std::mt19937_64& rng) const {
  const std::size_t n = seq_len_;
  SequenceBatch b;
  b.size = users.size();
  b.seq_len = n;
  b.inputs.reserve(b.size * n);
  b.positives.reserve(b.size * n);
  b.negatives.reserve(b.size * n);
  std::uniform_int_distribution<int> pick(1, static_cast<int>(data_->num_items));
  for (std::size_t u : users) {
    const auto& train = data_->users.at(u).train;
    const std::span<const int> seq(train);
    const auto in = pad_truncate(seq.first(seq.size() - 1), n);
    const auto pos = pad_truncate(seq.subspan(1), n);
    const auto& seen = sorted_[u];
    for (std::size_t t = 0; t < n; ++t) {
      b.inputs.push_back(in[t]);
      b.positives.push_back(pos[t]);
      int neg = 0;
      if (in[t] != 0) {
        do neg = pick(rng);
        while (std::binary_search(seen.begin(), seen.end(), neg));
      }
      b.negatives.push_back(neg);
    }
    b.users.push_back(u);
  }
  return b;
}

JointLoss joint_loss(Tape& tape, const BoundParams& params, const SequenceBatch& batch, std::span<const Tensor> masks,
                     const MaskParams* phi, const ModelConfig& model, const TrainConfig& train,
                     const ForwardOptions& forward, const std::vector<std::vector<Tensor>>* probes,
                     std::mt19937_64* probe_rng, const BceOptions& bce) {
  JointLoss out;
  out.parts = model_loss(tape, params, batch, masks, model, forward, bce);
  out.bce = out.parts.terms;
  out.objective = out.bce.total;
  if (phi != nullptr && train.estimator != Estimator::kNone) out.l0 = l0_surrogate(*phi);
  if (train.gamma > 0.0) {
    std::vector<std::vector<Tensor>> drawn;
    if (probes == nullptr) {
      if (probe_rng == nullptr) throw std::invalid_argument("joint_loss: gamma > 0 needs probes or a probe generator");
      JacobianProbe setting;
      setting.num_projections = train.jacobian_probes;
      setting.eps = train.jvp_eps;
      drawn = draw_block_probes(out.parts.forward, setting, *probe_rng);
      probes = &drawn;
    }
    JacobianPenalty pen = jacobian_penalty(tape, params, out.parts.forward, out.parts.context, masks, model, *probes,
                                           train.jvp_eps);
    out.probes_run = pen.probes_run;
    out.jacobian = pen.value;
    out.objective = add(out.objective, scale(pen.value, train.gamma));
  }
  out.total = out.objective.value().item() + train.beta * out.l0;
  return out;
}

std::string log_header() { return "epoch,loss,bce,l0,jacobian,val_hit10,val_ndcg10,mask_density"; }

std::string log_line(const LogRow& row) {
  std::ostringstream out;
  out << std::setprecision(10) << row.stats.epoch << ',' << row.stats.loss << ',' << row.stats.bce << ','
      << row.stats.l0 << ',' << row.stats.jacobian << ',' << row.val_hit << ',' << row.val_ndcg << ','
      << row.mask_density;
  return out.str();
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train, const SplitDataset& data)
    : model_(model),
      train_(train),
      data_(&data),
      sampler_(data, model.max_len, train.batch_size),
      theta_opt_(train.learning_rate),
      phi_opt_(train.mask_learning_rate),
      batch_rng_(stream_rng(train.seed, kBatchStream)),
      dropout_rng_(stream_rng(train.seed, kDropoutStream)),
      mask_rng_(stream_rng(train.seed, kMaskStream)),
      probe_rng_(stream_rng(train.seed, kProbeStream)) {
  model_.validate();
  train_.validate();
  if (data.num_items != model.num_items) {
    throw std::invalid_argument("ModelConfig.num_items (" + std::to_string(model.num_items) +
                                ") does not match the dataset (" + std::to_string(data.num_items) + ")");
  }
  auto init_rng = stream_rng(train.seed, kInitStream);
  params_ = ModelParams::init(model_, init_rng);
  phi_ = MaskParams::constant(model_.num_blocks, model_.max_len, train_.mask_init);
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train, const SplitDataset& data, TrainState state)
    : Trainer(model, train, data) {
  params_ = std::move(state.params);
  phi_ = std::move(state.phi);
  if (phi_.num_blocks() != model_.num_blocks || phi_.seq_len() != model_.max_len) {
    throw std::invalid_argument("TrainState: mask logits do not match the model shape");
  }
  if (state.theta_steps > 0) theta_opt_.restore(state.theta_steps, std::move(state.theta_m), std::move(state.theta_v));
  if (state.phi_steps > 0) phi_opt_.restore(state.phi_steps, std::move(state.phi_m), std::move(state.phi_v));
  rng_from_string(batch_rng_, state.batch_rng, "batch");
  rng_from_string(dropout_rng_, state.dropout_rng, "dropout");
  rng_from_string(mask_rng_, state.mask_rng, "mask");
  rng_from_string(probe_rng_, state.probe_rng, "probe");
  epoch_ = state.epoch;
  best_ndcg_ = state.best_ndcg;
  best_epoch_ = state.best_epoch;
  evals_since_best_ = state.evals_since_best;
}

TrainState Trainer::state() const {
  TrainState s;
  s.params = params_;
  s.phi = phi_;
  s.theta_steps = theta_opt_.steps();
  s.theta_m = theta_opt_.first_moments();
  s.theta_v = theta_opt_.second_moments();
  s.phi_steps = phi_opt_.steps();
  s.phi_m = phi_opt_.first_moments();
  s.phi_v = phi_opt_.second_moments();
  s.batch_rng = rng_to_string(batch_rng_);
  s.dropout_rng = rng_to_string(dropout_rng_);
  s.mask_rng = rng_to_string(mask_rng_);
  s.probe_rng = rng_to_string(probe_rng_);
  s.epoch = epoch_;
  s.best_ndcg = best_ndcg_;
  s.best_epoch = best_epoch_;
  s.evals_since_best = evals_since_best_;
  return s;
}

std::vector<Tensor> Trainer::training_masks(std::optional<MaskSample>& sample) {
  if (train_.window > 0) return std::vector<Tensor>(model_.num_blocks, window_mask(model_.max_len, train_.window));
  if (train_.estimator == Estimator::kNone) return {};
  sample = sample_masks(phi_, mask_rng_);
  return sample->masks;
}

std::vector<Tensor> Trainer::eval_masks() const {
  if (train_.window > 0) return std::vector<Tensor>(model_.num_blocks, window_mask(model_.max_len, train_.window));
  if (train_.estimator == Estimator::kNone) return {};
  return inference_mask(phi_);
}

StepStats Trainer::train_step(const SequenceBatch& batch) {
  ForwardOptions fwd;
  fwd.training = true;
  fwd.dropout_seed = dropout_rng_();
  std::optional<MaskSample> sample;
  const std::vector<Tensor> masks = training_masks(sample);

  Tape tape;
  const BoundParams bound = bind(tape, params_);
  JointLoss loss = joint_loss(tape, bound, batch, masks, &phi_, model_, train_, fwd, nullptr, &probe_rng_);
  ++counters_.bce_evaluations;
  counters_.jacobian_probes += loss.probes_run;

  StepStats stats;
  stats.bce = loss.bce.bce.value().item();
  stats.l0 = loss.l0;
  stats.jacobian = loss.jacobian ? loss.jacobian->value().item() : 0.0;
  stats.loss = loss.total;
  if (!std::isfinite(stats.loss) || !std::isfinite(stats.bce) || !std::isfinite(stats.jacobian)) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch_ + 1 << " step " << counters_.steps + 1 << ": bce=" << stats.bce
        << " l0=" << stats.l0 << " jacobian=" << stats.jacobian << " users=[";
    for (std::size_t i = 0; i < batch.users.size(); ++i) msg << (i ? "," : "") << batch.users[i];
    msg << "]";
    throw NumericalError(msg.str());
  }

  tape.backward(loss.objective);
  std::vector<Tensor> grads;
  for (const Var& v : bound.all()) grads.push_back(tape.gradient(v));

  std::vector<Tensor> mask_grad;
  if (sample) {
    const double at_sample = stats.bce;
    if (train_.estimator == Estimator::kArm) {
      Tape anti_tape;
      anti_tape.set_grad_enabled(false);
      const BoundParams anti_bound = bind(anti_tape, params_);
      const auto anti = antithetic_masks(phi_, sample->uniforms);
      const ModelLoss anti_loss = model_loss(anti_tape, anti_bound, batch, anti, model_, fwd);
      ++counters_.bce_evaluations;
      const double at_anti = anti_loss.terms.bce.value().item();
      if (!std::isfinite(at_anti)) throw NumericalError("non-finite antithetic loss at step " + std::to_string(counters_.steps + 1));
      mask_grad = arm_gradient_from_losses(phi_, sample->uniforms, at_anti, at_sample, train_.beta);
    } else {
      mask_grad = ar_gradient_from_loss(phi_, sample->uniforms, at_sample, train_.beta);
    }
  }

  const auto theta = tensor_list(params_);
  theta_opt_.step(theta, grads);
  if (!mask_grad.empty() && train_.mask_learning_rate > 0.0) {
    const auto phi = tensor_list(phi_);
    phi_opt_.step(phi, mask_grad);
  }
  if (!params_.all_finite() || !phi_.all_finite()) {
    throw NumericalError("parameters became non-finite at step " + std::to_string(counters_.steps + 1));
  }
  ++counters_.steps;
  return stats;
}

EpochStats Trainer::train_epoch() {
  const auto batches = sampler_.epoch(batch_rng_);
  EpochStats e;
  for (const auto& b : batches) {
    const StepStats s = train_step(b);
    e.loss += s.loss;
    e.bce += s.bce;
    e.l0 += s.l0;
    e.jacobian += s.jacobian;
  }
  const double k = static_cast<double>(batches.size());
  e.loss /= k;
  e.bce /= k;
  e.l0 /= k;
  e.jacobian /= k;
  e.epoch = ++epoch_;
  return e;
}

EvalReport Trainer::evaluate(EvalSplit split, std::uint64_t seed, std::size_t num_negatives) const {
  EvalOptions opt;
  opt.split = split;
  opt.seed = seed;
  opt.num_negatives = num_negatives;
  const auto masks = eval_masks();
  return recdenoise::evaluate(params_, model_, masks, *data_, opt);
}

std::vector<LogRow> Trainer::fit(const LogSink& sink) {
  std::vector<LogRow> rows;
  stopped_early_ = false;
  while (epoch_ < train_.max_epochs) {
    LogRow row;
    row.stats = train_epoch();
    if (epoch_ % train_.eval_every != 0 && epoch_ != train_.max_epochs) continue;
    const EvalReport val = evaluate(EvalSplit::kValid, train_.seed);
    row.val_hit = val.hit;
    row.val_ndcg = val.ndcg;
    row.mask_density = mask_density(eval_masks());
    rows.push_back(row);
    if (sink) sink(row);
    if (val.ndcg > best_ndcg_) {
      best_ndcg_ = val.ndcg;
      best_epoch_ = epoch_;
      evals_since_best_ = 0;
    } else if (++evals_since_best_ >= train_.patience) {
      stopped_early_ = true;
      break;
    }
  }
  return rows;
}

}  // namespace recdenoise
