#include "recdenoise/eval.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "recdenoise/stats.hpp"

namespace recdenoise {

std::size_t rank_from_scores(double truth_score, std::span<const double> negative_scores) {
  std::size_t rank = 1;
  for (double s : negative_scores)
    if (s >= truth_score) ++rank;
  return rank;
}

std::size_t rank_candidates(std::span<const double> state, int truth, std::span<const int> negatives,
                            std::span<const int> history, const ModelParams& params) {
  const std::unordered_set<int> seen(history.begin(), history.end());
  std::vector<double> scores;
  scores.reserve(negatives.size());
  for (int neg : negatives) {
    if (seen.count(neg)) throw DataError("evaluation negative " + std::to_string(neg) + " is in the user's history");
    scores.push_back(score(state, neg, params));
  }
  return rank_from_scores(score(state, truth, params), scores);
}

double hit_at_n(std::size_t rank, std::size_t n) {
  if (rank < 1 || n < 1) throw std::invalid_argument("hit_at_n: rank and n must be >= 1");
  return rank <= n ? 1.0 : 0.0;
}

double ndcg_at_n(std::size_t rank, std::size_t n) {
  if (rank < 1 || n < 1) throw std::invalid_argument("ndcg_at_n: rank and n must be >= 1");
  return rank <= n ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double relative_improvement(double model, double baseline) {
  if (!(baseline > 0.0)) throw std::invalid_argument("relative_improvement: baseline must be > 0");
  return 100.0 * (model - baseline) / baseline;
}

std::vector<int> sample_eval_negatives(std::span<const int> history, std::size_t num_items, std::size_t count,
                                       std::uint64_t seed, std::size_t user, std::uint64_t tag) {
  const std::unordered_set<int> seen(history.begin(), history.end());
  std::size_t available = num_items;
  for (int item : seen)
    if (item >= 1 && static_cast<std::size_t>(item) <= num_items) --available;
  if (available < count) {
    throw DataError("user " + std::to_string(user) + " has only " + std::to_string(available) +
                    " unseen items, need " + std::to_string(count) + " negatives");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(user >> 32),
                    static_cast<std::uint32_t>(tag)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<int> pick(1, static_cast<int>(num_items));
  std::unordered_set<int> chosen;
  std::vector<int> out;
  out.reserve(count);
  while (out.size() < count) {
    const int item = pick(rng);
    if (seen.count(item) || !chosen.insert(item).second) continue;
    out.push_back(item);
  }
  return out;
}

std::vector<int> eval_input(const UserSplit& user, EvalSplit split) {
  std::vector<int> seq = user.train;
  if (split == EvalSplit::kTest) seq.push_back(user.valid);
  return seq;
}

std::vector<std::vector<double>> final_states(const ModelParams& params, const ModelConfig& config,
                                              std::span<const Tensor> masks,
                                              std::span<const std::vector<int>> sequences) {
  const std::size_t n = config.max_len, d = config.dim;
  std::vector<int> inputs;
  inputs.reserve(sequences.size() * n);
  for (const auto& s : sequences) {
    const auto padded = pad_truncate(s, n);
    inputs.insert(inputs.end(), padded.begin(), padded.end());
  }
  Tape tape;
  tape.set_grad_enabled(false);
  const BoundParams bound = bind(tape, params);
  const BlockContext ctx = make_block_context(inputs, sequences.size(), config);
  const Var embedded = embed_sequence(tape, bound, inputs, ctx, config);
  const ForwardResult fwd = transformer_forward(tape, embedded, masks, ctx, config, bound);
  const auto out = fwd.output.value().data();
  std::vector<std::vector<double>> states(sequences.size());
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const auto row = out.subspan((b * n + n - 1) * d, d);
    states[b].assign(row.begin(), row.end());
  }
  return states;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& config, std::span<const Tensor> masks,
                    const SplitDataset& data, const EvalOptions& options) {
  if (options.top_n < 1) throw std::invalid_argument("EvalOptions.top_n must be >= 1");
  if (options.batch_size < 1) throw std::invalid_argument("EvalOptions.batch_size must be >= 1");
  if (data.users.empty()) throw DataError("evaluate: dataset has no users");
  EvalReport report;
  report.top_n = options.top_n;
  report.num_negatives = options.num_negatives;
  report.seed = options.seed;
  const std::uint64_t tag = options.split == EvalSplit::kTest ? 1 : 0;
  double hit_sum = 0.0, ndcg_sum = 0.0;
  for (std::size_t start = 0; start < data.users.size(); start += options.batch_size) {
    const std::size_t end = std::min(data.users.size(), start + options.batch_size);
    std::vector<std::vector<int>> inputs;
    for (std::size_t i = start; i < end; ++i) inputs.push_back(eval_input(data.users[i], options.split));
    const auto states = final_states(params, config, masks, inputs);
    for (std::size_t i = start; i < end; ++i) {
      const UserSplit& user = data.users[i];
      const auto history = user.full_sequence();
      const int truth = options.split == EvalSplit::kTest ? user.test : user.valid;
      const auto negatives =
          sample_eval_negatives(history, data.num_items, options.num_negatives, options.seed, i, tag);
      const std::size_t rank = rank_candidates(states[i - start], truth, negatives, history, params);
      report.users.push_back(i);
      report.ranks.push_back(rank);
      hit_sum += hit_at_n(rank, options.top_n);
      ndcg_sum += ndcg_at_n(rank, options.top_n);
    }
  }
  report.hit = hit_sum / static_cast<double>(report.ranks.size());
  report.ndcg = ndcg_sum / static_cast<double>(report.ranks.size());
  return report;
}

std::vector<double> column_keep(const MaskParams& phi) {
  const std::size_t n = phi.seq_len();
  std::vector<double> keep(n, 0.0);
  if (n == 0) return keep;
  const auto masks = inference_mask(phi);
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<double> column;
    for (const auto& m : masks)
      for (std::size_t u = v; u < n; ++u) column.push_back(m[u * n + v]);
    keep[v] = mean(column);
  }
  return keep;
}

void KeepSamples::append(const KeepSamples& other) {
  clean.insert(clean.end(), other.clean.begin(), other.clean.end());
  noisy.insert(noisy.end(), other.noisy.begin(), other.noisy.end());
}

KeepSamples keep_samples(const MaskParams& phi, std::span<const std::vector<bool>> noisy) {
  const std::size_t n = phi.seq_len();
  const auto keep = column_keep(phi);
  KeepSamples out;
  for (const auto& flags : noisy) {
    const std::size_t len = std::min(flags.size(), n);
    const std::size_t offset = flags.size() - len;
    for (std::size_t i = 0; i < len; ++i) {
      const double k = keep[n - len + i];
      (flags[offset + i] ? out.noisy : out.clean).push_back(k);
    }
  }
  return out;
}

NoiseRecovery recovery_from_samples(const KeepSamples& samples) {
  NoiseRecovery r;
  r.clean_count = samples.clean.size();
  r.noisy_count = samples.noisy.size();
  if (samples.clean.empty() || samples.noisy.empty()) return r;
  r.applicable = true;
  r.clean_mean = mean(samples.clean);
  r.noisy_mean = mean(samples.noisy);
  r.difference = r.clean_mean - r.noisy_mean;
  r.p_value = rank_sum_greater(samples.clean, samples.noisy).p_value;
  return r;
}

NoiseRecovery mask_noise_recovery(const MaskParams& phi, std::span<const std::vector<bool>> noisy) {
  return recovery_from_samples(keep_samples(phi, noisy));
}

std::vector<std::vector<bool>> test_input_noise(const SyntheticDataset& synth, const SplitDataset& split) {
  std::vector<std::vector<bool>> out;
  out.reserve(split.users.size());
  for (const auto& user : split.users) {
    const auto& flags = synth.noisy.at(user.user);
    const std::size_t len = user.train.size() + 1;
    if (flags.size() < len) throw DataError("test_input_noise: noise flags shorter than the user's sequence");
    out.emplace_back(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(len));
  }
  return out;
}

}  // namespace recdenoise
