#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "recdenoise/data.hpp"
#include "recdenoise/model.hpp"
#include "recdenoise/train.hpp"

namespace recdenoise {

enum class Variant { kFull, kDenoiserArm, kDenoiserAr, kWindow };

std::string to_string(Variant v);
/// "full", "denoiser-arm", "denoiser-ar", "window".
Variant parse_variant(const std::string& name);
const std::vector<Variant>& all_variants();

/// Training config of a variant derived from `base`: full attention drops
/// both regularizers; the denoisers keep base beta/gamma with their
/// estimator; window uses a fixed sliding window of `window` positions.
TrainConfig configure_variant(Variant v, const TrainConfig& base, std::size_t window);

/// Corrupted training data for one (ratio, seed) cell. Every variant of the
/// same cell sees the same data.
using DatasetFactory = std::function<SplitDataset(double ratio, std::uint64_t seed)>;

/// corrupt_training on `clean`, seeded by (seed, ratio).
DatasetFactory corruption_factory(const SplitDataset& clean, ReplacementPool pool = ReplacementPool::kPerUser,
                                  double max_ratio = 0.25);

struct SweepSpec {
  std::vector<double> ratios{0.0, 0.05, 0.10, 0.15, 0.20, 0.25};
  std::vector<Variant> variants = all_variants();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t window = 3;
  bool allow_any_ratio = false;  // otherwise ratios above 0.25 are rejected

  void validate() const;
};

struct SweepCell {
  Variant variant = Variant::kFull;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  double hit = 0.0;   // test Hit@10
  double ndcg = 0.0;  // test NDCG@10

  bool same_key(const SweepCell& other) const;
};

/// Trains every (variant, ratio, seed) cell from scratch and evaluates on
/// the test split. Cells already present in `completed` are skipped and
/// returned unchanged; `on_cell` sees each newly finished cell.
std::vector<SweepCell> noise_sweep(const DatasetFactory& factory, const ModelConfig& model, const TrainConfig& base,
                                   const SweepSpec& spec, const std::vector<SweepCell>& completed = {},
                                   const std::function<void(const SweepCell&)>& on_cell = {});

/// Trains and evaluates a single cell.
SweepCell run_cell(const SplitDataset& data, const ModelConfig& model, const TrainConfig& config, Variant v,
                   double ratio, std::uint64_t seed);

struct SweepSummary {
  Variant variant = Variant::kFull;
  double ratio = 0.0;
  std::size_t runs = 0;
  double hit_mean = 0.0, hit_std = 0.0;
  double ndcg_mean = 0.0, ndcg_std = 0.0;
};

/// Mean and sample standard deviation per (variant, ratio), ordered by
/// variant then ratio.
std::vector<SweepSummary> summarize(const std::vector<SweepCell>& cells);

/// `variant,ratio,seed,hit10,ndcg10`.
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells);
std::vector<SweepCell> read_sweep_csv(std::istream& in);
/// `variant,ratio,runs,hit10_mean,hit10_std,ndcg10_mean,ndcg10_std`.
void write_summary_csv(std::ostream& out, const std::vector<SweepSummary>& rows);

}  // namespace recdenoise
