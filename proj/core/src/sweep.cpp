#include "recdenoise/sweep.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "recdenoise/stats.hpp"

namespace recdenoise {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kDenoiserArm: return "denoiser-arm";
    case Variant::kDenoiserAr: return "denoiser-ar";
    case Variant::kWindow: return "window";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants())
    if (to_string(v) == name) return v;
  throw std::invalid_argument("unknown variant '" + name + "' (expected full, denoiser-arm, denoiser-ar or window)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::kFull, Variant::kDenoiserArm, Variant::kDenoiserAr, Variant::kWindow};
  return v;
}

TrainConfig configure_variant(Variant v, const TrainConfig& base, std::size_t window) {
  TrainConfig c = base;
  c.window = 0;
  switch (v) {
    case Variant::kFull:
    case Variant::kWindow:
      c.estimator = Estimator::kNone;
      c.beta = 0.0;
      c.gamma = 0.0;
      if (v == Variant::kWindow) {
        if (window < 1) throw std::invalid_argument("window variant needs a width >= 1");
        c.window = window;
      }
      break;
    case Variant::kDenoiserArm: c.estimator = Estimator::kArm; break;
    case Variant::kDenoiserAr: c.estimator = Estimator::kAr; break;
  }
  return c;
}

DatasetFactory corruption_factory(const SplitDataset& clean, ReplacementPool pool, double max_ratio) {
  return [clean, pool, max_ratio](double ratio, std::uint64_t seed) {
    const auto bits = std::bit_cast<std::uint64_t>(ratio);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(bits), static_cast<std::uint32_t>(bits >> 32), 0xc0u};
    std::mt19937_64 rng(seq);
    return corrupt_training(clean, ratio, rng, pool, max_ratio).data;
  };
}

void SweepSpec::validate() const {
  if (ratios.empty() || variants.empty() || seeds.empty()) {
    throw std::invalid_argument("SweepSpec: ratios, variants and seeds must be non-empty");
  }
  for (double r : ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("SweepSpec: ratio " + std::to_string(r) + " outside [0, 1)");
    if (r > 0.25 && !allow_any_ratio) {
      throw std::invalid_argument("SweepSpec: ratio " + std::to_string(r) + " exceeds 0.25 (allow_any_ratio to override)");
    }
  }
}

bool SweepCell::same_key(const SweepCell& other) const {
  return variant == other.variant && ratio == other.ratio && seed == other.seed;
}

SweepCell run_cell(const SplitDataset& data, const ModelConfig& model, const TrainConfig& config, Variant v,
                   double ratio, std::uint64_t seed) {
  Trainer trainer(model, config, data);
  trainer.fit();
  const EvalReport report = trainer.evaluate(EvalSplit::kTest, seed);
  return SweepCell{v, ratio, seed, report.hit, report.ndcg};
}

std::vector<SweepCell> noise_sweep(const DatasetFactory& factory, const ModelConfig& model, const TrainConfig& base,
                                   const SweepSpec& spec, const std::vector<SweepCell>& completed,
                                   const std::function<void(const SweepCell&)>& on_cell) {
  spec.validate();
  std::vector<SweepCell> out;
  for (double ratio : spec.ratios) {
    for (std::uint64_t seed : spec.seeds) {
      std::optional<SplitDataset> data;
      for (Variant v : spec.variants) {
        const SweepCell key{v, ratio, seed, 0.0, 0.0};
        auto done = std::find_if(completed.begin(), completed.end(), [&](const SweepCell& c) { return c.same_key(key); });
        if (done != completed.end()) {
          out.push_back(*done);
          continue;
        }
        if (!data) data = factory(ratio, seed);
        TrainConfig config = configure_variant(v, base, spec.window);
        config.seed = seed;
        ModelConfig m = model;
        m.num_items = data->num_items;
        out.push_back(run_cell(*data, m, config, v, ratio, seed));
        if (on_cell) on_cell(out.back());
      }
    }
  }
  return out;
}

std::vector<SweepSummary> summarize(const std::vector<SweepCell>& cells) {
  std::map<std::pair<int, double>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& c : cells) {
    auto& g = groups[{static_cast<int>(c.variant), c.ratio}];
    g.first.push_back(c.hit);
    g.second.push_back(c.ndcg);
  }
  std::vector<SweepSummary> out;
  for (const auto& [key, g] : groups) {
    SweepSummary s;
    s.variant = static_cast<Variant>(key.first);
    s.ratio = key.second;
    s.runs = g.first.size();
    s.hit_mean = mean(g.first);
    s.hit_std = stddev(g.first);
    s.ndcg_mean = mean(g.second);
    s.ndcg_std = stddev(g.second);
    out.push_back(s);
  }
  return out;
}

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "variant,ratio,seed,hit10,ndcg10\n";
  for (const auto& c : cells) {
    out << to_string(c.variant) << ',' << shortest(c.ratio) << ',' << c.seed << ',' << shortest(c.hit) << ','
        << shortest(c.ndcg) << '\n';
  }
}

std::vector<SweepCell> read_sweep_csv(std::istream& in) {
  std::vector<SweepCell> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line_no == 1 && line.rfind("variant,", 0) == 0)) continue;
    std::istringstream fields(line);
    std::string variant, ratio, seed, hit, ndcg;
    if (!std::getline(fields, variant, ',') || !std::getline(fields, ratio, ',') || !std::getline(fields, seed, ',') ||
        !std::getline(fields, hit, ',') || !std::getline(fields, ndcg)) {
      throw DataError("sweep csv line " + std::to_string(line_no) + ": expected 5 fields");
    }
    try {
      out.push_back(SweepCell{parse_variant(variant), std::stod(ratio), std::stoull(seed), std::stod(hit), std::stod(ndcg)});
    } catch (const std::exception& e) {
      throw DataError("sweep csv line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SweepSummary>& rows) {
  out << "variant,ratio,runs,hit10_mean,hit10_std,ndcg10_mean,ndcg10_std\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << to_string(r.variant) << ',' << r.ratio << ',' << r.runs << ',' << r.hit_mean << ',' << r.hit_std << ','
        << r.ndcg_mean << ',' << r.ndcg_std << '\n';
  }
}

}  // namespace recdenoise
