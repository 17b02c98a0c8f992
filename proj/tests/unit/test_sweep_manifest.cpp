#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "recdenoise/manifest.hpp"
#include "recdenoise/sweep.hpp"

namespace recdenoise {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("recdenoise_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct TinySweep {
  SplitDataset clean = testing::random_split(25, 150, 4, 9, 3);
  ModelConfig model;
  TrainConfig base;
  SweepSpec spec;

  TinySweep() {
    model.max_len = 5;
    model.dim = 4;
    model.num_blocks = 1;
    model.num_heads = 1;
    base.max_epochs = 1;
    base.gamma = 1e-3;
    spec.ratios = {0.0, 0.1};
    spec.seeds = {0, 1};
    spec.window = 2;
  }
};

TEST(Sweep, VariantConfigs) {
  TrainConfig base;
  base.beta = 0.05;
  base.gamma = 0.002;
  const TrainConfig full = configure_variant(Variant::kFull, base, 3);
  EXPECT_EQ(full.estimator, Estimator::kNone);
  EXPECT_EQ(full.beta, 0.0);
  EXPECT_EQ(full.gamma, 0.0);
  const TrainConfig ar = configure_variant(Variant::kDenoiserAr, base, 3);
  EXPECT_EQ(ar.estimator, Estimator::kAr);
  EXPECT_EQ(ar.beta, 0.05);
  EXPECT_EQ(ar.gamma, 0.002);
  const TrainConfig window = configure_variant(Variant::kWindow, base, 3);
  EXPECT_EQ(window.window, 3u);
  EXPECT_NO_THROW(window.validate());
  for (Variant v : all_variants()) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("sparse"), std::invalid_argument);
}

TEST(Sweep, RatioGuard) {
  SweepSpec spec;
  spec.ratios = {0.0, 0.3};
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec.allow_any_ratio = true;
  EXPECT_NO_THROW(spec.validate());
  spec.ratios = {1.0};
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Sweep, CorruptionFactoryIsSeeded) {
  const SplitDataset clean = testing::random_split(30, 80, 5, 10, 1);
  const DatasetFactory factory = corruption_factory(clean);
  const auto a = factory(0.2, 3), b = factory(0.2, 3), c = factory(0.2, 4);
  auto trains = [](const SplitDataset& d) {
    std::vector<std::vector<int>> out;
    for (const auto& u : d.users) out.push_back(u.train);
    return out;
  };
  EXPECT_EQ(trains(a), trains(b));
  EXPECT_NE(trains(a), trains(c));
  EXPECT_EQ(trains(factory(0.0, 3)), trains(clean));
}

TEST(Sweep, RunsEveryCellAndResumes) {
  TinySweep s;
  std::size_t built = 0;
  const DatasetFactory counting = [&](double ratio, std::uint64_t seed) {
    ++built;
    return corruption_factory(s.clean)(ratio, seed);
  };
  std::vector<SweepCell> seen;
  const auto cells = noise_sweep(counting, s.model, s.base, s.spec, {}, [&](const SweepCell& c) { seen.push_back(c); });
  ASSERT_EQ(cells.size(), 2u * 2u * 4u);
  EXPECT_EQ(seen.size(), cells.size());
  EXPECT_EQ(built, 4u);  // one dataset per (ratio, seed), shared by the variants
  for (const auto& c : cells) {
    EXPECT_GE(c.hit, c.ndcg);
    EXPECT_GE(c.hit, 0.0);
    EXPECT_LE(c.hit, 1.0);
  }

  std::vector<SweepCell> partial(cells.begin(), cells.begin() + 5);
  seen.clear();
  built = 0;
  const auto resumed = noise_sweep(counting, s.model, s.base, s.spec, partial, [&](const SweepCell& c) { seen.push_back(c); });
  EXPECT_EQ(seen.size(), cells.size() - 5);
  ASSERT_EQ(resumed.size(), cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_TRUE(resumed[i].same_key(cells[i]));
    EXPECT_EQ(resumed[i].hit, cells[i].hit);
    EXPECT_EQ(resumed[i].ndcg, cells[i].ndcg);
  }
}

TEST(Sweep, CsvRoundTripAndSummary) {
  const std::vector<SweepCell> cells{{Variant::kFull, 0.1, 0, 0.5, 0.25},
                                     {Variant::kFull, 0.1, 1, 0.7, 0.35},
                                     {Variant::kDenoiserArm, 0.0, 0, 0.1 + 0.2, 1.0 / 3.0}};
  std::stringstream io;
  write_sweep_csv(io, cells);
  EXPECT_EQ(io.str().substr(0, io.str().find('\n')), "variant,ratio,seed,hit10,ndcg10");
  const auto back = read_sweep_csv(io);
  ASSERT_EQ(back.size(), cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_TRUE(back[i].same_key(cells[i]));
    EXPECT_EQ(back[i].hit, cells[i].hit);
    EXPECT_EQ(back[i].ndcg, cells[i].ndcg);
  }
  std::istringstream bad("variant,ratio,seed,hit10,ndcg10\nfull,0.1,zero,0.5,0.2\n");
  EXPECT_THROW(read_sweep_csv(bad), std::exception);

  const auto summary = summarize(cells);
  ASSERT_EQ(summary.size(), 2u);
  const auto full = std::find_if(summary.begin(), summary.end(), [](const SweepSummary& r) { return r.variant == Variant::kFull; });
  ASSERT_NE(full, summary.end());
  EXPECT_EQ(full->runs, 2u);
  EXPECT_NEAR(full->hit_mean, 0.6, 1e-15);
  EXPECT_NEAR(full->hit_std, std::sqrt(0.02), 1e-15);
  std::ostringstream out;
  write_summary_csv(out, summary);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "variant,ratio,runs,hit10_mean,hit10_std,ndcg10_mean,ndcg10_std");
}

TEST(Manifest, FingerprintTracksContent) {
  EXPECT_EQ(hex64(fnv1a64("")), "cbf29ce484222325");
  EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
  const fs::path dir = scratch_dir("fingerprint");
  const fs::path file = dir / "data.txt";
  write_file_atomic(file, "u a\nu b\n");
  const std::string before = file_fingerprint(file);
  EXPECT_EQ(read_file(file), "u a\nu b\n");
  write_file_atomic(file, "u a\nu c\n");
  EXPECT_NE(file_fingerprint(file), before);
  EXPECT_FALSE(fs::exists(dir / "data.txt.tmp"));
  EXPECT_THROW(file_fingerprint(dir / "missing.txt"), DataError);
  fs::remove_all(dir);
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.command = "train";
  m.kind = "denoiser-arm";
  m.config_json = "{\"beta\":0.01}";
  m.seed = 12345678901234ull;
  m.dataset = "data.txt";
  m.dataset_fingerprint = "00ff";
  m.artifacts = {{"checkpoint", "checkpoint.json"}, {"log", "log.csv"}};
  m.started_at = utc_stamp(true);
  m.wall_seconds = 1.5;
  m.status = "ok";
  const RunManifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back.command, m.command);
  EXPECT_EQ(back.kind, m.kind);
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_EQ(back.artifacts, m.artifacts);
  EXPECT_EQ(back.wall_seconds, m.wall_seconds);
  EXPECT_EQ(back.status, m.status);
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));

  const fs::path dir = scratch_dir("manifest");
  save_manifest(dir / "manifest.json", m);
  EXPECT_EQ(load_manifest(dir / "manifest.json").dataset_fingerprint, "00ff");
  fs::remove_all(dir);
}

TEST(Manifest, ConfigJsonRoundTrip) {
  ModelConfig m;
  m.num_items = 42;
  m.dim = 16;
  m.dropout = 0.1;
  EXPECT_EQ(model_config_from_json(model_config_json(m)), m);
  TrainConfig t;
  t.estimator = Estimator::kAr;
  t.beta = 1e-5;
  t.seed = 9;
  EXPECT_EQ(train_config_from_json(train_config_json(t)), t);
  try {
    model_config_from_json("{\"num_items\":3}");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("max_len"), std::string::npos);
  }
}

TEST(Manifest, RunKinds) {
  TrainConfig t;
  EXPECT_EQ(run_kind(t), "denoiser-arm");
  t.estimator = Estimator::kAr;
  EXPECT_EQ(run_kind(t), "denoiser-ar");
  t.estimator = Estimator::kNone;
  t.beta = 0.0;
  EXPECT_EQ(run_kind(t), "jacobian-only");
  t.gamma = 0.0;
  EXPECT_EQ(run_kind(t), "backbone");
  t.window = 3;
  EXPECT_EQ(run_kind(t), "window");
  EXPECT_EQ(utc_stamp(false).size(), 16u);
}

}  // namespace
}  // namespace recdenoise
