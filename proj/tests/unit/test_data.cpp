#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "recdenoise/data.hpp"

namespace recdenoise {
namespace {

InteractionLog parse(const std::string& text) {
  std::istringstream in(text);
  return parse_interactions(in, "test");
}

TEST(Data, ParsesAndReindexes) {
  const InteractionLog log = parse("u1 a 3\nu1 b 1\n# comment\n\nu2 c 5\nu1 c 2\n");
  ASSERT_EQ(log.num_users(), 2u);
  EXPECT_EQ(log.num_items(), 3u);
  // Chronological order for u1: b(1), c(2), a(3).
  EXPECT_EQ(log.sequences[0], (std::vector<int>{log.encode("b"), log.encode("c"), log.encode("a")}));
  for (int id = 1; id <= 3; ++id) EXPECT_EQ(log.encode(log.decode(id)), id);
  EXPECT_THROW(log.encode("zzz"), DataError);
}

TEST(Data, UntimedInputKeepsOrderAndDuplicates) {
  const InteractionLog log = parse("u a\nu b\nu c\nu a\n");
  EXPECT_EQ(log.sequences[0], (std::vector<int>{1, 2, 3, 1}));
}

TEST(Data, TimestampTiesKeepInputOrder) {
  const InteractionLog log = parse("u x 5\nu y 5\nu z 1\n");
  EXPECT_EQ(log.sequences[0], (std::vector<int>{log.encode("z"), log.encode("x"), log.encode("y")}));
}

TEST(Data, ErrorsCarryLineNumbers) {
  try {
    parse("u a 1\nu b\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("test:2"), std::string::npos);
  }
  EXPECT_THROW(parse("u a b c\n"), DataError);
  EXPECT_THROW(parse("u a notatime\n"), DataError);
  EXPECT_THROW(parse("# only a comment\n"), DataError);
  EXPECT_THROW(load_interactions("/nonexistent/file.txt"), DataError);
}

TEST(Data, ItemMapSidecar) {
  const InteractionLog log = parse("u b\nu a\n");
  std::ostringstream out;
  write_item_map(out, log);
  EXPECT_EQ(out.str(), "b\t1\na\t2\n");
}

TEST(Data, LeaveOneOutSplit) {
  const InteractionLog log = parse("u a\nu b\nu c\nu d\nu e\nv a\nv b\n");
  const SplitDataset s = split_leave_one_out(log);
  ASSERT_EQ(s.users.size(), 1u);
  EXPECT_EQ(s.users[0].train, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(s.users[0].valid, 4);
  EXPECT_EQ(s.users[0].test, 5);
}

TEST(Data, SplitCountIdentity) {
  const SplitDataset s = testing::random_split(50, 40, 1, 12, 5);
  std::size_t total = 0;
  for (const auto& u : s.users) total += u.train.size() + 2;
  std::size_t kept = 0;
  for (const auto& u : s.users) kept += u.full_sequence().size();
  EXPECT_EQ(total, kept);
  for (const auto& u : s.users) EXPECT_GE(u.train.size(), 1u);
}

TEST(Data, PadTruncate) {
  const std::vector<int> ab{1, 2};
  EXPECT_EQ(pad_truncate(ab, 4), (std::vector<int>{0, 0, 1, 2}));
  const std::vector<int> seven{1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(pad_truncate(seven, 4), (std::vector<int>{4, 5, 6, 7}));
  EXPECT_THROW(pad_truncate(ab, 0), std::invalid_argument);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> s(rng() % 12);
    for (auto& v : s) v = 1 + static_cast<int>(rng() % 9);
    const std::size_t n = 1 + rng() % 8;
    const auto p = pad_truncate(s, n);
    const std::size_t keep = std::min(n, s.size());
    EXPECT_TRUE(std::equal(p.end() - static_cast<long>(keep), p.end(), s.end() - static_cast<long>(keep)));
  }
}

TEST(Data, CorruptionReplacesExactCount) {
  const SplitDataset s = testing::random_split(100, 400, 12, 12, 2);
  ASSERT_EQ(s.train_interactions(), 1000u);
  std::mt19937_64 rng(3);
  const Corruption c = corrupt_training(s, 0.25, rng);
  EXPECT_EQ(c.records.size(), 250u);
  std::set<int> held_out;
  for (const auto& u : s.users) held_out.insert({u.valid, u.test});
  std::size_t changed = 0;
  for (std::size_t u = 0; u < s.users.size(); ++u) {
    EXPECT_EQ(c.data.users[u].train.size(), s.users[u].train.size());
    EXPECT_EQ(c.data.users[u].valid, s.users[u].valid);
    EXPECT_EQ(c.data.users[u].test, s.users[u].test);
    for (std::size_t p = 0; p < s.users[u].train.size(); ++p) changed += c.data.users[u].train[p] != s.users[u].train[p];
  }
  EXPECT_EQ(changed, 250u);
  for (const auto& r : c.records) {
    EXPECT_EQ(held_out.count(r.new_item), 0u);
    EXPECT_NE(r.old_item, r.new_item);
    EXPECT_EQ(c.data.users[r.user].train[r.position], r.new_item);
  }
}

TEST(Data, CorruptionEdgeCases) {
  const SplitDataset s = testing::random_split(20, 30, 5, 8, 4);
  std::mt19937_64 rng(5);
  const Corruption none = corrupt_training(s, 0.0, rng);
  EXPECT_TRUE(none.records.empty());
  EXPECT_THROW(corrupt_training(s, 0.3, rng), std::invalid_argument);
  // Two users whose valid/test items cover every item: the global pool is empty.
  const InteractionLog log = parse("u a\nu b\nu c\nv c\nv a\nv b\n");
  const SplitDataset tiny = split_leave_one_out(log);
  EXPECT_THROW(corrupt_training(tiny, 0.5, rng, ReplacementPool::kGlobal, 1.0), DataError);
  EXPECT_THROW(corrupt_training(tiny, 0.5, rng, ReplacementPool::kPerUser, 1.0), DataError);
  const SplitDataset four = split_leave_one_out(parse("u a\nu b\nu c\nv c\nv a\nv b\nw d\nw d\nw d\n"));
  const Corruption per_user = corrupt_training(four, 0.5, rng, ReplacementPool::kPerUser, 1.0);
  ASSERT_EQ(per_user.records.size(), 1u);
  const auto& r = per_user.records[0];
  const auto& owner = four.users[r.user];
  EXPECT_NE(r.new_item, owner.valid);
  EXPECT_NE(r.new_item, owner.test);
  EXPECT_NE(r.new_item, r.old_item);
}

TEST(Data, CorruptionCsv) {
  std::ostringstream out;
  write_corruption_csv(out, {CorruptionRecord{1, 2, 3, 4}});
  EXPECT_EQ(out.str(), "user,position,old_item,new_item\n1,2,3,4\n");
}

TEST(Data, SyntheticIsReproducible) {
  SyntheticSpec spec;
  spec.num_users = 50;
  spec.seed = 11;
  const SyntheticDataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  EXPECT_EQ(a.log.sequences, b.log.sequences);
  EXPECT_EQ(a.noisy, b.noisy);
  spec.noise_ratio = 0.0;
  EXPECT_EQ(generate_synthetic(spec).noisy_count(), 0u);
  spec.noise_ratio = 0.6;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
}

TEST(Data, SyntheticNoiseCountAndPlacement) {
  SyntheticSpec spec;
  spec.num_users = 200;
  spec.noise_ratio = 0.2;
  spec.seed = 3;
  const SyntheticDataset ds = generate_synthetic(spec);
  const std::size_t total = ds.log.num_interactions();
  EXPECT_EQ(ds.noisy_count(), static_cast<std::size_t>(0.2 * static_cast<double>(total)));
  for (const auto& row : ds.noisy) {
    ASSERT_GE(row.size(), 2u);
    EXPECT_FALSE(row[row.size() - 1]);
    EXPECT_FALSE(row[row.size() - 2]);
  }
  // Clean positions at the same seed are untouched by noise.
  spec.noise_ratio = 0.0;
  const SyntheticDataset clean = generate_synthetic(spec);
  for (std::size_t u = 0; u < ds.noisy.size(); ++u)
    for (std::size_t p = 0; p < ds.noisy[u].size(); ++p) {
      if (ds.noisy[u][p]) EXPECT_NE(ds.log.sequences[u][p], clean.log.sequences[u][p]);
      else EXPECT_EQ(ds.log.sequences[u][p], clean.log.sequences[u][p]);
    }
}

TEST(Data, SyntheticTransitionsMatchChain) {
  SyntheticSpec spec;
  spec.num_users = 8000;
  spec.num_items = 40;
  spec.num_clusters = 2;
  spec.successors = 3;
  spec.noise_ratio = 0.0;
  spec.seed = 21;
  const SyntheticDataset ds = generate_synthetic(spec);
  // Empirical transition rows (per cluster) against the generating chain.
  std::map<std::pair<std::size_t, int>, std::map<int, double>> counts;
  std::size_t samples = 0;
  for (std::size_t u = 0; u < ds.log.num_users(); ++u) {
    const auto& s = ds.log.sequences[u];
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      counts[{ds.user_cluster[u], s[t]}][s[t + 1]] += 1.0;
      ++samples;
    }
  }
  ASSERT_GE(samples, 100000u);
  double weighted_tv = 0.0;
  for (const auto& [key, row] : counts) {
    double n = 0.0;
    for (const auto& [_, c] : row) n += c;
    std::map<int, double> diff;
    for (const auto& [item, c] : row) diff[item] += c / n;
    for (const auto& [item, p] : ds.chains[key.first].at(key.second)) diff[item] -= p;
    double tv = 0.0;
    for (const auto& [_, d] : diff) tv += std::abs(d);
    weighted_tv += 0.5 * tv * n / static_cast<double>(samples);
  }
  EXPECT_LT(weighted_tv, 0.05);
}

}  // namespace
}  // namespace recdenoise
