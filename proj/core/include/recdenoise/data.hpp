#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace recdenoise {

/// Malformed or unusable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-user chronological item sequences with a dense item index.
///
/// Internal item ids run 1..num_items() in order of first appearance; 0 is
/// reserved for padding.
struct InteractionLog {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;  // item_names[0] is the padding token
  std::vector<std::vector<int>> sequences;

  std::size_t num_users() const { return sequences.size(); }
  std::size_t num_items() const { return item_names.empty() ? 0 : item_names.size() - 1; }
  std::size_t num_interactions() const;

  /// Throws DataError for unknown ids.
  int encode(const std::string& item) const;
  const std::string& decode(int id) const;

  /// Registers an item name; returns its (possibly existing) id.
  int intern(const std::string& item);

 private:
  std::unordered_map<std::string, int> index_;
};

/// Parses whitespace-separated `user item [timestamp]` lines. Blank lines
/// and lines starting with '#' are skipped. Either every line carries a
/// timestamp or none does; without timestamps input order is chronological.
/// Ties on timestamp keep input order. Repeated interactions are kept.
InteractionLog parse_interactions(std::istream& in, const std::string& source_name = "<stream>");
InteractionLog load_interactions(const std::filesystem::path& path);

/// Writes `original<TAB>internal` per line for every item.
void write_item_map(std::ostream& out, const InteractionLog& log);
void write_interactions(std::ostream& out, const InteractionLog& log);

struct UserSplit {
  std::size_t user = 0;  // index into InteractionLog
  std::vector<int> train;
  int valid = 0;
  int test = 0;

  /// train + valid + test.
  std::vector<int> full_sequence() const;
};

struct SplitDataset {
  std::size_t num_items = 0;
  std::vector<UserSplit> users;

  std::size_t train_interactions() const;
  /// Items of each user's full sequence, indexed like `users`.
  std::vector<std::vector<int>> histories() const;
};

/// Chronological leave-one-out: last item tests, second-to-last validates.
/// Users with fewer than `min_interactions` (at least 3) are dropped.
SplitDataset split_leave_one_out(const InteractionLog& log, std::size_t min_interactions = 3);

/// Keeps the most recent `n` items, left-padding with 0.
std::vector<int> pad_truncate(std::span<const int> seq, std::size_t n);

struct CorruptionRecord {
  std::size_t user = 0;      // index into SplitDataset::users
  std::size_t position = 0;  // index into that user's train sequence
  int old_item = 0;
  int new_item = 0;
};

enum class ReplacementPool {
  /// Items that are nobody's validation or test item.
  kGlobal,
  /// Items other than the owning user's validation and test items.
  kPerUser,
};

struct Corruption {
  SplitDataset data;
  std::vector<CorruptionRecord> records;
};

/// Replaces exactly floor(ratio * train_interactions) training positions,
/// chosen uniformly without replacement, with items drawn uniformly from
/// the replacement pool. Throws DataError if the pool is empty and
/// std::invalid_argument if ratio is outside [0, max_ratio].
Corruption corrupt_training(const SplitDataset& split, double ratio, std::mt19937_64& rng,
                            ReplacementPool pool = ReplacementPool::kGlobal, double max_ratio = 0.25);

void write_corruption_csv(std::ostream& out, const std::vector<CorruptionRecord>& records);

// ---------------------------------------------------------------------------
// Synthetic data with planted noise.

struct SyntheticSpec {
  std::size_t num_users = 2000;
  std::size_t num_items = 500;
  std::size_t min_len = 10;
  std::size_t max_len = 20;
  std::size_t num_clusters = 10;
  std::size_t successors = 3;  // non-zero entries per row of a cluster chain
  /// Probability that the next item follows the chain row of the item two
  /// steps back instead of the last one (0 gives a first-order chain).
  double skip_prob = 0.0;
  double noise_ratio = 0.2;    // rho, in [0, 0.5]
  /// Positional profile of planted noise. Positions at distance k >= 2 from
  /// the end of a sequence are picked with weight (k - 1)^noise_age_power,
  /// so 0 gives uniform placement and larger values put more noise on older
  /// interactions. The last two interactions are never noisy.
  double noise_age_power = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  InteractionLog log;
  /// noisy[u][i] is true when position i of user u was overwritten.
  std::vector<std::vector<bool>> noisy;
  /// Per-cluster item transition rows: chain[c][item] lists
  /// (successor, probability) pairs.
  std::vector<std::unordered_map<int, std::vector<std::pair<int, double>>>> chains;
  std::vector<std::size_t> user_cluster;

  std::size_t noisy_count() const;
};

/// Each user follows one cluster's sparse Markov chain (optionally mixed
/// with lag-2 transitions); then a fraction rho of positions is
/// overwritten with uniformly random items. Items are named
/// "i<k>" and users "u<k>"; internal ids coincide with k.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace recdenoise
