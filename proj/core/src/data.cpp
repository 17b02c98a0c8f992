#include "recdenoise/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <tuple>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace recdenoise {

std::size_t InteractionLog::num_interactions() const {
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size();
  return total;
}

int InteractionLog::encode(const std::string& item) const {
  auto it = index_.find(item);
  if (it == index_.end()) throw DataError("unknown item '" + item + "'");
  return it->second;
}

const std::string& InteractionLog::decode(int id) const {
  if (id <= 0 || static_cast<std::size_t>(id) >= item_names.size()) {
    throw DataError("item id " + std::to_string(id) + " out of range");
  }
  return item_names[static_cast<std::size_t>(id)];
}

int InteractionLog::intern(const std::string& item) {
  if (item_names.empty()) item_names.emplace_back("<pad>");
  auto [it, inserted] = index_.try_emplace(item, static_cast<int>(item_names.size()));
  if (inserted) item_names.push_back(item);
  return it->second;
}

InteractionLog parse_interactions(std::istream& in, const std::string& source_name) {
  struct Record {
    double time;
    std::size_t order;
    int item;
  };
  InteractionLog log;
  log.item_names.emplace_back("<pad>");
  std::unordered_map<std::string, std::size_t> users;
  std::vector<std::vector<Record>> per_user;
  std::optional<bool> timed;

  std::string line;
  std::size_t line_no = 0, order = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok.size() != 2 && tok.size() != 3) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": expected 'user item [timestamp]', got " +
                      std::to_string(tok.size()) + " fields");
    }
    const bool has_time = tok.size() == 3;
    if (timed && *timed != has_time) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": timestamps must be given on every line or none");
    }
    timed = has_time;
    double time = 0.0;
    if (has_time) {
      const char* first = tok[2].data();
      const char* last = first + tok[2].size();
      auto [ptr, ec] = std::from_chars(first, last, time);
      if (ec != std::errc() || ptr != last || !std::isfinite(time)) {
        throw DataError(source_name + ":" + std::to_string(line_no) + ": bad timestamp '" + tok[2] + "'");
      }
    }
    auto [uit, inserted] = users.try_emplace(tok[0], per_user.size());
    if (inserted) {
      per_user.emplace_back();
      log.user_names.push_back(tok[0]);
    }
    per_user[uit->second].push_back(Record{time, order++, log.intern(tok[1])});
  }
  if (order == 0) throw DataError(source_name + ": no interactions");

  for (auto& records : per_user) {
    std::stable_sort(records.begin(), records.end(), [](const Record& a, const Record& b) { return a.time < b.time; });
    std::vector<int> seq;
    seq.reserve(records.size());
    for (const auto& r : records) seq.push_back(r.item);
    log.sequences.push_back(std::move(seq));
  }
  return log;
}

InteractionLog load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_interactions(in, path.string());
}

void write_item_map(std::ostream& out, const InteractionLog& log) {
  for (std::size_t i = 1; i < log.item_names.size(); ++i) out << log.item_names[i] << '\t' << i << '\n';
}

void write_interactions(std::ostream& out, const InteractionLog& log) {
  for (std::size_t u = 0; u < log.num_users(); ++u) {
    for (std::size_t t = 0; t < log.sequences[u].size(); ++t) {
      out << log.user_names[u] << ' ' << log.decode(log.sequences[u][t]) << ' ' << t << '\n';
    }
  }
}

std::vector<int> UserSplit::full_sequence() const {
  std::vector<int> s = train;
  s.push_back(valid);
  s.push_back(test);
  return s;
}

std::size_t SplitDataset::train_interactions() const {
  std::size_t total = 0;
  for (const auto& u : users) total += u.train.size();
  return total;
}

std::vector<std::vector<int>> SplitDataset::histories() const {
  std::vector<std::vector<int>> out;
  out.reserve(users.size());
  for (const auto& u : users) out.push_back(u.full_sequence());
  return out;
}

SplitDataset split_leave_one_out(const InteractionLog& log, std::size_t min_interactions) {
  min_interactions = std::max<std::size_t>(min_interactions, 3);
  SplitDataset split;
  split.num_items = log.num_items();
  for (std::size_t u = 0; u < log.num_users(); ++u) {
    const auto& seq = log.sequences[u];
    if (seq.size() < min_interactions) continue;
    UserSplit s;
    s.user = u;
    s.train.assign(seq.begin(), seq.end() - 2);
    s.valid = seq[seq.size() - 2];
    s.test = seq.back();
    split.users.push_back(std::move(s));
  }
  return split;
}

std::vector<int> pad_truncate(std::span<const int> seq, std::size_t n) {
  if (n < 1) throw std::invalid_argument("pad_truncate: n must be >= 1");
  std::vector<int> out(n, 0);
  const std::size_t keep = std::min(n, seq.size());
  std::copy(seq.end() - static_cast<std::ptrdiff_t>(keep), seq.end(), out.end() - static_cast<std::ptrdiff_t>(keep));
  return out;
}

Corruption corrupt_training(const SplitDataset& split, double ratio, std::mt19937_64& rng, ReplacementPool pool,
                            double max_ratio) {
  if (!(ratio >= 0.0 && ratio <= max_ratio)) {
    throw std::invalid_argument("corrupt_training: ratio " + std::to_string(ratio) + " outside [0, " +
                                std::to_string(max_ratio) + "]");
  }
  Corruption out{split, {}};
  const std::size_t total = split.train_interactions();
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total) + 1e-9));
  if (count == 0) return out;

  std::vector<int> global_pool;
  if (pool == ReplacementPool::kGlobal) {
    std::vector<bool> held_out(split.num_items + 1, false);
    for (const auto& u : split.users) held_out[u.valid] = held_out[u.test] = true;
    for (std::size_t i = 1; i <= split.num_items; ++i)
      if (!held_out[i]) global_pool.push_back(static_cast<int>(i));
    if (global_pool.empty()) throw DataError("corrupt_training: every item is some user's validation or test item");
  } else if (split.num_items < 4) {
    throw DataError("corrupt_training: need at least 4 items for per-user replacement");
  }

  // Flat position index -> (user, position).
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  positions.reserve(total);
  for (std::size_t u = 0; u < split.users.size(); ++u)
    for (std::size_t p = 0; p < split.users[u].train.size(); ++p) positions.emplace_back(u, p);
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  chosen.reserve(count);
  std::sample(positions.begin(), positions.end(), std::back_inserter(chosen), count, rng);

  for (const auto& [u, p] : chosen) {
    UserSplit& user = out.data.users[u];
    const int old_item = user.train[p];
    int replacement = 0;
    if (pool == ReplacementPool::kGlobal) {
      std::uniform_int_distribution<std::size_t> pick(0, global_pool.size() - 1);
      replacement = global_pool[pick(rng)];
      if (global_pool.size() > 1)
        while (replacement == old_item) replacement = global_pool[pick(rng)];
    } else {
      std::uniform_int_distribution<int> pick(1, static_cast<int>(split.num_items));
      do {
        replacement = pick(rng);
      } while (replacement == user.valid || replacement == user.test || replacement == old_item);
    }
    user.train[p] = replacement;
    out.records.push_back(CorruptionRecord{u, p, old_item, replacement});
  }
  std::sort(out.records.begin(), out.records.end(), [](const CorruptionRecord& a, const CorruptionRecord& b) {
    return std::tie(a.user, a.position) < std::tie(b.user, b.position);
  });
  return out;
}

void write_corruption_csv(std::ostream& out, const std::vector<CorruptionRecord>& records) {
  out << "user,position,old_item,new_item\n";
  for (const auto& r : records) out << r.user << ',' << r.position << ',' << r.old_item << ',' << r.new_item << '\n';
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("SyntheticSpec." + what); };
  if (num_users < 1) fail("num_users must be >= 1");
  if (num_clusters < 1 || num_items < num_clusters * 2) fail("num_items must be at least 2 per cluster");
  if (successors < 1 || successors > num_items / num_clusters) fail("successors must lie in [1, items per cluster]");
  if (min_len < 3 || max_len < min_len) fail("lengths must satisfy 3 <= min_len <= max_len");
  if (!(noise_ratio >= 0.0 && noise_ratio <= 0.5)) fail("noise_ratio must lie in [0, 0.5]");
  if (!(noise_age_power >= 0.0)) fail("noise_age_power must be >= 0");
  if (!(skip_prob >= 0.0 && skip_prob <= 1.0)) fail("skip_prob must lie in [0, 1]");
}

std::size_t SyntheticDataset::noisy_count() const {
  std::size_t c = 0;
  for (const auto& row : noisy) c += static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
  return c;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticDataset ds;
  for (std::size_t i = 1; i <= spec.num_items; ++i) ds.log.intern("i" + std::to_string(i));

  // Contiguous item ranges per cluster.
  const std::size_t per_cluster = spec.num_items / spec.num_clusters;
  auto cluster_items = [&](std::size_t c) {
    const std::size_t begin = c * per_cluster + 1;
    const std::size_t end = c + 1 == spec.num_clusters ? spec.num_items + 1 : begin + per_cluster;
    std::vector<int> items(end - begin);
    std::iota(items.begin(), items.end(), static_cast<int>(begin));
    return items;
  };

  std::exponential_distribution<double> expo(1.0);
  ds.chains.resize(spec.num_clusters);
  for (std::size_t c = 0; c < spec.num_clusters; ++c) {
    const std::vector<int> items = cluster_items(c);
    for (int item : items) {
      std::vector<int> succ;
      std::sample(items.begin(), items.end(), std::back_inserter(succ), spec.successors, rng);
      std::vector<std::pair<int, double>> row;
      double total = 0.0;
      for (int s : succ) {
        const double w = expo(rng);  // Dirichlet(1) weights
        row.emplace_back(s, w);
        total += w;
      }
      for (auto& [s, w] : row) w /= total;
      ds.chains[c][item] = std::move(row);
    }
  }

  std::uniform_int_distribution<std::size_t> pick_cluster(0, spec.num_clusters - 1);
  std::uniform_int_distribution<std::size_t> pick_len(spec.min_len, spec.max_len);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    const std::size_t c = pick_cluster(rng);
    const std::vector<int> items = cluster_items(c);
    std::uniform_int_distribution<std::size_t> pick_start(0, items.size() - 1);
    const std::size_t len = pick_len(rng);
    std::vector<int> seq{items[pick_start(rng)]};
    while (seq.size() < len) {
      int from = seq.back();
      if (spec.skip_prob > 0.0 && seq.size() >= 2 && unif(rng) < spec.skip_prob) from = seq[seq.size() - 2];
      const auto& row = ds.chains[c].at(from);
      double r = unif(rng), acc = 0.0;
      int next = row.back().first;
      for (const auto& [s, p] : row) {
        acc += p;
        if (r < acc) {
          next = s;
          break;
        }
      }
      seq.push_back(next);
    }
    ds.user_cluster.push_back(c);
    ds.log.user_names.push_back("u" + std::to_string(u + 1));
    ds.log.sequences.push_back(std::move(seq));
    ds.noisy.emplace_back(len, false);
  }

  // Weighted sampling without replacement (Efraimidis-Spirakis keys).
  std::size_t total_positions = 0;
  struct Candidate {
    double key;
    std::size_t user, pos;
  };
  std::vector<Candidate> candidates;
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    const std::size_t len = ds.log.sequences[u].size();
    total_positions += len;
    for (std::size_t p = 0; p + 2 < len; ++p) {
      const double age = static_cast<double>(len - 1 - p);  // >= 2
      const double weight = std::pow(age - 1.0, spec.noise_age_power);
      candidates.push_back(Candidate{std::log(unif(rng) + 1e-300) / weight, u, p});
    }
  }
  const auto planted = std::min(candidates.size(),
                                static_cast<std::size_t>(std::floor(spec.noise_ratio * static_cast<double>(total_positions))));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(planted), candidates.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return std::tie(b.key, a.user, a.pos) < std::tie(a.key, b.user, b.pos);
                    });
  std::uniform_int_distribution<int> pick_item(1, static_cast<int>(spec.num_items));
  for (std::size_t i = 0; i < planted; ++i) {
    auto& slot = ds.log.sequences[candidates[i].user][candidates[i].pos];
    int replacement = pick_item(rng);
    while (replacement == slot) replacement = pick_item(rng);
    slot = replacement;
    ds.noisy[candidates[i].user][candidates[i].pos] = true;
  }
  return ds;
}

}  // namespace recdenoise
