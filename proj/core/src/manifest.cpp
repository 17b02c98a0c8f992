#include "recdenoise/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "recdenoise/data.hpp"

namespace recdenoise {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << value;
  return out.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string file_fingerprint(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

json model_json(const ModelConfig& c) {
  return json{{"num_items", c.num_items},   {"max_len", c.max_len},
              {"dim", c.dim},               {"num_blocks", c.num_blocks},
              {"num_heads", c.num_heads},   {"dropout", c.dropout},
              {"attention_dropout", c.attention_dropout}, {"weight_decay", c.weight_decay},
              {"layer_norm_eps", c.layer_norm_eps}};
}

json train_json(const TrainConfig& c) {
  return json{{"estimator", to_string(c.estimator)},
              {"beta", c.beta},
              {"gamma", c.gamma},
              {"learning_rate", c.learning_rate},
              {"mask_learning_rate", c.mask_learning_rate},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"eval_every", c.eval_every},
              {"seed", c.seed},
              {"jacobian_probes", c.jacobian_probes},
              {"jvp_eps", c.jvp_eps},
              {"patience", c.patience},
              {"mask_init", c.mask_init},
              {"window", c.window}};
}

template <typename T>
void read_field(const json& j, const char* name, T& out) {
  if (!j.contains(name)) throw std::invalid_argument(std::string("config is missing field '") + name + "'");
  try {
    out = j.at(name).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config field '") + name + "' has the wrong type");
  }
}

json manifest_json(const RunManifest& m) {
  json config = m.config_json.empty() ? json::object() : json::parse(m.config_json);
  return json{{"command", m.command},
              {"kind", m.kind},
              {"config", config},
              {"seed", m.seed},
              {"dataset", m.dataset},
              {"dataset_fingerprint", m.dataset_fingerprint},
              {"artifacts", m.artifacts},
              {"started_at", m.started_at},
              {"wall_seconds", m.wall_seconds},
              {"status", m.status}};
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  read_field(j, "num_items", c.num_items);
  read_field(j, "max_len", c.max_len);
  read_field(j, "dim", c.dim);
  read_field(j, "num_blocks", c.num_blocks);
  read_field(j, "num_heads", c.num_heads);
  read_field(j, "dropout", c.dropout);
  read_field(j, "attention_dropout", c.attention_dropout);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "layer_norm_eps", c.layer_norm_eps);
  return c;
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  std::string estimator;
  read_field(j, "estimator", estimator);
  c.estimator = parse_estimator(estimator);
  read_field(j, "beta", c.beta);
  read_field(j, "gamma", c.gamma);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "mask_learning_rate", c.mask_learning_rate);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "max_epochs", c.max_epochs);
  read_field(j, "eval_every", c.eval_every);
  read_field(j, "seed", c.seed);
  read_field(j, "jacobian_probes", c.jacobian_probes);
  read_field(j, "jvp_eps", c.jvp_eps);
  read_field(j, "patience", c.patience);
  read_field(j, "mask_init", c.mask_init);
  read_field(j, "window", c.window);
  return c;
}

std::string model_config_json(const ModelConfig& config) { return model_json(config).dump(); }
std::string train_config_json(const TrainConfig& config) { return train_json(config).dump(); }

std::string manifest_to_json(const RunManifest& m) { return manifest_json(m).dump(2) + "\n"; }

RunManifest manifest_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunManifest m;
  m.command = j.value("command", "");
  m.kind = j.value("kind", "");
  m.config_json = j.value("config", json::object()).dump();
  m.seed = j.value("seed", std::uint64_t{0});
  m.dataset = j.value("dataset", "");
  m.dataset_fingerprint = j.value("dataset_fingerprint", "");
  m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  m.started_at = j.value("started_at", "");
  m.wall_seconds = j.value("wall_seconds", 0.0);
  m.status = j.value("status", "");
  return m;
}

void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
  write_file_atomic(path, manifest_to_json(m));
}

RunManifest load_manifest(const std::filesystem::path& path) { return manifest_from_json(read_file(path)); }

std::string run_kind(const TrainConfig& config) {
  if (config.window > 0) return "window";
  switch (config.estimator) {
    case Estimator::kNone: return config.gamma > 0.0 ? "jacobian-only" : "backbone";
    case Estimator::kArm: return "denoiser-arm";
    case Estimator::kAr: return "denoiser-ar";
  }
  return "unknown";
}

std::string utc_stamp(bool iso) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, iso ? "%Y-%m-%dT%H:%M:%SZ" : "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace recdenoise
