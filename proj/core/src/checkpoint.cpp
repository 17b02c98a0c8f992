#include "recdenoise/checkpoint.hpp"

#include <sstream>

#include "json.hpp"
#include "recdenoise/manifest.hpp"

namespace recdenoise {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "recdenoise-checkpoint";
constexpr int kVersion = 1;

json tensor_json(const Tensor& t, const std::string& name) {
  if (!t.all_finite()) throw CheckpointError("refusing to save non-finite tensor '" + name + "'");
  return json{{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from(const json& j, const std::string& name) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw CheckpointError("tensor '" + name + "' holds non-finite values");
    return t;
  } catch (const json::exception& e) {
    throw CheckpointError("tensor '" + name + "' is malformed: " + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError("tensor '" + name + "': " + e.what());
  }
}

json tensor_list_json(const std::vector<Tensor>& ts, const std::string& prefix) {
  json arr = json::array();
  for (std::size_t i = 0; i < ts.size(); ++i) arr.push_back(tensor_json(ts[i], prefix + std::to_string(i)));
  return arr;
}

std::vector<Tensor> tensor_list_from(const json& arr, const std::string& prefix) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(tensor_from(arr[i], prefix + std::to_string(i)));
  return out;
}

json body_json(const Checkpoint& c) {
  json tensors = json::object();
  c.state.params.for_each([&](const std::string& name, const Tensor& t) { tensors[name] = tensor_json(t, name); });
  const TrainState& s = c.state;
  return json{{"format", kFormat},
              {"version", kVersion},
              {"model_config", json::parse(model_config_json(c.model))},
              {"train_config", json::parse(train_config_json(c.train))},
              {"tensors", tensors},
              {"mask_logits", tensor_list_json(s.phi.logits, "mask_logits.")},
              {"train_state",
               {{"epoch", s.epoch},
                {"best_ndcg", s.best_ndcg},
                {"best_epoch", s.best_epoch},
                {"evals_since_best", s.evals_since_best},
                {"theta_steps", s.theta_steps},
                {"phi_steps", s.phi_steps},
                {"theta_m", tensor_list_json(s.theta_m, "theta_m.")},
                {"theta_v", tensor_list_json(s.theta_v, "theta_v.")},
                {"phi_m", tensor_list_json(s.phi_m, "phi_m.")},
                {"phi_v", tensor_list_json(s.phi_v, "phi_v.")},
                {"rng",
                 {{"batch", s.batch_rng}, {"dropout", s.dropout_rng}, {"mask", s.mask_rng}, {"probe", s.probe_rng}}}}}};
}

}  // namespace

void check_model_config(const ModelConfig& stored, const ModelConfig& expected) {
  auto mismatch = [](const char* field, const auto& a, const auto& b) {
    std::ostringstream msg;
    msg << "checkpoint config mismatch: " << field << " is " << a << " in the checkpoint but " << b << " was expected";
    throw CheckpointError(msg.str());
  };
  if (stored.num_items != expected.num_items) mismatch("num_items", stored.num_items, expected.num_items);
  if (stored.max_len != expected.max_len) mismatch("max_len", stored.max_len, expected.max_len);
  if (stored.dim != expected.dim) mismatch("dim", stored.dim, expected.dim);
  if (stored.num_blocks != expected.num_blocks) mismatch("num_blocks", stored.num_blocks, expected.num_blocks);
  if (stored.num_heads != expected.num_heads) mismatch("num_heads", stored.num_heads, expected.num_heads);
  if (stored.dropout != expected.dropout) mismatch("dropout", stored.dropout, expected.dropout);
  if (stored.attention_dropout != expected.attention_dropout)
    mismatch("attention_dropout", stored.attention_dropout, expected.attention_dropout);
  if (stored.weight_decay != expected.weight_decay) mismatch("weight_decay", stored.weight_decay, expected.weight_decay);
  if (stored.layer_norm_eps != expected.layer_norm_eps)
    mismatch("layer_norm_eps", stored.layer_norm_eps, expected.layer_norm_eps);
}

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  json j = body_json(ckpt);
  const std::string body = j.dump();
  j["checksum"] = hex64(fnv1a64(body));
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kFormat) throw CheckpointError("not a recdenoise checkpoint");
  if (!j.contains("checksum") || !j["checksum"].is_string()) throw CheckpointError("checkpoint has no checksum");
  const std::string stored = j["checksum"].get<std::string>();
  j.erase("checksum");
  if (hex64(fnv1a64(j.dump())) != stored) throw CheckpointError("checkpoint checksum mismatch (file corrupted?)");
  if (j.value("version", 0) != kVersion) throw CheckpointError("unsupported checkpoint version");

  Checkpoint c;
  try {
    c.model = model_config_from_json(j.at("model_config").dump());
    c.train = train_config_from_json(j.at("train_config").dump());
    c.model.validate();
    c.train.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }

  std::mt19937_64 unused;
  c.state.params = ModelParams::init(c.model, unused);
  const json& tensors = j.at("tensors");
  c.state.params.for_each([&](const std::string& name, Tensor& t) {
    if (!tensors.contains(name)) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    Tensor loaded = tensor_from(tensors.at(name), name);
    if (loaded.shape() != t.shape()) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_to_string(loaded.shape()) + ", expected " +
                            shape_to_string(t.shape()));
    }
    t = std::move(loaded);
  });
  if (tensors.size() != c.state.params.tensor_count()) throw CheckpointError("checkpoint has unexpected tensors");

  c.state.phi.logits = tensor_list_from(j.at("mask_logits"), "mask_logits.");
  if (c.state.phi.num_blocks() != c.model.num_blocks) throw CheckpointError("mask_logits: wrong number of blocks");
  for (const auto& t : c.state.phi.logits) {
    if (t.shape() != Shape{c.model.max_len, c.model.max_len}) throw CheckpointError("mask_logits: wrong shape");
  }

  try {
    const json& s = j.at("train_state");
    c.state.epoch = s.at("epoch").get<std::size_t>();
    c.state.best_ndcg = s.at("best_ndcg").get<double>();
    c.state.best_epoch = s.at("best_epoch").get<std::size_t>();
    c.state.evals_since_best = s.at("evals_since_best").get<std::size_t>();
    c.state.theta_steps = s.at("theta_steps").get<std::uint64_t>();
    c.state.phi_steps = s.at("phi_steps").get<std::uint64_t>();
    c.state.theta_m = tensor_list_from(s.at("theta_m"), "theta_m.");
    c.state.theta_v = tensor_list_from(s.at("theta_v"), "theta_v.");
    c.state.phi_m = tensor_list_from(s.at("phi_m"), "phi_m.");
    c.state.phi_v = tensor_list_from(s.at("phi_v"), "phi_v.");
    const json& rng = s.at("rng");
    c.state.batch_rng = rng.at("batch").get<std::string>();
    c.state.dropout_rng = rng.at("dropout").get<std::string>();
    c.state.mask_rng = rng.at("mask").get<std::string>();
    c.state.probe_rng = rng.at("probe").get<std::string>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint train_state is malformed: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, checkpoint_to_string(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
  return checkpoint_from_string(text);
}

}  // namespace recdenoise
