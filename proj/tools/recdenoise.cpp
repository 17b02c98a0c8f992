#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "recdenoise/checkpoint.hpp"
#include "recdenoise/data.hpp"
#include "recdenoise/denoiser.hpp"
#include "recdenoise/eval.hpp"
#include "recdenoise/manifest.hpp"
#include "recdenoise/sweep.hpp"
#include "recdenoise/train.hpp"

namespace fs = std::filesystem;
using namespace recdenoise;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void add_synth_flags(CLI::App* app, SyntheticSpec& s) {
  app->add_option("--users", s.num_users, "Number of users")->capture_default_str();
  app->add_option("--items", s.num_items, "Number of items")->capture_default_str();
  app->add_option("--min-seq-len", s.min_len, "Shortest sequence")->capture_default_str();
  app->add_option("--max-seq-len", s.max_len, "Longest sequence")->capture_default_str();
  app->add_option("--clusters", s.num_clusters, "Number of item clusters")->capture_default_str();
  app->add_option("--successors", s.successors, "Successors per chain row")->capture_default_str();
  app->add_option("--skip-prob", s.skip_prob, "Probability of a lag-2 transition")->capture_default_str();
  app->add_option("--noise-ratio", s.noise_ratio, "Fraction of planted noisy interactions")->capture_default_str();
  app->add_option("--noise-age-power", s.noise_age_power, "Exponent of the noise position profile")->capture_default_str();
}

void add_model_flags(CLI::App* app, ModelConfig& m) {
  app->add_option("--max-len", m.max_len, "Sequence length n")->capture_default_str();
  app->add_option("--dim", m.dim, "Hidden dimension d")->capture_default_str();
  app->add_option("--blocks", m.num_blocks, "Transformer blocks L")->capture_default_str();
  app->add_option("--heads", m.num_heads, "Attention heads H")->capture_default_str();
  app->add_option("--dropout", m.dropout, "Dropout rate")->capture_default_str();
  app->add_option("--weight-decay", m.weight_decay, "L2 weight on embedding tables")->capture_default_str();
}

void add_train_flags(CLI::App* app, TrainConfig& t, std::string& estimator) {
  app->add_option("--estimator", estimator, "Mask estimator: arm, ar or none")->capture_default_str();
  app->add_option("--beta", t.beta, "L0 sparsity weight")->capture_default_str();
  app->add_option("--gamma", t.gamma, "Jacobian regularization weight")->capture_default_str();
  app->add_option("--lr", t.learning_rate, "Model learning rate")->capture_default_str();
  app->add_option("--mask-lr", t.mask_learning_rate, "Mask logit learning rate")->capture_default_str();
  app->add_option("--batch-size", t.batch_size, "Sequences per batch")->capture_default_str();
  app->add_option("--epochs", t.max_epochs, "Maximum epochs")->capture_default_str();
  app->add_option("--eval-every", t.eval_every, "Epochs between validation passes")->capture_default_str();
  app->add_option("--probes", t.jacobian_probes, "Jacobian probes per block per batch")->capture_default_str();
  app->add_option("--jvp-eps", t.jvp_eps, "Finite-difference step of the JVP")->capture_default_str();
  app->add_option("--patience", t.patience, "Validation passes without improvement before stopping")
      ->capture_default_str();
  app->add_option("--mask-init", t.mask_init, "Initial mask logit")->capture_default_str();
  app->add_option("--window", t.window, "Fixed causal window width (estimator none only)")->capture_default_str();
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string piece;
  while (std::getline(in, piece, ',')) {
    std::istringstream one(piece);
    T value{};
    if (!(one >> value) || !(one >> std::ws).eof()) throw UsageError(std::string(flag) + ": cannot parse '" + piece + "'");
    out.push_back(value);
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

ReplacementPool parse_pool(const std::string& name) {
  if (name == "per-user") return ReplacementPool::kPerUser;
  if (name == "global") return ReplacementPool::kGlobal;
  throw UsageError("--pool must be per-user or global");
}

fs::path run_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("RECDENOISE_RUN_ROOT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

fs::path fresh_run_dir(const fs::path& root, const std::string& command) {
  const std::string stem = utc_stamp(false) + "-" + command;
  fs::path dir = root / stem;
  for (int k = 2; fs::exists(dir); ++k) dir = root / (stem + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

// Owns the run directory and its single manifest.
class Run {
 public:
  Run(const fs::path& dir, const std::string& command) : dir_(dir), start_(std::chrono::steady_clock::now()) {
    manifest_.command = command;
    manifest_.started_at = utc_stamp(true);
    manifest_.status = "running";
    manifest_.config_json = "{}";
  }

  RunManifest& manifest() { return manifest_; }
  const fs::path& dir() const { return dir_; }
  fs::path artifact(const std::string& name, const fs::path& relative) {
    manifest_.artifacts[name] = relative.generic_string();
    return dir_ / relative;
  }
  void save() {
    manifest_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    save_manifest(dir_ / "manifest.json", manifest_);
  }
  void finish(const std::string& status) {
    manifest_.status = status;
    save();
  }

 private:
  fs::path dir_;
  RunManifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

std::string run_config_json(const ModelConfig& m, const TrainConfig& t) {
  json j;
  j["model"] = json::parse(model_config_json(m));
  j["train"] = json::parse(train_config_json(t));
  return j.dump();
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

template <typename Fn>
std::string render(Fn&& fn) {
  std::ostringstream out;
  fn(out);
  return out.str();
}

void export_masks(const MaskParams& phi, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t l = 0; l < phi.num_blocks(); ++l) {
    write_text(dir / ("block" + std::to_string(l) + ".csv"), render([&](std::ostream& o) { write_mask_csv(o, phi, l); }));
  }
}

std::string report_header() { return "split,top_n,num_negatives,seed,users,hit10,ndcg10,mask_density,retained"; }

std::string report_line(const std::string& split, const EvalReport& r, const std::vector<Tensor>& masks) {
  std::ostringstream out;
  out << std::setprecision(10) << split << ',' << r.top_n << ',' << r.num_negatives << ',' << r.seed << ','
      << r.users.size() << ',' << r.hit << ',' << r.ndcg << ',' << (masks.empty() ? 1.0 : mask_density(masks)) << ','
      << (masks.empty() ? std::string() : std::to_string(retained_count(masks)));
  return out.str();
}

// Noisy positions as `user,position` rows (user name, chronological index).
std::string noise_csv(const SyntheticDataset& ds) {
  std::ostringstream out;
  out << "user,position\n";
  for (std::size_t u = 0; u < ds.noisy.size(); ++u)
    for (std::size_t p = 0; p < ds.noisy[u].size(); ++p)
      if (ds.noisy[u][p]) out << ds.log.user_names[u] << ',' << p << '\n';
  return out.str();
}

std::vector<std::vector<bool>> read_noise_flags(const fs::path& path, const InteractionLog& log, const SplitDataset& split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open noise file " + path.string());
  std::map<std::string, std::size_t> user_index;
  for (std::size_t u = 0; u < log.num_users(); ++u) user_index[log.user_names[u]] = u;
  std::vector<std::vector<bool>> flags(log.num_users());
  for (std::size_t u = 0; u < log.num_users(); ++u) flags[u].assign(log.sequences[u].size(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto comma = line.find(',');
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (comma == std::string::npos) throw DataError(where + ": expected user,position");
    const auto it = user_index.find(line.substr(0, comma));
    if (it == user_index.end()) throw DataError(where + ": unknown user");
    std::size_t pos = 0;
    try {
      pos = std::stoul(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError(where + ": bad position");
    }
    if (pos >= flags[it->second].size()) throw DataError(where + ": position past the end of the sequence");
    flags[it->second][pos] = true;
  }
  std::vector<std::vector<bool>> out;
  for (const auto& user : split.users) {
    const auto& f = flags[user.user];
    out.emplace_back(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(user.train.size() + 1));
  }
  return out;
}

struct Loaded {
  InteractionLog log;
  SplitDataset split;
  std::string fingerprint;
};

Loaded load_dataset(const fs::path& path, std::size_t min_interactions) {
  if (!fs::exists(path)) throw DataError("dataset not found: " + path.string());
  Loaded d;
  d.log = load_interactions(path);
  d.split = split_leave_one_out(d.log, min_interactions);
  if (d.split.users.empty()) throw DataError("no user has at least " + std::to_string(min_interactions) + " interactions");
  d.fingerprint = file_fingerprint(path);
  return d;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::size_t min_interactions = 3;
  ModelConfig model;
  TrainConfig train;
  std::string estimator = "arm";
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 0;
};

int cmd_train(TrainArgs& a, const fs::path& root) {
  a.train.estimator = parse_estimator(a.estimator);
  a.train.seed = a.seed;
  a.model.num_items = 1;  // placeholder until the data is read
  a.model.validate();
  a.train.validate();

  Run run(fresh_run_dir(root, "train"), "train");
  run.manifest().seed = a.seed;
  run.manifest().kind = run_kind(a.train);
  run.manifest().dataset = a.data;
  try {
    Loaded d = load_dataset(a.data, a.min_interactions);
    a.model.num_items = d.split.num_items;
    run.manifest().dataset_fingerprint = d.fingerprint;
    run.manifest().config_json = run_config_json(a.model, a.train);
    run.save();
    write_text(run.artifact("item_map", "item_map.tsv"), render([&](std::ostream& o) { write_item_map(o, d.log); }));

    Trainer trainer(a.model, a.train, d.split);
    std::ostringstream log;
    log << log_header() << '\n';
    const fs::path log_path = run.artifact("log", "log.csv");
    trainer.fit([&](const LogRow& row) {
      log << log_line(row) << '\n';
      write_text(log_path, log.str());
      std::cerr << "epoch " << row.stats.epoch << " loss " << row.stats.loss << " val_ndcg10 " << row.val_ndcg << '\n';
    });
    write_text(log_path, log.str());
    save_checkpoint(run.artifact("checkpoint", "checkpoint.json"), Checkpoint{a.model, a.train, trainer.state()});
    export_masks(trainer.mask_params(), run.artifact("masks", "masks"));

    const auto masks = trainer.eval_masks();
    std::ostringstream metrics;
    metrics << report_header() << '\n';
    metrics << report_line("valid", trainer.evaluate(EvalSplit::kValid, a.eval_seed), masks) << '\n';
    metrics << report_line("test", trainer.evaluate(EvalSplit::kTest, a.eval_seed), masks) << '\n';
    write_text(run.artifact("metrics", "metrics.csv"), metrics.str());
    std::cout << metrics.str();
    std::cout << "run directory: " << run.dir().string() << '\n';
    run.finish("ok");
  } catch (...) {
    run.finish("failed");
    throw;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string noise;
  std::size_t min_interactions = 3;
  std::size_t negatives = 100;
  std::size_t top_n = 10;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, const fs::path& root) {
  if (a.split != "test" && a.split != "valid") throw UsageError("--split must be test or valid");
  Run run(fresh_run_dir(root, "eval"), "eval");
  run.manifest().seed = a.seed;
  run.manifest().dataset = a.data;
  try {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    Loaded d = load_dataset(a.data, a.min_interactions);
    ModelConfig expected = ckpt.model;
    expected.num_items = d.split.num_items;
    check_model_config(ckpt.model, expected);
    run.manifest().kind = run_kind(ckpt.train);
    run.manifest().dataset_fingerprint = d.fingerprint;
    run.manifest().config_json = run_config_json(ckpt.model, ckpt.train);
    run.manifest().artifacts["checkpoint"] = fs::absolute(a.checkpoint).generic_string();
    run.save();

    Trainer trainer(ckpt.model, ckpt.train, d.split, ckpt.state);
    EvalOptions opt;
    opt.split = a.split == "test" ? EvalSplit::kTest : EvalSplit::kValid;
    opt.seed = a.seed;
    opt.num_negatives = a.negatives;
    opt.top_n = a.top_n;
    const auto masks = trainer.eval_masks();
    const EvalReport report = evaluate(trainer.params(), ckpt.model, masks, d.split, opt);
    std::ostringstream out;
    out << report_header() << '\n' << report_line(a.split, report, masks) << '\n';
    write_text(run.artifact("report", "report.csv"), out.str());
    std::cout << out.str();

    if (!a.noise.empty()) {
      const auto flags = read_noise_flags(a.noise, d.log, d.split);
      const NoiseRecovery rec = mask_noise_recovery(trainer.mask_params(), flags);
      std::ostringstream r;
      r << std::setprecision(10) << "applicable,clean_mean,noisy_mean,difference,p_value,clean_count,noisy_count\n"
        << (rec.applicable ? "true" : "false") << ',' << rec.clean_mean << ',' << rec.noisy_mean << ','
        << rec.difference << ',' << rec.p_value << ',' << rec.clean_count << ',' << rec.noisy_count << '\n';
      write_text(run.artifact("noise_recovery", "noise_recovery.csv"), r.str());
      std::cout << r.str();
    }
    run.finish("ok");
  } catch (...) {
    run.finish("failed");
    throw;
  }
  return kExitOk;
}

struct SweepArgs {
  std::string data;
  bool synthetic = false;
  SyntheticSpec synth;
  std::size_t min_interactions = 3;
  ModelConfig model;
  TrainConfig train;
  std::string ratios = "0,0.05,0.1,0.15,0.2,0.25";
  std::string variants = "full,denoiser-arm,denoiser-ar,window";
  std::string seeds = "0,1,2,3,4";
  std::size_t window = 3;
  bool allow_any_ratio = false;
  std::string pool = "per-user";
  std::string resume;
};

int cmd_noise_sweep(SweepArgs& a, const fs::path& root) {
  SweepSpec spec;
  spec.ratios = parse_list<double>(a.ratios, "--ratios");
  spec.seeds = parse_list<std::uint64_t>(a.seeds, "--seeds");
  spec.variants.clear();
  for (const auto& name : parse_list<std::string>(a.variants, "--variants")) spec.variants.push_back(parse_variant(name));
  spec.window = a.window;
  spec.allow_any_ratio = a.allow_any_ratio;
  spec.validate();
  const ReplacementPool pool = parse_pool(a.pool);
  if (a.synthetic == !a.data.empty()) throw UsageError("give exactly one of --data and --synthetic");
  a.model.num_items = 1;
  a.model.validate();
  for (Variant v : spec.variants) configure_variant(v, a.train, spec.window).validate();
  if (a.synthetic) a.synth.validate();

  const bool resuming = !a.resume.empty();
  const fs::path dir = resuming ? fs::path(a.resume) : fresh_run_dir(root, "noise-sweep");
  if (resuming && !fs::exists(dir / "manifest.json")) throw UsageError("--resume: no manifest.json in " + dir.string());
  Run run(dir, "noise-sweep");
  run.manifest().kind = "noise-sweep";
  run.manifest().seed = a.train.seed;
  try {
    DatasetFactory factory;
    if (a.synthetic) {
      // Planted noise: the clean chains depend only on the seed and the
      // noisy positions of a lower ratio are a subset of a higher one.
      const SyntheticSpec base = a.synth;
      factory = [base, min = a.min_interactions](double ratio, std::uint64_t seed) {
        SyntheticSpec s = base;
        s.noise_ratio = ratio;
        s.seed = seed;
        return split_leave_one_out(generate_synthetic(s).log, min);
      };
      std::ostringstream desc;
      desc << "synthetic:users=" << a.synth.num_users << ",items=" << a.synth.num_items;
      run.manifest().dataset = desc.str();
      run.manifest().dataset_fingerprint = hex64(fnv1a64(desc.str()));
      a.model.num_items = a.synth.num_items;
    } else {
      Loaded d = load_dataset(a.data, a.min_interactions);
      run.manifest().dataset = a.data;
      run.manifest().dataset_fingerprint = d.fingerprint;
      a.model.num_items = d.split.num_items;
      factory = corruption_factory(d.split, pool, spec.allow_any_ratio ? 1.0 : 0.25);
    }
    json config = json::parse(run_config_json(a.model, a.train));
    config["ratios"] = spec.ratios;
    config["seeds"] = spec.seeds;
    config["variants"] = parse_list<std::string>(a.variants, "--variants");
    config["window"] = spec.window;
    config["pool"] = a.pool;
    run.manifest().config_json = config.dump();

    if (resuming) {
      const RunManifest previous = load_manifest(dir / "manifest.json");
      if (previous.dataset_fingerprint != run.manifest().dataset_fingerprint) {
        throw UsageError("--resume: dataset differs from the one recorded in the manifest");
      }
    }
    const fs::path cells_path = run.artifact("cells", "sweep.csv");
    std::vector<SweepCell> completed;
    if (resuming && fs::exists(cells_path)) {
      std::ifstream in(cells_path);
      completed = read_sweep_csv(in);
    }
    run.save();

    std::vector<SweepCell> done = completed;
    const auto cells = noise_sweep(factory, a.model, a.train, spec, completed, [&](const SweepCell& c) {
      done.push_back(c);
      write_text(cells_path, render([&](std::ostream& o) { write_sweep_csv(o, done); }));
      std::cerr << to_string(c.variant) << " ratio " << c.ratio << " seed " << c.seed << " hit10 " << c.hit << '\n';
    });
    write_text(cells_path, render([&](std::ostream& o) { write_sweep_csv(o, cells); }));
    const std::string summary = render([&](std::ostream& o) { write_summary_csv(o, summarize(cells)); });
    write_text(run.artifact("summary", "summary.csv"), summary);
    std::cout << summary << "run directory: " << run.dir().string() << '\n';
    run.finish("ok");
  } catch (...) {
    run.finish("failed");
    throw;
  }
  return kExitOk;
}

int cmd_export_masks(const std::string& checkpoint, const std::string& out_dir, const fs::path& root) {
  Run run(out_dir.empty() ? fresh_run_dir(root, "export-masks") : fs::path(out_dir), "export-masks");
  if (!out_dir.empty()) fs::create_directories(run.dir());
  try {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    run.manifest().kind = run_kind(ckpt.train);
    run.manifest().seed = ckpt.train.seed;
    run.manifest().config_json = run_config_json(ckpt.model, ckpt.train);
    run.manifest().artifacts["checkpoint"] = fs::absolute(checkpoint).generic_string();
    export_masks(ckpt.state.phi, run.artifact("masks", "masks"));
    std::cout << "wrote " << ckpt.state.phi.num_blocks() << " mask files to " << (run.dir() / "masks").string() << '\n';
    run.finish("ok");
  } catch (...) {
    run.finish("failed");
    throw;
  }
  return kExitOk;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out, const std::string& noise_out) {
  spec.validate();
  const SyntheticDataset ds = generate_synthetic(spec);
  write_text(out, render([&](std::ostream& o) { write_interactions(o, ds.log); }));
  if (!noise_out.empty()) write_text(noise_out, noise_csv(ds));
  std::cout << "wrote " << ds.log.num_users() << " users, " << ds.log.num_interactions() << " interactions ("
            << ds.noisy_count() << " noisy) to " << out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential recommender with denoised attention masks"};
  app.require_subcommand(1);
  std::string root_flag;
  app.add_option("--run-root", root_flag, "Directory for run outputs (default $RECDENOISE_RUN_ROOT or runs/)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint, log and masks");
  train_cmd->add_option("--data", train.data, "Interaction file: user item [timestamp] per line")->required();
  train_cmd->add_option("--min-interactions", train.min_interactions, "Drop users with fewer interactions")
      ->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "Run seed")->capture_default_str();
  train_cmd->add_option("--eval-seed", train.eval_seed, "Seed of the evaluation negatives")->capture_default_str();
  add_model_flags(train_cmd, train.model);
  add_train_flags(train_cmd, train.train, train.estimator);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with sampled negatives");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "Interaction file used for training")->required();
  eval_cmd->add_option("--split", eval.split, "test or valid")->capture_default_str();
  eval_cmd->add_option("--negatives", eval.negatives, "Sampled negatives per user")->capture_default_str();
  eval_cmd->add_option("--top-n", eval.top_n, "Cutoff N")->capture_default_str();
  eval_cmd->add_option("--seed", eval.seed, "Seed of the evaluation negatives")->capture_default_str();
  eval_cmd->add_option("--min-interactions", eval.min_interactions, "Drop users with fewer interactions")
      ->capture_default_str();
  eval_cmd->add_option("--noise", eval.noise, "Noisy-position CSV from `synth --noise-out` for the recovery diagnostic");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("noise-sweep", "Train every variant across corruption ratios and seeds");
  sweep_cmd->add_option("--data", sweep.data, "Interaction file to corrupt");
  sweep_cmd->add_flag("--synthetic", sweep.synthetic, "Use synthetic data with planted noise at each ratio");
  add_synth_flags(sweep_cmd, sweep.synth);
  sweep_cmd->add_option("--ratios", sweep.ratios, "Comma-separated corruption ratios")->capture_default_str();
  sweep_cmd->add_option("--variants", sweep.variants, "Comma-separated variants")->capture_default_str();
  sweep_cmd->add_option("--seeds", sweep.seeds, "Comma-separated seeds")->capture_default_str();
  sweep_cmd->add_option("--window-width", sweep.window, "Width of the window variant")->capture_default_str();
  sweep_cmd->add_flag("--allow-any-ratio", sweep.allow_any_ratio, "Permit ratios above 0.25");
  sweep_cmd->add_option("--pool", sweep.pool, "Replacement pool: per-user or global")->capture_default_str();
  sweep_cmd->add_option("--resume", sweep.resume, "Existing sweep run directory to complete");
  sweep_cmd->add_option("--min-interactions", sweep.min_interactions, "Drop users with fewer interactions")
      ->capture_default_str();
  add_model_flags(sweep_cmd, sweep.model);
  std::string sweep_estimator = "arm";
  add_train_flags(sweep_cmd, sweep.train, sweep_estimator);
  sweep_cmd->add_option("--seed", sweep.train.seed, "Recorded in the manifest; each cell uses its own seed");

  std::string mask_checkpoint, mask_out;
  auto* masks_cmd = app.add_subcommand("export-masks", "Write per-block keep probabilities from a checkpoint");
  masks_cmd->add_option("--checkpoint", mask_checkpoint, "Checkpoint file")->required();
  masks_cmd->add_option("--out", mask_out, "Output directory (default: a new run directory)");

  SyntheticSpec synth;
  std::string synth_out, synth_noise;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic interaction file with planted noise");
  add_synth_flags(synth_cmd, synth);
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Interaction file to write")->required();
  synth_cmd->add_option("--noise-out", synth_noise, "CSV of noisy (user, position) pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const fs::path root = run_root(root_flag);
  try {
    if (*train_cmd) return cmd_train(train, root);
    if (*eval_cmd) return cmd_eval(eval, root);
    if (*sweep_cmd) {
      sweep.train.estimator = parse_estimator(sweep_estimator);
      return cmd_noise_sweep(sweep, root);
    }
    if (*masks_cmd) return cmd_export_masks(mask_checkpoint, mask_out, root);
    if (*synth_cmd) return cmd_synth(synth, synth_out, synth_noise);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
