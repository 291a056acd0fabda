#include "senn/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "senn/error.hpp"
#include "senn/serialize.hpp"

namespace senn {

namespace {

using nlohmann::json;

int line_of(const std::string& text, std::size_t pos) {
  int line = 1;
  for (std::size_t i = 0; i < pos && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

int line_of_key(const std::string& text, const std::string& key) {
  const std::size_t pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 0 : line_of(text, pos);
}

class Reader {
 public:
  Reader(const json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(key, "has the wrong type");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(it.key(), "is not a recognized key");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const int line = line_of_key(text_, key);
    std::string msg = "config key '" + path(key) + "' " + what;
    if (line > 0) msg += " (line " + std::to_string(line) + ")";
    throw Error(ErrorKind::Config, msg);
  }

 private:
  const json& j_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

ProposalOptimizer parse_optimizer(const std::string& s, const Reader& r) {
  if (s == "grad_ascent") return ProposalOptimizer::grad_ascent;
  if (s == "mala") return ProposalOptimizer::mala;
  r.fail("optimizer", "must be grad_ascent or mala");
}

CurvatureMode parse_curvature(const std::string& s, const Reader& r) {
  if (s == "kfac_moments") return CurvatureMode::kfac_moments;
  if (s == "kfac_ubah") return CurvatureMode::kfac_ubah;
  r.fail("curvature", "must be kfac_moments or kfac_ubah");
}

void read_prune(const json& j, const std::string& text, PruneConfig& p) {
  Reader r(j, "train.prune", text);
  r.get("tau", p.tau);
  r.get("max_prunes_per_event", p.max_prunes_per_event);
  r.get("jitter", p.jitter);
  r.finish();
}

void read_train(const json& j, const std::string& text, TrainConfig& t) {
  Reader r(j, "train", text);
  r.get("learning_rate", t.learning_rate);
  r.get("damping", t.damping);
  r.get("cg_max_iters", t.cg_max_iters);
  r.get("cg_rel_tol", t.cg_rel_tol);
  r.get("weight_decay", t.weight_decay);
  r.get("batch_size", t.batch_size);
  r.get("total_steps", t.total_steps);
  r.get("expansion_enabled", t.expansion_enabled);
  r.get("expand_every", t.expand_every);
  r.get("depth_cooldown", t.depth_cooldown);
  r.get("prune_every", t.prune_every);
  if (const json* p = r.child("prune")) read_prune(*p, text, t.prune);
  r.get("kfac_every", t.kfac_every);
  r.get("kfac_ema", t.kfac_ema);
  r.get("kfac_drift_threshold", t.kfac_drift_threshold);
  r.get("eval_every", t.eval_every);
  r.get("snapshot_every", t.snapshot_every);
  r.finish();
  if (!(t.learning_rate > 0.0)) r.fail("learning_rate", "must be positive");
  if (t.expand_every < 1) r.fail("expand_every", "must be at least 1");
  if (t.weight_decay < 0.0) r.fail("weight_decay", "must be non-negative");
}

void read_expansion(const json& j, const std::string& text, ExpansionConfig& e) {
  Reader r(j, "expansion", text);
  r.get("tau", e.tau);
  r.get("alpha_stop", e.alpha_stop);
  r.get("layer_score_factor", e.layer_score_factor);
  r.get("n_width_proposals", e.n_width_proposals);
  r.get("n_depth_proposals", e.n_depth_proposals);
  std::string opt;
  r.get("optimizer", opt);
  if (!opt.empty()) e.optimizer = parse_optimizer(opt, r);
  r.get("opt_steps", e.opt_steps);
  r.get("opt_step_size", e.opt_step_size);
  r.get("mala_temperature", e.mala_temperature);
  r.get("mala_argmax", e.mala_argmax);
  r.get("max_additions_per_event", e.max_additions_per_event);
  r.get("max_depth_width", e.max_depth_width);
  r.get("allow_width", e.allow_width);
  r.get("allow_depth", e.allow_depth);
  std::string curv;
  r.get("curvature", curv);
  if (!curv.empty()) e.curvature = parse_curvature(curv, r);
  r.get("proposal_jitter", e.proposal_jitter);
  r.get("depth_logdet_weight", e.depth_logdet_weight);
  r.get("depth_clamp_ratio", e.depth_clamp_ratio);
  r.finish();
  if (!(e.tau > 0.0)) r.fail("tau", "must be positive");
  if (e.alpha_stop < 0.0) r.fail("alpha_stop", "must be non-negative");
  if (!(e.layer_score_factor > 0.0)) r.fail("layer_score_factor", "must be positive");
}

void read_dataset(const json& j, const std::string& text, DatasetConfig& d) {
  Reader r(j, "dataset", text);
  r.get("n", d.n);
  r.get("noise", d.noise);
  r.get("subset_fraction", d.subset_fraction);
  r.get("validation_fraction", d.validation_fraction);
  r.get("data_path", d.data_path);
  r.finish();
  if (!(d.subset_fraction > 0.0 && d.subset_fraction <= 1.0)) r.fail("subset_fraction", "must lie in (0, 1]");
  if (d.noise < 0.0) r.fail("noise", "must be non-negative");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, "config is not valid JSON (line " +
                                       std::to_string(line_of(text, e.byte > 0 ? e.byte - 1 : 0)) + "): " + e.what());
  }
  ExperimentConfig c;
  Reader r(j, "", text);
  r.get("schema_version", c.schema_version);
  if (!j.contains("schema_version")) r.fail("schema_version", "is required");
  if (c.schema_version != kConfigSchemaVersion) r.fail("schema_version", "is not supported");
  r.get("task", c.task);
  if (c.task != "regression_1d" && c.task != "half_moons" && c.task != "mnist" && c.task != "mnist_subset") {
    r.fail("task", "must be one of regression_1d, half_moons, mnist, mnist_subset");
  }
  if (const json* d = r.child("dataset")) read_dataset(*d, text, c.dataset);
  r.get("hidden", c.hidden);
  for (int h : c.hidden) {
    if (h < 1) r.fail("hidden", "entries must be positive");
  }
  if (const json* t = r.child("train")) read_train(*t, text, c.train);
  if (const json* e = r.child("expansion")) read_expansion(*e, text, c.expansion);
  r.get("output_dir", c.output_dir);
  r.get("seeds", c.seeds);
  if (c.seeds.empty()) r.fail("seeds", "must list at least one seed");
  r.finish();
  c.expansion.damping = c.train.damping;
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_text(path));
}

Dataset make_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  if (config.task == "regression_1d") return gen_regression_1d(config.dataset.n, config.dataset.noise, seed);
  if (config.task == "half_moons") return gen_half_moons(config.dataset.n, config.dataset.noise, seed);
  std::string path = config.dataset.data_path;
  if (path.empty()) {
    const char* env = std::getenv("SENN_DATA_DIR");
    if (env != nullptr) path = env;
  }
  if (path.empty()) throw Error(ErrorKind::MissingFile, "no MNIST directory: set dataset.data_path or SENN_DATA_DIR");
  const double fraction = config.task == "mnist" ? 1.0 : config.dataset.subset_fraction;
  return load_mnist(path, fraction, seed, config.dataset.validation_fraction);
}

Network make_initial_network(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed) {
  Rng rng(stream_seed(seed, {0x4u}));
  return make_network(data.inputs.cols(), config.hidden, data.targets.cols(), rng);
}

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  run.data = make_dataset(config, seed);
  run.initial = make_initial_network(config, run.data, seed);
  TrainConfig tc = config.train;
  tc.seed = seed;
  ExpansionConfig ec = config.expansion;
  ec.damping = tc.damping;
  run.result = train(run.initial, run.data, tc, ec);
  const Network& net = run.result.net;
  const TaskKind task = run.data.task;
  run.train_metrics = evaluate(net, rows_of(run.data.inputs, run.data.train), rows_of(run.data.targets, run.data.train), task);
  run.validation_metrics =
      evaluate(net, rows_of(run.data.inputs, run.data.validation), rows_of(run.data.targets, run.data.validation), task);
  if (run.data.test_inputs.rows() > 0) run.test_metrics = evaluate(net, run.data.test_inputs, run.data.test_targets, task);
  return run;
}

nlohmann::json seed_summary(const SeedRun& run) {
  auto metrics = [](const Metrics& m) {
    json j{{"loss", m.loss}};
    if (std::isfinite(m.accuracy)) j["accuracy"] = m.accuracy;
    if (std::isfinite(m.mse)) j["mse"] = m.mse;
    return j;
  };
  const TrainLog& log = run.result.log;
  int dropped = 0;
  double max_width_dev = 0.0;
  for (const SurgeryCheck& s : log.surgeries) dropped += s.dropped ? 1 : 0;
  for (const json& e : log.events) {
    if (!e.contains("accepted")) continue;
    for (const json& a : e["accepted"]) {
      if (a["kind"] == "width") max_width_dev = std::max(max_width_dev, a["output_deviation"].get<double>());
    }
  }
  json j{{"seed", run.seed},
         {"steps", log.rows.size()},
         {"hidden_sizes", hidden_sizes(run.result.net)},
         {"parameters", parameter_count(run.result.net)},
         {"additions", log.addition_steps.size()},
         {"surgeries", log.surgeries.size()},
         {"anytime_drops", dropped},
         {"max_width_output_deviation", max_width_dev},
         {"train", metrics(run.train_metrics)},
         {"validation", metrics(run.validation_metrics)}};
  if (run.data.test_inputs.rows() > 0) j["test"] = metrics(run.test_metrics);
  return j;
}

int run_experiment(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                   std::ostream& err) {
  namespace fs = std::filesystem;
  try {
    ExperimentConfig config = load_experiment_config(config_path);
    if (overrides.output_dir) config.output_dir = *overrides.output_dir;
    if (overrides.seed) config.seeds = {*overrides.seed};
    const fs::path root(config.output_dir);
    fs::create_directories(root);
    json summary{{"config", fs::absolute(config_path).string()}, {"task", config.task}, {"seeds", json::array()}};
    for (std::uint64_t seed : config.seeds) {
      const fs::path dir = root / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      ExperimentConfig c = config;
      c.train.snapshot_dir = (dir / "snapshots").string();
      const SeedRun run = run_seed(c, seed);
      write_text(dir / "train_log.csv", log_to_csv(run.result.log));
      write_text(dir / "events.jsonl", events_to_jsonl(run.result.log));
      const json s = seed_summary(run);
      summary["seeds"].push_back(s);
      out << "seed " << seed << ": hidden " << s["hidden_sizes"].dump() << ", validation "
          << s["validation"].dump() << "\n";
    }
    write_text(root / "summary.json", dump_json(summary) + "\n");
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::Config:
      case ErrorKind::MissingFile:
      case ErrorKind::BadMagic:
      case ErrorKind::TruncatedFile:
        return 2;
      default:
        return 1;
    }
  } catch (const fs::filesystem_error& e) {
    err << "error [io]: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace senn
