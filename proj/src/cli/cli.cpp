#include "fpad/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <thread>

#include "fpad/dataio/generator.hpp"
#include "fpad/dataio/manifest.hpp"
#include "fpad/errors.hpp"
#include "fpad/metrics/metrics.hpp"
#include "fpad/network/checkpoint.hpp"
#include "fpad/network/network.hpp"
#include "fpad/training/training.hpp"

namespace fpad::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ProtocolError*>(&e)) return exit_code::protocol;
  if (dynamic_cast<const IoError*>(&e)) return exit_code::io;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return exit_code::io;
  if (dynamic_cast<const NumericError*>(&e)) return exit_code::numeric;
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return exit_code::usage;
  }
  return exit_code::internal;
}

namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) {
    if (!s.empty()) s += ',';
    s += p;
  }
  return s;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_double(item, what));
  return out;
}

KeyValues net_preset(const std::string& name) {
  if (name == "desk") return network::NetworkConfig::desk().to_kv();
  if (name == "paper") return network::NetworkConfig::paper().to_kv();
  throw ConfigError("unknown network preset '" + name + "' (expected desk or paper)");
}

bool has_prefix(const std::string& key, const std::string& prefix) { return key.rfind(prefix, 0) == 0; }

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void append_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// Creates `dir`; an existing non-empty directory needs --force.
void prepare_out(const fs::path& dir, bool force) {
  if (dir.empty()) throw UsageError("--out is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw UsageError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

struct Option {
  CLI::Option* opt = nullptr;
  std::string key;
  std::string value;
  std::vector<std::string> values;  // repeatable options
  bool repeatable = false;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string command;
  KeyValues cfg;  // resolved
  bool force = false;
};

class Run {
 public:
  Run(Context& ctx, std::vector<std::string> prefixes) : ctx_(ctx) {
    KeyValues echo;
    echo.set("command", ctx.command);
    for (const auto& [k, v] : ctx.cfg.entries()) {
      for (const auto& p : prefixes) {
        if (k == p || has_prefix(k, p)) {
          echo.set(k, v);
          break;
        }
      }
    }
    header_ = echo.render();
  }

  // Writes the run header into `dir` (may be empty: echo only) and to stdout.
  void start(const fs::path& dir) {
    dir_ = dir;
    const std::string text = "# fpad " + ctx_.command + " started " + timestamp() + "\n" + header_;
    if (!dir_.empty()) write_file(dir_ / "run.txt", text);
    ctx_.out << text;
  }

  void finish() {
    if (!dir_.empty()) append_file(dir_ / "run.txt", "# finished " + timestamp() + "\n");
  }

 private:
  Context& ctx_;
  std::string header_;
  fs::path dir_;
};

fs::path out_dir(const Context& ctx) { return ctx.cfg.get("io.out"); }

struct ManifestOnDisk {
  dataio::DatasetManifest manifest;
  fs::path base;
};

ManifestOnDisk open_data(const Context& ctx) {
  const std::string data = ctx.cfg.get("io.data");
  if (data.empty()) throw UsageError("--data is required");
  fs::path path = data;
  if (fs::is_directory(path)) path /= "manifest.jsonl";
  if (!fs::exists(path)) throw IoError("no manifest at " + path.string());
  return {dataio::load_manifest(path), path.parent_path()};
}

std::size_t count_split(const dataio::DatasetManifest& m, dataio::Split split, dataio::SampleClass cls) {
  return static_cast<std::size_t>(std::count_if(m.records.begin(), m.records.end(), [&](const auto& r) {
    return r.split == split && r.cls == cls;
  }));
}

network::NetworkConfig net_config(const KeyValues& cfg) { return network::NetworkConfig::from_kv(cfg); }

training::TrainConfig train_config(const KeyValues& cfg) {
  KeyValues kv = cfg;
  kv.set("train.seed", cfg.get("seed"));
  auto tc = training::TrainConfig::from_kv(kv, {});
  tc.validate();
  return tc;
}

std::vector<double> bpcer_targets(const KeyValues& cfg) {
  return parse_doubles(cfg.get("eval.bpcer_at"), "eval.bpcer_at");
}

void write_training_outputs(const fs::path& dir, const training::TrainResult& result) {
  network::save_checkpoint(dir / "checkpoint.fpad", result.checkpoint);
  std::ostringstream log;
  training::write_loss_log(log, result.log);
  write_file(dir / "loss.tsv", log.str());
}

void print_summary(std::ostream& out, const dataio::DatasetManifest& m) {
  const auto s = dataio::summarize(m);
  out << "records " << m.records.size() << ", subjects " << s.subjects << "\n";
  for (const auto& [k, n] : s.by_class) out << "  class " << k << ": " << n << "\n";
  for (const auto& [k, n] : s.attacks_by_species) out << "  species " << k << ": " << n << "\n";
  for (const auto& [k, n] : s.by_split) {
    out << "  split " << k << ": " << n;
    if (auto it = s.subjects_by_split.find(k); it != s.subjects_by_split.end()) out << " (" << it->second << " subjects)";
    out << "\n";
  }
}

int cmd_gen(Context& ctx) {
  const auto gc = dataio::GeneratorConfig::from_kv(ctx.cfg, {});
  gc.validate();
  dataio::SplitRatios ratios;
  ratios.train = ctx.cfg.get_double("split.train");
  ratios.val = ctx.cfg.get_double("split.val");
  ratios.test = ctx.cfg.get_double("split.test");
  ratios.synthetic_train = ctx.cfg.get_double("split.synthetic_train");
  const std::uint64_t seed = ctx.cfg.get_uint("seed");

  const fs::path dir = out_dir(ctx);
  prepare_out(dir, ctx.force);
  if (ctx.force) {
    fs::remove_all(dir / "images");
    fs::remove(dir / "manifest.jsonl");
  }
  Run run(ctx, {"seed", "gen.", "split.", "io.out"});
  run.start(dir);

  auto data = dataio::generate(gc, seed);
  data.manifest = dataio::make_splits(std::move(data.manifest), ratios, seed);
  dataio::write_dataset(dir, data.manifest, data.images);
  print_summary(ctx.out, data.manifest);
  run.finish();
  return exit_code::ok;
}

int cmd_train(Context& ctx) {
  const auto nc = net_config(ctx.cfg);
  const auto tc = train_config(ctx.cfg);
  const auto data = open_data(ctx);
  const fs::path dir = out_dir(ctx);
  prepare_out(dir, ctx.force);
  Run run(ctx, {"seed", "train.", "net.", "io.data", "io.out"});
  run.start(dir);

  const auto train_set = dataio::load_split(data.manifest, data.base, dataio::Split::train);
  for (const auto& r : train_set.records) training::training_label(r);
  ctx.out << "training on " << train_set.records.size() << " samples\n";
  const auto result = training::train(nc, tc, train_set);
  write_training_outputs(dir, result);
  const auto& last = result.log.back();
  ctx.out << "epoch " << last.epoch << " joint " << format_double(last.joint) << "\n";
  run.finish();
  return exit_code::ok;
}

int cmd_sweep(Context& ctx) {
  const auto grid = parse_doubles(ctx.cfg.get("sweep.grid"), "sweep.grid");
  if (grid.empty()) throw UsageError("the lambda grid is empty");
  int threads = static_cast<int>(ctx.cfg.get_int("sweep.threads"));
  if (threads < 0) throw ConfigError("sweep.threads must be >= 0");
  if (threads == 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto nc = net_config(ctx.cfg);
  const auto tc = train_config(ctx.cfg);
  const auto data = open_data(ctx);
  const fs::path dir = out_dir(ctx);
  prepare_out(dir, ctx.force);
  if (ctx.force) fs::remove_all(dir / "roc");
  Run run(ctx, {"seed", "train.", "net.", "sweep.", "io.data", "io.out"});
  run.start(dir);

  const auto train_set = dataio::load_split(data.manifest, data.base, dataio::Split::train);
  const auto val_set = dataio::load_split(data.manifest, data.base, dataio::Split::val);
  for (const auto& r : train_set.records) training::training_label(r);
  for (const auto& r : val_set.records) training::training_label(r);
  const auto result = training::sweep_lambda(grid, nc, tc, train_set, val_set, threads);

  fs::create_directories(dir / "roc");
  std::ostringstream summary;
  summary << "lambda,auc,selected\n";
  for (std::size_t i = 0; i < result.entries.size(); ++i) {
    const auto& e = result.entries[i];
    summary << format_double(e.lambda) << ',' << format_double(e.roc.auc) << ',' << (i == result.selected ? 1 : 0)
            << '\n';
    std::ostringstream roc;
    metrics::write_roc(roc, e.roc);
    write_file(dir / "roc" / ("lambda_" + format_double(e.lambda) + ".csv"), roc.str());
  }
  write_file(dir / "sweep.csv", summary.str());
  write_training_outputs(dir, result.best().result);
  ctx.out << summary.str() << "selected lambda " << format_double(result.best().lambda) << "\n";
  run.finish();
  return exit_code::ok;
}

std::string score_csv(std::span<const metrics::ScoreRow> rows) {
  std::ostringstream os;
  metrics::write_scores(os, rows);
  return os.str();
}

void write_report(const fs::path& dir, const metrics::EvalReport& report, const metrics::ThresholdPolicy& policy,
                  const metrics::ScoreSet& test) {
  KeyValues kv = report.to_kv();
  kv.set("threshold_policy", policy.to_string());
  write_file(dir / "report.kv", kv.render());
  write_file(dir / "report.txt", report.render_table());
  std::ostringstream roc;
  metrics::write_roc(roc, metrics::roc(test));
  write_file(dir / "roc.csv", roc.str());
}

int cmd_eval(Context& ctx) {
  const auto policy = metrics::ThresholdPolicy::parse(ctx.cfg.get("eval.threshold"));
  const auto targets = bpcer_targets(ctx.cfg);
  const std::string ckpt_path = ctx.cfg.get("io.checkpoint");
  if (ckpt_path.empty()) throw UsageError("--checkpoint is required");
  const auto data = open_data(ctx);
  if (count_split(data.manifest, dataio::Split::test, dataio::SampleClass::attack) == 0) {
    throw UsageError("the test split has no attack samples");
  }
  const fs::path dir = out_dir(ctx);
  prepare_out(dir, ctx.force);
  Run run(ctx, {"eval.", "io."});
  run.start(dir);

  const auto ckpt = network::load_checkpoint(ckpt_path);
  double threshold = policy.value;
  if (policy.kind == metrics::ThresholdPolicy::Kind::min_acer) {
    const auto val = dataio::load_split(data.manifest, data.base, dataio::Split::val);
    const auto scores = training::score_images(ckpt.net, val.images);
    const auto rows = training::make_score_rows(val.records, scores);
    write_file(dir / "val_scores.csv", score_csv(rows));
    threshold = metrics::choose_threshold(training::make_score_set(val.records, scores), policy);
  }
  const auto test = dataio::load_split(data.manifest, data.base, dataio::Split::test);
  const auto scores = training::score_images(ckpt.net, test.images);
  write_file(dir / "test_scores.csv", score_csv(training::make_score_rows(test.records, scores)));
  const auto set = training::make_score_set(test.records, scores);
  const auto report = metrics::evaluate(set, threshold, targets);
  write_report(dir, report, policy, set);
  ctx.out << report.render_table();
  run.finish();
  return exit_code::ok;
}

metrics::ScoreSet load_score_set(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  const auto rows = metrics::read_scores(f);
  return metrics::to_score_set(rows);
}

int cmd_report(Context& ctx) {
  const auto policy = metrics::ThresholdPolicy::parse(ctx.cfg.get("eval.threshold"));
  const auto targets = bpcer_targets(ctx.cfg);
  const std::string scores = ctx.cfg.get("io.scores");
  if (scores.empty()) throw UsageError("--scores is required");
  const std::string val_scores = ctx.cfg.get("io.val_scores");
  if (policy.kind == metrics::ThresholdPolicy::Kind::min_acer && val_scores.empty()) {
    throw UsageError("--threshold min-acer needs --val-scores (or pass --threshold fixed:<t>)");
  }
  const fs::path dir = out_dir(ctx);
  if (!dir.empty()) prepare_out(dir, ctx.force);
  Run run(ctx, {"eval.", "io."});
  run.start(dir);

  const auto set = load_score_set(scores);
  double threshold = policy.value;
  if (policy.kind == metrics::ThresholdPolicy::Kind::min_acer) {
    threshold = metrics::choose_threshold(load_score_set(val_scores), policy);
  }
  const auto report = metrics::evaluate(set, threshold, targets);
  if (!dir.empty()) write_report(dir, report, policy, set);
  ctx.out << report.render_table();
  run.finish();
  return exit_code::ok;
}

std::string grid_text(const std::vector<double>& grid) {
  std::vector<std::string> parts;
  for (double v : grid) parts.push_back(format_double(v));
  return join(parts);
}

class Flags {
 public:
  void add(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    auto& o = options_.emplace_back();
    o.key = key;
    o.opt = app->add_option(name, o.value, help);
  }
  void add_list(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    auto& o = options_.emplace_back();
    o.key = key;
    o.repeatable = true;
    o.opt = app->add_option(name, o.values, help)->allow_extra_args(false);
  }
  // Values of the options that were given on the command line.
  KeyValues given() const {
    KeyValues kv;
    for (const auto& o : options_) {
      if (o.opt->count() == 0) continue;
      kv.set(o.key, o.repeatable ? join(o.values) : o.value);
    }
    return kv;
  }

 private:
  std::deque<Option> options_;
};

void add_train_flags(CLI::App* app, Flags& flags) {
  flags.add(app, "--data", "io.data", "Dataset directory (or manifest.jsonl)");
  flags.add(app, "--epochs", "train.epochs", "Training epochs");
  flags.add(app, "--lr", "train.lr", "Adam learning rate");
  flags.add(app, "--batch-size", "train.batch_size", "Mini-batch size");
  flags.add(app, "--lambda", "train.lambda", "Center-loss weight");
  flags.add(app, "--scale", "train.s", "ArcFace scale s");
  flags.add(app, "--margin", "train.m", "ArcFace additive angular margin m");
  flags.add(app, "--alpha", "train.alpha", "Center update rate");
  flags.add(app, "--activation", "net.activation", "relu or leaky_relu");
  flags.add(app, "--preset", "net.preset", "Network preset: desk or paper");
}

}  // namespace

KeyValues default_config() {
  KeyValues kv;
  kv.set("seed", "0");
  kv.merge(dataio::GeneratorConfig{}.to_kv());
  const dataio::SplitRatios ratios;
  kv.set("split.train", ratios.train);
  kv.set("split.val", ratios.val);
  kv.set("split.test", ratios.test);
  kv.set("split.synthetic_train", ratios.synthetic_train);
  KeyValues train = training::TrainConfig{}.to_kv();
  for (const auto& [k, v] : train.entries()) {
    if (k != "train.seed") kv.set(k, v);
  }
  kv.set("net.preset", "desk");
  kv.merge(net_preset("desk"));
  kv.set("eval.threshold", metrics::ThresholdPolicy{}.to_string());
  kv.set("eval.bpcer_at", "");
  kv.set("sweep.grid", grid_text(training::default_lambda_grid()));
  kv.set("sweep.threads", 0);
  for (const char* k : {"io.data", "io.checkpoint", "io.out", "io.scores", "io.val_scores"}) kv.set(k, "");
  return kv;
}

namespace {

// Defaults, then the config file, then flags. A preset replaces the net.*
// defaults before explicit net.* keys are applied.
KeyValues resolve(const std::string& config_path, const KeyValues& flags) {
  const KeyValues defaults = default_config();
  KeyValues explicit_kv;
  if (!config_path.empty()) {
    explicit_kv = KeyValues::parse(read_file(config_path));
    for (const auto& [k, v] : explicit_kv.entries()) {
      if (!defaults.contains(k)) throw ConfigError("unknown config key '" + k + "' in " + config_path);
    }
  }
  explicit_kv.merge(flags);
  KeyValues cfg = defaults;
  if (explicit_kv.contains("net.preset")) cfg.merge(net_preset(explicit_kv.get("net.preset")));
  cfg.merge(explicit_kv);
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contactless fingerprint presentation-attack detection toolkit", "fpad"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags flags;
  std::string config_path;
  bool force = false;
  flags.add(&app, "--seed", "seed", "Master seed");
  flags.add(&app, "--out", "io.out", "Output directory");
  app.add_option("--config", config_path, "key=value config file; flags override it");
  app.add_flag("--force", force, "Allow writing into a non-empty output directory");

  auto* gen = app.add_subcommand("gen", "Generate a procedural dataset with subject-level splits");
  flags.add(gen, "--subjects", "gen.subjects", "Live subjects");
  flags.add(gen, "--per-subject", "gen.per_subject", "Live samples per subject");
  flags.add(gen, "--synthetic", "gen.synthetic", "Synthetic samples (-1: as many as live)");
  flags.add(gen, "--attacks-per-species", "gen.attacks_per_species", "Attack samples per species");
  flags.add(gen, "--species", "gen.species", "Comma-separated attack species");
  flags.add(gen, "--size", "gen.size", "Image side in pixels");
  flags.add(gen, "--noise", "gen.noise", "Sensor noise level");
  flags.add(gen, "--train-ratio", "split.train", "Share of subjects for training");
  flags.add(gen, "--val-ratio", "split.val", "Share of subjects for validation");
  flags.add(gen, "--test-ratio", "split.test", "Share of subjects for testing");
  flags.add(gen, "--synthetic-train", "split.synthetic_train", "Share of synthetic samples for training");

  auto* train = app.add_subcommand("train", "Train on the live and synthetic training split");
  add_train_flags(train, flags);

  auto* sweep = app.add_subcommand("sweep", "Train one model per lambda and pick the best validation AUC");
  add_train_flags(sweep, flags);
  flags.add(sweep, "--grid", "sweep.grid", "Comma-separated lambda values");
  flags.add(sweep, "--threads", "sweep.threads", "Parallel trainings (0: one per core)");

  auto* eval = app.add_subcommand("eval", "Score the test split and report PAD metrics");
  flags.add(eval, "--data", "io.data", "Dataset directory (or manifest.jsonl)");
  flags.add(eval, "--checkpoint", "io.checkpoint", "Trained checkpoint");
  flags.add(eval, "--threshold", "eval.threshold", "min-acer (on validation) or fixed:<t>");
  flags.add_list(eval, "--bpcer-at", "eval.bpcer_at", "Add BPCER at this APCER (repeatable)");

  auto* report = app.add_subcommand("report", "Render a report from score CSV files");
  flags.add(report, "--scores", "io.scores", "Score CSV to report on");
  flags.add(report, "--val-scores", "io.val_scores", "Validation score CSV for min-acer");
  flags.add(report, "--threshold", "eval.threshold", "min-acer or fixed:<t>");
  flags.add_list(report, "--bpcer-at", "eval.bpcer_at", "Add BPCER at this APCER (repeatable)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::ok : exit_code::usage;
  }

  try {
    Context ctx{out, err, "", resolve(config_path, flags.given()), force};
    if (gen->parsed()) {
      ctx.command = "gen";
      return cmd_gen(ctx);
    }
    if (train->parsed()) {
      ctx.command = "train";
      return cmd_train(ctx);
    }
    if (sweep->parsed()) {
      ctx.command = "sweep";
      return cmd_sweep(ctx);
    }
    if (eval->parsed()) {
      ctx.command = "eval";
      return cmd_eval(ctx);
    }
    ctx.command = "report";
    return cmd_report(ctx);
  } catch (const std::exception& e) {
    err << "fpad: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace fpad::cli
