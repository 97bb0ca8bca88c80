// ciac: datasets, training, scripted experiments, replay and the teleoperation server.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ciac/config.hpp"
#include "ciac/teleop_server.hpp"

using namespace ciac;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kSections = {"experiment", "sim",    "operator", "pipeline", "kalman", "confidence",
                                         "controller", "stream", "train",    "data",     "serve"};
const std::set<std::string> kSpecSections = {"experiment", "sim",        "operator", "pipeline",
                                             "kalman",     "confidence", "controller", "stream"};

struct Options {
  std::vector<std::string> config_files;
  std::vector<std::string> assignments;
  std::string out = "out";
  std::string format = "table";
  // Flags that mirror config keys; applied after the file and --set.
  std::vector<std::pair<std::string, std::string>> flags;

  std::string model;
  std::string data;
  std::string inputs;
  std::string replay;
  bool logs = false;
  long kfold = 5;
};

class Usage : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Config merged(const Config& a, const Config& b) {
  Config c = a;
  for (const auto& [k, v] : b.values()) c.set(k, v);
  return c;
}

Config load_config(const Options& o) {
  Config c;
  for (const auto& f : o.config_files) c = merged(c, Config::load(f));
  for (const auto& a : o.assignments) c.set_assignment(a);
  for (const auto& [k, v] : o.flags) c.set(k, v);
  return c;
}

// Keys in sections this command reads, or in no known section, must have been used.
void reject_unused(const Config& c, const std::set<std::string>& sections) {
  std::vector<std::string> bad;
  for (const auto& k : c.unused()) {
    const std::string sec = k.substr(0, k.find('.'));
    if (!kSections.count(sec) || sections.count(sec)) bad.push_back(k);
  }
  if (bad.empty()) return;
  std::string msg = "unknown config keys:";
  for (const auto& k : bad) msg += " " + k;
  throw ConfigError(msg);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// config.ini and seeds.txt beside the outputs.
void write_provenance(const fs::path& dir, const Config& used, const std::vector<std::uint64_t>& seeds) {
  fs::create_directories(dir);
  write_text(dir / "config.ini", used.ini());
  std::string s;
  for (auto v : seeds) s += std::to_string(v) + "\n";
  write_text(dir / "seeds.txt", s);
}

struct DataKeys {
  long recordings = 10;
  long throws = 4;
  std::uint64_t seed = 1000;
};

DataKeys data_keys(const Config& c) {
  DataKeys d;
  d.recordings = c.get("data.recordings", d.recordings);
  d.throws = c.get("data.throws", d.throws);
  d.seed = static_cast<std::uint64_t>(c.get("data.seed", static_cast<long>(d.seed)));
  if (d.recordings < 1 || d.throws < 1) throw ConfigError("data.recordings and data.throws must be >= 1");
  return d;
}

Config data_config(const DataKeys& d) {
  Config c;
  c.set("data.recordings", std::to_string(d.recordings));
  c.set("data.throws", std::to_string(d.throws));
  c.set("data.seed", std::to_string(d.seed));
  return c;
}

std::vector<std::uint64_t> recording_seeds(const DataKeys& d) { return seed_range(d.seed, static_cast<std::size_t>(d.recordings)); }

std::vector<std::vector<RecordingRow>> load_dataset(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .csv recordings in " + dir.string());
  std::vector<std::vector<RecordingRow>> rows;
  for (const auto& f : files) rows.push_back(load_recording(f));
  return rows;
}

// Recordings from --data, or generated from the data.* keys.
std::vector<std::vector<RecordingRow>> dataset(const Options& o, const Config& c, Config& used,
                                               std::vector<std::uint64_t>& seeds) {
  if (!o.data.empty()) return load_dataset(o.data);
  const DataKeys d = data_keys(c);
  const ExperimentSpec spec = spec_from_config(c, Experiment::Suture);
  used = merged(used, data_config(d));
  seeds = recording_seeds(d);
  return gen_dataset(spec.profile, spec.sim, static_cast<int>(d.recordings), static_cast<int>(d.throws), d.seed);
}

Config train_used(const TrainConfig& t, int strategy, long stride) {
  Config c;
  c.set("train.learning_rate", json(t.learning_rate).dump());
  c.set("train.batch_size", std::to_string(t.batch_size));
  c.set("train.epochs", std::to_string(t.epochs));
  c.set("train.seed", std::to_string(t.seed));
  c.set("train.dropout", json(t.dropout).dump());
  c.set("train.d_model", std::to_string(t.d_model));
  c.set("train.heads", std::to_string(t.heads));
  c.set("train.ffn", std::to_string(t.ffn));
  c.set("train.dense", std::to_string(t.dense));
  c.set("train.stride", std::to_string(stride));
  c.set("pipeline.label_strategy", std::to_string(strategy));
  return c;
}

long stride_of(const Config& c) {
  const long s = c.get("train.stride", 10L);
  if (s < 1) throw ConfigError("train.stride must be >= 1");
  return s;
}

int strategy_of(const Config& c) {
  const long s = c.get("pipeline.label_strategy", 1L);
  if (s != 1 && s != 2) throw ConfigError("pipeline.label_strategy must be 1 or 2");
  return static_cast<int>(s);
}

json confusion_json(const ConfusionMatrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.counts.rows(); ++i) {
    json r = json::array();
    for (int j = 0; j < m.counts.cols(); ++j) r.push_back(m.counts(i, j));
    rows.push_back(r);
  }
  json classes = json::array();
  for (GestureClass g : kAllGestureClasses) classes.push_back(gesture_name(g));
  return {{"classes", classes}, {"counts", rows}, {"accuracy", m.accuracy()}, {"frames", m.total()}};
}

ReportFormat format_of(const Options& o) { return parse_report_format(o.format); }

void emit(const ExperimentReport& rep, const Options& o) {
  const fs::path dir = o.out;
  write_text(dir / "report.txt", emit_report(rep, ReportFormat::Table));
  write_text(dir / "report.json", emit_report(rep, ReportFormat::Json));
  write_text(dir / "report.csv", emit_report(rep, ReportFormat::Csv));
  std::cout << emit_report(rep, format_of(o));
}

void save_logs(const std::vector<SimEventLog>& logs, const fs::path& dir) {
  fs::create_directories(dir / "logs");
  for (const auto& l : logs)
    l.save(dir / "logs" / (l.header.experiment + "_" + l.header.mode + "_" + std::to_string(l.header.seed) + ".log.jsonl"));
}

ProbabilityModel model_at(const std::string& path) {
  if (path.empty()) return {};
  return GestureClassifier::load(path).as_model();
}

int cmd_gen_data(const Options& o) {
  const Config c = load_config(o);
  const DataKeys d = data_keys(c);
  const ExperimentSpec spec = spec_from_config(c, Experiment::Suture);
  reject_unused(c, {"data", "sim", "operator"});
  const auto data = gen_dataset(spec.profile, spec.sim, static_cast<int>(d.recordings), static_cast<int>(d.throws), d.seed);
  const fs::path dir = o.out;
  write_provenance(dir, merged(config_from_spec(spec), data_config(d)), recording_seeds(d));
  std::size_t rows = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "recording_%03zu.csv", i);
    write_recording(dir / name, data[i]);
    rows += data[i].size();
  }
  std::cout << json{{"recordings", data.size()}, {"rows", rows}, {"dir", dir.string()}}.dump() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const Config c = load_config(o);
  const TrainConfig tc = train_config_from(c);
  const int strategy = strategy_of(c);
  const long stride = stride_of(c);
  Config used = train_used(tc, strategy, stride);
  std::vector<std::uint64_t> seeds;
  const auto rows = dataset(o, c, used, seeds);
  reject_unused(c, {"train", "data", "sim", "operator", "pipeline"});
  std::vector<LabeledWindow> windows;
  for (const auto& r : label_dataset(rows, strategy)) {
    auto w = extract_windows(r, static_cast<std::size_t>(stride));
    windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train(tc, windows);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir = o.out;
  seeds.push_back(tc.seed);
  write_provenance(dir, used, seeds);
  const fs::path model = o.model.empty() ? dir / "model.json" : fs::path(o.model);
  result.model.save(model);
  std::string log = "epoch,mean_loss,train_accuracy\n";
  for (const auto& e : result.log)
    log += std::to_string(e.epoch) + "," + std::to_string(e.mean_loss) + "," + std::to_string(e.train_accuracy) + "\n";
  write_text(dir / "train_log.csv", log);
  std::cout << json{{"model", model.string()},
                    {"windows", windows.size()},
                    {"epochs", result.log.size()},
                    {"final_loss", result.log.empty() ? 0.0 : result.log.back().mean_loss},
                    {"seconds", seconds}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const Config c = load_config(o);
  const int strategy = strategy_of(c);
  Config used;
  std::vector<std::uint64_t> seeds;
  json out;
  if (!o.model.empty()) {
    used.set("pipeline.label_strategy", std::to_string(strategy));
    const auto rows = dataset(o, c, used, seeds);
    reject_unused(c, {"data", "sim", "operator", "pipeline"});
    const ConfusionMatrix m = evaluate_model(GestureClassifier::load(o.model), rows, strategy);
    out = {{"model", o.model}, {"strategy", strategy}, {"confusion", confusion_json(m)}, {"accuracy", m.accuracy()}};
  } else {
    const TrainConfig tc = train_config_from(c);
    const long stride = stride_of(c);
    used = train_used(tc, strategy, stride);
    const auto rows = dataset(o, c, used, seeds);
    reject_unused(c, {"train", "data", "sim", "operator", "pipeline"});
    if (o.kfold < 2) throw ConfigError("--kfold must be >= 2");
    const KFoldReport rep = kfold_evaluate(label_dataset(rows, strategy), static_cast<std::size_t>(o.kfold),
                                           static_cast<std::size_t>(stride), transformer_factory(tc));
    json folds = json::array();
    for (std::size_t i = 0; i < rep.folds.size(); ++i)
      folds.push_back({{"recordings", rep.fold_recordings[i]}, {"accuracy", rep.folds[i].accuracy()}});
    out = {{"kfold", o.kfold},
           {"strategy", strategy},
           {"folds", folds},
           {"confusion", confusion_json(rep.aggregate)},
           {"accuracy", rep.accuracy()}};
    seeds.push_back(tc.seed);
  }
  const fs::path dir = o.out;
  write_provenance(dir, used, seeds);
  write_text(dir / "eval.json", out.dump(2) + "\n");
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_experiment(const Options& o, Experiment which) {
  const Config c = load_config(o);
  const ExperimentSpec spec = spec_from_config(c, which);
  reject_unused(c, kSpecSections);
  spec.validate();
  ProbabilityModel model;
  if (which == Experiment::Suture) {
    if (o.model.empty()) throw Usage("suture needs --model (train one with `ciac train`)");
    model = model_at(o.model);
  }
  Config used = config_from_spec(spec);
  if (!o.model.empty()) used.set("experiment.model", o.model);
  write_provenance(o.out, used, spec.seeds);
  std::vector<SimEventLog> logs;
  const ExperimentReport rep = which == Experiment::Reach ? run_target_reaching(spec, o.logs ? &logs : nullptr)
                                                          : run_suturing(spec, model, o.logs ? &logs : nullptr);
  if (o.logs) save_logs(logs, o.out);
  emit(rep, o);
  return 0;
}

int cmd_replay(const Options& o) {
  if (!o.inputs.empty()) {
    const SessionInputLog inputs = SessionInputLog::load(o.inputs);
    const std::string model = o.model.empty() ? inputs.setup.model : o.model;
    if (inputs.setup.spec.pipeline.lambda_source == LambdaSource::Bayes && model.empty())
      throw Usage("this session used the classifier; pass --model");
    const SimEventLog log = replay_session(inputs, model_at(model));
    const fs::path dir = o.out;
    fs::create_directories(dir);
    log.save(dir / (inputs.setup.id + ".log.jsonl"));
    write_provenance(dir, Config::from_dump(inputs.setup.spec.describe()), {inputs.setup.seed});
    std::cout << metrics_to_json(compute_metrics(log)) << "\n";
    return 0;
  }
  if (o.replay.empty()) throw Usage("replay needs a log file or --inputs");
  std::cout << metrics_to_json(compute_metrics(SimEventLog::load(o.replay))) << "\n";
  return 0;
}

int cmd_serve(const Options& o) {
  const Config c = load_config(o);
  ServerOptions s;
  s.address = c.get("serve.address", s.address);
  const long port = c.get("serve.port", static_cast<long>(s.port));
  if (port < 0 || port > 65535) throw ConfigError("serve.port out of range");
  s.port = static_cast<unsigned short>(port);
  s.log_dir = c.get("serve.log_dir", std::string());
  s.max_queue = static_cast<std::size_t>(c.get("serve.max_queue", static_cast<long>(s.max_queue)));
  s.seed = static_cast<std::uint64_t>(c.get("serve.seed", static_cast<long>(s.seed)));
  reject_unused(c, {"serve"});
  s.model_path = o.model;
  s.model = model_at(o.model);
  TeleopServer server(s);
  std::cout << json{{"listening", s.address + ":" + std::to_string(server.port())}, {"version", kServiceVersion}}.dump()
            << std::endl;
  server.run();
  return 0;
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", message}, {"kind", kind}, {"exit_code", code}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-based intention assimilation: datasets, training, experiments and teleoperation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_files, "INI/TOML-style config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.assignments, "Override a config key, section.key=value");
    sub->add_option("--out", o.out, "Output directory");
  };
  auto key_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&o, key](const std::string& v) { o.flags.emplace_back(key, v); },
                                          help + " (" + key + ")");
  };
  auto spec_flags = [&](CLI::App* sub) {
    key_flag(sub, "--seed", "experiment.seed", "First seed");
    key_flag(sub, "--repetitions", "experiment.repetitions", "Number of seeds");
    key_flag(sub, "--modes", "experiment.modes", "TRADITIONAL,CIAC");
    key_flag(sub, "--lambda-source", "pipeline.lambda_source", "BAYES, LINEAR_RAMP or FIXED");
    key_flag(sub, "--intent", "pipeline.intent", "Intent source");
    key_flag(sub, "--profile", "operator.profile", "novice or expert");
    key_flag(sub, "--delay-ticks", "sim.delay_ticks", "Console delay");
    sub->add_option("--format", o.format, "table, json or csv")->check(CLI::IsMember({"table", "json", "csv"}));
    sub->add_flag("--logs", o.logs, "Save every SimEventLog under <out>/logs");
  };
  auto data_flags = [&](CLI::App* sub) {
    key_flag(sub, "--recordings", "data.recordings", "Recordings to generate");
    key_flag(sub, "--throws", "data.throws", "Throws per recording");
    key_flag(sub, "--data-seed", "data.seed", "Dataset seed");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate labeled scripted recordings");
  common(gen);
  data_flags(gen);
  key_flag(gen, "--profile", "operator.profile", "novice or expert");

  auto* tr = app.add_subcommand("train", "Train the gesture classifier");
  common(tr);
  data_flags(tr);
  tr->add_option("--data", o.data, "Directory of recordings (generated when absent)")->check(CLI::ExistingDirectory);
  tr->add_option("--model", o.model, "Checkpoint path (default <out>/model.json)");
  key_flag(tr, "--strategy", "pipeline.label_strategy", "Label strategy 1 or 2");
  key_flag(tr, "--epochs", "train.epochs", "Epochs");
  key_flag(tr, "--train-seed", "train.seed", "Training seed");

  auto* ev = app.add_subcommand("eval", "Confusion matrix of a checkpoint, or k-fold cross-validation");
  common(ev);
  data_flags(ev);
  ev->add_option("--data", o.data, "Directory of recordings (generated when absent)")->check(CLI::ExistingDirectory);
  ev->add_option("--model", o.model, "Checkpoint to evaluate; k-fold training when absent")->check(CLI::ExistingFile);
  ev->add_option("--kfold", o.kfold, "Folds for cross-validation");
  key_flag(ev, "--strategy", "pipeline.label_strategy", "Label strategy 1 or 2");
  key_flag(ev, "--epochs", "train.epochs", "Epochs");

  auto* reach = app.add_subcommand("reach", "Paired target-reaching experiment");
  common(reach);
  spec_flags(reach);

  auto* suture = app.add_subcommand("suture", "Paired four-throw suturing experiment");
  common(suture);
  spec_flags(suture);
  suture->add_option("--model", o.model, "Classifier checkpoint")->check(CLI::ExistingFile);
  key_flag(suture, "--throws", "experiment.throws", "Throws per run");

  auto* rep = app.add_subcommand("replay", "Metrics from a stored log, or re-run a recorded session");
  rep->add_option("log", o.replay, "SimEventLog (.jsonl)")->check(CLI::ExistingFile);
  rep->add_option("--inputs", o.inputs, "Session input file")->check(CLI::ExistingFile);
  rep->add_option("--model", o.model, "Classifier checkpoint for --inputs")->check(CLI::ExistingFile);
  rep->add_option("--out", o.out, "Output directory");

  auto* serve = app.add_subcommand("serve", "Teleoperation WebSocket server");
  common(serve);
  key_flag(serve, "--address", "serve.address", "Bind address");
  key_flag(serve, "--port", "serve.port", "Port, 0 picks one");
  key_flag(serve, "--log-dir", "serve.log_dir", "Write session logs here");
  key_flag(serve, "--max-queue", "serve.max_queue", "Frames queued before a client is dropped");
  serve->add_option("--model", o.model, "Classifier checkpoint")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (tr->parsed()) return cmd_train(o);
    if (ev->parsed()) return cmd_eval(o);
    if (reach->parsed()) return cmd_experiment(o, Experiment::Reach);
    if (suture->parsed()) return cmd_experiment(o, Experiment::Suture);
    if (rep->parsed()) return cmd_replay(o);
    if (serve->parsed()) return cmd_serve(o);
  } catch (const Usage& e) {
    return fail("usage", e.what(), 2);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const ParseError& e) {
    return fail("parse", e.what(), 3);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return fail("usage", "no subcommand", 2);
}
