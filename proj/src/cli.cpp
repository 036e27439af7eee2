#include "emo/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "emo/analysis.hpp"
#include "emo/backend.hpp"
#include "emo/corpus.hpp"
#include "emo/eval.hpp"
#include "emo/head.hpp"
#include "emo/prompting.hpp"
#include "json.hpp"

namespace emo::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
  std::string command;
  std::string track;
  std::string strategy = "base";
  std::string langs;  // comma separated
  std::string regime = "mixed";
  std::string backend = "mock-echo";
  std::uint64_t seed = 42;
  std::string out;
  std::size_t concurrency = 1;
  bool use_logit_probs = false;

  // inputs
  std::string data_dir;
  std::vector<std::string> inputs;
  std::vector<std::string> dev_inputs;
  std::string labels;  // schema for unlabeled inputs
  double dev_fraction = 0.1;

  // generation
  int max_new_tokens = 32;
  double temperature = 0.0;
  int timeout_ms = 60000;
  int max_retries = 2;
  int top_logprobs = 5;
  std::string lexicon;
  std::string checkpoint;

  // head training
  std::string features = "hashed";
  std::string embedding_endpoint;
  std::size_t feature_dim = 512;
  std::uint64_t feature_seed = 13;
  TrainConfig train;

  // eval / compare
  std::string pred;
  std::string gold;
  std::string base_pred;
  std::string pairwise_pred;
  std::string pearson_mode = "per_label";
  std::string intensity_from = "pairwise";
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
}

// Validation gathers every problem before failing.
void validate(const RunConfig& c) {
  std::vector<std::string> problems;
  const std::set<std::string> tracks{"a", "b"}, strategies{"base", "pairwise"}, regimes{"separated", "mixed"},
      backends{"http", "mock-echo", "mock-lexicon", "head"}, features{"hashed", "remote"},
      pearson_modes{"per_label", "flattened"}, intensity_from{"base", "pairwise"};
  const std::string& cmd = c.command;

  if (!tracks.count(c.track)) problems.push_back("--track must be a or b (got '" + c.track + "')");
  if (!strategies.count(c.strategy)) problems.push_back("--strategy must be base or pairwise (got '" + c.strategy + "')");
  if (!regimes.count(c.regime)) problems.push_back("--regime must be separated or mixed (got '" + c.regime + "')");
  if (c.out.empty()) problems.push_back("--out is required");
  if (c.concurrency < 1) problems.push_back("--concurrency must be >= 1");

  auto need_files = [&](const std::vector<std::string>& files, const std::string& flag) {
    if (files.empty()) problems.push_back(flag + " is required");
    for (const auto& f : files) {
      if (!fs::exists(f)) problems.push_back(flag + " file does not exist: " + f);
    }
  };
  auto need_file = [&](const std::string& f, const std::string& flag) {
    if (f.empty()) problems.push_back(flag + " is required");
    else if (!fs::exists(f)) problems.push_back(flag + " file does not exist: " + f);
  };

  if (cmd == "split") {
    if (c.inputs.empty() && c.data_dir.empty()) problems.push_back("split needs --input files or --data-dir with --langs");
    if (!c.data_dir.empty()) {
      if (c.langs.empty()) problems.push_back("--data-dir needs --langs");
      for (const auto& lang : split_list(c.langs)) {
        fs::path csv = fs::path(c.data_dir) / (lang + ".csv"), jl = fs::path(c.data_dir) / (lang + ".jsonl");
        if (!fs::exists(csv) && !fs::exists(jl)) problems.push_back("no data file for language '" + lang + "' in " + c.data_dir);
      }
    }
    for (const auto& f : c.inputs) {
      if (!fs::exists(f)) problems.push_back("--input file does not exist: " + f);
    }
    if (!(c.dev_fraction > 0.0 && c.dev_fraction < 1.0)) problems.push_back("--dev-fraction must lie in (0, 1)");
  } else if (cmd == "export") {
    need_files(c.inputs, "--input");
  } else if (cmd == "train-head") {
    need_files(c.inputs, "--input");
    for (const auto& f : c.dev_inputs) {
      if (!fs::exists(f)) problems.push_back("--dev file does not exist: " + f);
    }
    if (c.track == "b") problems.push_back("the classification head supports Track A only");
    if (!features.count(c.features)) problems.push_back("--features must be hashed or remote");
    if (c.features == "remote" && c.embedding_endpoint.empty()) problems.push_back("--features remote needs --embedding-endpoint");
    if (c.feature_dim < 1) problems.push_back("--feature-dim must be >= 1");
    try {
      c.train.validate();
    } catch (const ConfigError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
  } else if (cmd == "infer") {
    need_files(c.inputs, "--input");
    if (!backends.count(c.backend))
      problems.push_back("--backend must be one of http, mock-echo, mock-lexicon, head (got '" + c.backend + "')");
    if (c.backend == "head") {
      need_file(c.checkpoint, "--checkpoint");
      if (c.track == "b") problems.push_back("--backend head supports Track A only");
    }
    if (c.backend == "http") {
      auto env = HttpBackendConfig::from_env();
      if (env.endpoint.empty()) problems.push_back("--backend http needs EMO_ENDPOINT");
      if (env.model.empty()) problems.push_back("--backend http needs EMO_MODEL");
    }
    if (!c.lexicon.empty() && !fs::exists(c.lexicon)) problems.push_back("--lexicon file does not exist: " + c.lexicon);
    if (c.use_logit_probs && (c.strategy != "pairwise" || c.track != "a"))
      problems.push_back("--use-logit-probs applies to the pairwise strategy on Track A only");
    if (c.max_new_tokens < 1) problems.push_back("--max-new-tokens must be >= 1");
    if (c.temperature < 0) problems.push_back("--temperature must be >= 0");
    if (c.timeout_ms <= 0) problems.push_back("--timeout-ms must be positive");
    if (c.max_retries < 0) problems.push_back("--max-retries must be >= 0");
  } else if (cmd == "eval") {
    need_file(c.pred, "--pred");
    need_file(c.gold, "--gold");
    if (!pearson_modes.count(c.pearson_mode)) problems.push_back("--pearson-mode must be per_label or flattened");
  } else if (cmd == "compare") {
    need_file(c.base_pred, "--base");
    need_file(c.pairwise_pred, "--pairwise");
    need_file(c.gold, "--gold");
    if (!intensity_from.count(c.intensity_from)) problems.push_back("--intensity-from must be base or pairwise");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

ojson config_json(const RunConfig& c) {
  ojson j;
  j["command"] = c.command;
  j["track"] = c.track;
  j["strategy"] = c.strategy;
  j["langs"] = c.langs;
  j["regime"] = c.regime;
  j["backend"] = c.backend;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["concurrency"] = c.concurrency;
  j["use-logit-probs"] = c.use_logit_probs;
  j["data-dir"] = c.data_dir;
  j["input"] = c.inputs;
  j["dev"] = c.dev_inputs;
  j["labels"] = c.labels;
  j["dev-fraction"] = c.dev_fraction;
  j["max-new-tokens"] = c.max_new_tokens;
  j["temperature"] = c.temperature;
  j["timeout-ms"] = c.timeout_ms;
  j["max-retries"] = c.max_retries;
  j["top-logprobs"] = c.top_logprobs;
  j["lexicon"] = c.lexicon;
  j["checkpoint"] = c.checkpoint;
  j["features"] = c.features;
  j["embedding-endpoint"] = c.embedding_endpoint;
  j["feature-dim"] = c.feature_dim;
  j["feature-seed"] = c.feature_seed;
  j["epochs"] = c.train.epochs;
  j["lr"] = c.train.learning_rate;
  j["batch-size"] = c.train.batch_size;
  j["hidden-dim"] = c.train.hidden_dim;
  j["weight-decay"] = c.train.weight_decay;
  j["threshold"] = c.train.threshold;
  j["pred"] = c.pred;
  j["gold"] = c.gold;
  j["base"] = c.base_pred;
  j["pairwise"] = c.pairwise_pred;
  j["pearson-mode"] = c.pearson_mode;
  j["intensity-from"] = c.intensity_from;
  return j;
}

class Manifest {
 public:
  explicit Manifest(const RunConfig& c) : config_(c), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"sha1", git_blob_hash_file(p)}}); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void extra(const std::string& key, ojson value) { extra_[key] = std::move(value); }

  void write(const fs::path& dir, const std::string& status) const {
    ojson j;
    j["tool"] = "emodetect";
    j["version"] = kToolVersion;
    j["command"] = config_.command;
    j["status"] = status;
    j["seed"] = config_.seed;
    j["template_version"] = template_version();
    j["config"] = config_json(config_);
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    j["timings"] = {{"elapsed_ms", std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count()}};
    write_text(dir / "manifest.json", j.dump(2) + "\n");
  }

 private:
  const RunConfig& config_;
  std::chrono::steady_clock::time_point start_;
  ojson inputs_ = ojson::array();
  ojson outputs_ = ojson::array();
  ojson extra_ = ojson::object();
};

std::optional<LabelSchema> schema_flag(const RunConfig& c) {
  if (c.labels.empty()) return std::nullopt;
  return LabelSchema(split_list(c.labels), parse_track(c.track));
}

Dataset load_inputs(const std::vector<std::string>& files, const RunConfig& c, Manifest& m) {
  const Track track = parse_track(c.track);
  std::vector<Dataset> parts;
  for (const auto& f : files) {
    parts.push_back(read_dataset(f, track, "", schema_flag(c)));
    m.input(f);
  }
  Dataset all = parts.size() == 1 ? std::move(parts.front()) : mix_languages(parts);
  const auto wanted = split_list(c.langs);
  if (wanted.empty()) return all;
  std::vector<Dataset> kept;
  for (const auto& lang : wanted) {
    if (all.langs().count(lang)) kept.push_back(filter_language(all, lang));
  }
  if (kept.empty()) throw DataError("none of the requested languages occur in the inputs");
  return mix_languages(kept);
}

// One (output dir, dataset) unit per language when separated; one unit otherwise.
std::vector<std::pair<fs::path, Dataset>> regime_units(const Dataset& d, const RunConfig& c) {
  std::vector<std::pair<fs::path, Dataset>> units;
  if (c.regime == "mixed") {
    units.emplace_back(fs::path(c.out), d);
    return units;
  }
  for (const auto& lang : d.langs()) units.emplace_back(fs::path(c.out) / lang, filter_language(d, lang));
  return units;
}

int cmd_split(const RunConfig& c, std::ostream& out) {
  Manifest m(c);
  const Track track = parse_track(c.track);
  std::vector<Dataset> parts;
  for (const auto& lang : split_list(c.langs)) {
    if (c.data_dir.empty()) break;
    fs::path csv = fs::path(c.data_dir) / (lang + ".csv");
    fs::path path = fs::exists(csv) ? csv : fs::path(c.data_dir) / (lang + ".jsonl");
    parts.push_back(read_dataset(path, track, lang, schema_flag(c)));
    m.input(path);
  }
  for (const auto& f : c.inputs) {
    parts.push_back(read_dataset(f, track, "", schema_flag(c)));
    m.input(f);
  }
  const Dataset all = parts.size() == 1 ? parts.front() : mix_languages(parts);

  // Splitting is per language either way; the regime only decides the layout.
  std::vector<Dataset> trains, devs;
  for (const auto& lang : all.langs()) {
    auto s = internal_split(filter_language(all, lang), c.dev_fraction, c.seed);
    trains.push_back(std::move(s.train));
    devs.push_back(std::move(s.dev));
  }
  if (c.regime == "mixed") {
    const Dataset train = mix_languages(trains), dev = mix_languages(devs);
    write_dataset_jsonl(train, fs::path(c.out) / "train.jsonl");
    write_dataset_jsonl(dev, fs::path(c.out) / "dev.jsonl");
    m.output(fs::path(c.out) / "train.jsonl");
    m.output(fs::path(c.out) / "dev.jsonl");
    out << "split: " << train.size() << " train / " << dev.size() << " dev\n";
  } else {
    for (std::size_t i = 0; i < trains.size(); ++i) {
      const std::string lang = *trains[i].langs().begin();
      write_dataset_jsonl(trains[i], fs::path(c.out) / lang / "train.jsonl");
      write_dataset_jsonl(devs[i], fs::path(c.out) / lang / "dev.jsonl");
      m.output(fs::path(c.out) / lang / "train.jsonl");
      m.output(fs::path(c.out) / lang / "dev.jsonl");
      out << "split " << lang << ": " << trains[i].size() << " train / " << devs[i].size() << " dev\n";
    }
  }
  m.write(c.out, "ok");
  return 0;
}

int cmd_export(const RunConfig& c, std::ostream& out) {
  Manifest m(c);
  const Dataset d = load_inputs(c.inputs, c, m);
  const Strategy strategy = parse_strategy(c.strategy);
  ojson counts = ojson::object();
  for (const auto& [dir, unit] : regime_units(d, c)) {
    const fs::path path = dir / "instructions.jsonl";
    std::size_t n = export_instruction_dataset(unit, strategy, path);
    m.output(path);
    counts[path.string()] = n;
    out << "export: " << n << " records -> " << path.string() << '\n';
  }
  m.extra("records", counts);
  m.write(c.out, "ok");
  return 0;
}

std::unique_ptr<FeatureProvider> make_features(const RunConfig& c, const std::vector<const Dataset*>& prefetch) {
  if (c.features == "remote") {
    auto remote = std::make_unique<RemoteEmbeddingFeatures>(c.embedding_endpoint);
    for (const Dataset* d : prefetch) remote->prefetch(*d);
    return remote;
  }
  return std::make_unique<HashedNgramFeatures>(c.feature_dim, c.feature_seed);
}

int cmd_train_head(const RunConfig& c, std::ostream& out) {
  Manifest m(c);
  const Dataset train_all = load_inputs(c.inputs, c, m);
  std::optional<Dataset> dev_all;
  if (!c.dev_inputs.empty()) dev_all = load_inputs(c.dev_inputs, c, m);

  for (const auto& [dir, train] : regime_units(train_all, c)) {
    Dataset dev;
    if (dev_all) {
      if (c.regime == "separated") {
        const std::string lang = *train.langs().begin();
        dev = dev_all->langs().count(lang) ? filter_language(*dev_all, lang) : Dataset({}, train.schema());
      } else {
        dev = *dev_all;
      }
      if (!(dev.schema() == train.schema())) dev = Dataset(dev.samples(), train.schema(), dev.lang_schemas());
    } else {
      dev = Dataset({}, train.schema());
    }
    auto features = make_features(c, {&train, &dev});
    TrainConfig tc = c.train;
    tc.seed = c.seed;
    TrainResult r = train_head(train, dev, *features, tc);

    HeadCheckpoint ck{r.params, train.schema(), tc, features->describe(), features->dim(), c.feature_seed};
    save_checkpoint(ck, dir / "head.json");
    ojson hist = ojson::array();
    for (const auto& e : r.history)
      hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_macro_f1", e.dev_macro_f1}});
    ojson h;
    h["best_epoch"] = r.best_epoch;
    h["history"] = std::move(hist);
    write_text(dir / "history.json", h.dump(2) + "\n");
    m.output(dir / "head.json");
    m.output(dir / "history.json");
    out << "train-head " << dir.string() << ": best epoch " << r.best_epoch << " dev macro-F1 "
        << r.history[static_cast<std::size_t>(r.best_epoch - 1)].dev_macro_f1 << '\n';
  }
  m.write(c.out, "ok");
  return 0;
}

std::unique_ptr<Backend> make_backend(const RunConfig& c, const Dataset& d) {
  if (c.backend == "mock-echo") return std::make_unique<EchoGoldBackend>(d);
  if (c.backend == "mock-lexicon")
    return std::make_unique<LexiconBackend>(c.lexicon.empty() ? LexiconBackend::default_lexicon() : LexiconBackend::load(c.lexicon));
  if (c.backend == "head") {
    HeadCheckpoint ck = load_checkpoint(c.checkpoint);
    std::shared_ptr<const FeatureProvider> features;
    if (ck.features.rfind("remote:", 0) == 0) {
      auto remote = std::make_shared<RemoteEmbeddingFeatures>(ck.features.substr(7));
      remote->prefetch(d);
      features = remote;
    } else {
      features = std::make_shared<HashedNgramFeatures>(ck.feature_dim, ck.feature_seed);
    }
    return std::make_unique<HeadBackend>(ck.params, ck.schema, features, ck.config.threshold);
  }
  HttpBackendConfig hc = HttpBackendConfig::from_env();
  hc.max_retries = c.max_retries;
  return std::make_unique<HttpBackend>(hc);
}

ojson stats_json(const RunStats& s) {
  ojson j;
  j["requests"] = s.requests;
  j["resumed"] = s.resumed;
  j["fragments"] = s.fragments;
  j["dropped"] = s.dropped;
  j["drop_rate"] = s.drop_rate;
  j["retries"] = s.retries;
  j["logit_decisions"] = s.logit_decisions;
  j["logit_fallbacks"] = s.logit_fallbacks;
  j["latency_ms"] = {{"min", s.latency.min_ms}, {"mean", s.latency.mean_ms}, {"p50", s.latency.p50_ms},
                     {"p95", s.latency.p95_ms}, {"max", s.latency.max_ms}};
  j["parse_errors"] = s.parse_errors;
  return j;
}

int cmd_infer(const RunConfig& c, std::ostream& out, std::ostream& err) {
  Manifest m(c);
  const Dataset d = load_inputs(c.inputs, c, m);
  InferenceOptions opts;
  opts.strategy = parse_strategy(c.strategy);
  opts.concurrency = c.concurrency;
  opts.use_logit_probs = c.use_logit_probs;
  opts.generation.max_new_tokens = c.max_new_tokens;
  opts.generation.temperature = c.temperature;
  opts.generation.request_timeout = std::chrono::milliseconds(c.timeout_ms);
  opts.generation.top_logprobs = c.top_logprobs;
  opts.on_warning = [&err](const std::string& msg) { err << "warning: " << msg << '\n'; };

  for (const auto& [dir, unit] : regime_units(d, c)) {
    auto backend = make_backend(c, unit);
    opts.journal = dir / "journal.jsonl";
    InferenceResult r;
    try {
      r = run_inference(unit, *backend, opts);
    } catch (const Error&) {
      Manifest partial(c);
      partial.extra("resume", {{"journal", opts.journal->string()}, {"hint", "re-run the same command to resume"}});
      partial.write(dir, "partial");
      throw;
    }
    write_dataset_jsonl(predictions_to_dataset(unit, r.predictions), dir / "predictions.jsonl");
    write_text(dir / "stats.json", stats_json(r.stats).dump(2) + "\n");
    m.output(dir / "predictions.jsonl");
    m.output(dir / "stats.json");
    if (dir != fs::path(c.out)) {
      Manifest unit_manifest(c);
      unit_manifest.extra("stats", stats_json(r.stats));
      unit_manifest.write(dir, "ok");
    } else {
      m.extra("stats", stats_json(r.stats));
    }
    out << "infer " << dir.string() << ": " << r.predictions.size() << " samples, " << r.stats.requests
        << " requests, drop rate " << r.stats.drop_rate << '\n';
  }
  m.write(c.out, "ok");
  return 0;
}

std::vector<Prediction> read_predictions(const fs::path& p, Track track, const LabelSchema& schema) {
  return predictions_from_dataset(read_dataset_jsonl(p, track, schema));
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  Manifest m(c);
  const Track track = parse_track(c.track);
  const Dataset gold = read_dataset(c.gold, track, "");
  m.input(c.gold);
  m.input(c.pred);
  const auto preds = read_predictions(c.pred, track, gold.schema());
  const auto golds = predictions_from_dataset(gold);

  MetricsReport report = track == Track::A
                             ? macro_f1(preds, golds, gold.schema())
                             : pearson_score(preds, golds, gold.schema(),
                                             c.pearson_mode == "flattened" ? PearsonMode::flattened : PearsonMode::per_label);
  const fs::path stats = fs::path(c.pred).parent_path() / "stats.json";
  if (fs::exists(stats)) {
    auto j = nlohmann::json::parse(read_text(stats));
    report.drop_rate = j.value("drop_rate", 0.0);
  }
  write_text(fs::path(c.out) / "report.json", report.to_json() + "\n");
  write_text(fs::path(c.out) / "report.csv", report.to_csv());
  m.output(fs::path(c.out) / "report.json");
  m.output(fs::path(c.out) / "report.csv");
  m.extra("aggregate", report.aggregate);
  m.write(c.out, "ok");
  out << report.metric << ": " << report.aggregate << '\n';
  return 0;
}

int cmd_compare(const RunConfig& c, std::ostream& out) {
  Manifest m(c);
  const Track track = parse_track(c.track);
  const Dataset gold = read_dataset(c.gold, track, "");
  m.input(c.gold);
  m.input(c.base_pred);
  m.input(c.pairwise_pred);
  const auto golds = predictions_from_dataset(gold);
  const auto base = read_predictions(c.base_pred, track, gold.schema());
  const auto pairwise = read_predictions(c.pairwise_pred, track, gold.schema());

  const ImprovementHistogram hist = improvement_distribution(base, pairwise, golds);
  write_text(fs::path(c.out) / "improvement.csv", hist.to_csv());
  write_text(fs::path(c.out) / "improvement.svg",
             hist.to_svg("Improved samples by gold emotion count (track " + std::string(to_string(track)) + ")"));
  m.output(fs::path(c.out) / "improvement.csv");
  m.output(fs::path(c.out) / "improvement.svg");
  if (track == Track::B) {
    const auto& preds = c.intensity_from == "base" ? base : pairwise;
    const IntensityTable table = emotion_intensity_performance(preds, golds, gold.schema());
    write_text(fs::path(c.out) / "intensity.csv", table.to_csv());
    write_text(fs::path(c.out) / "intensity.json", table.to_json() + "\n");
    m.output(fs::path(c.out) / "intensity.csv");
    m.output(fs::path(c.out) / "intensity.json");
  }
  m.write(c.out, "ok");
  out << hist.to_csv();
  return 0;
}

// Prepends `--key value` pairs from a JSON config for keys not given on the
// command line, so explicit flags win.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(config_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError({"config file " + config_path + ": " + e.what()});
  }
  if (!j.is_object()) throw ConfigError({"config file must hold a JSON object"});

  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  auto scalar = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };

  std::vector<std::string> merged;
  merged.push_back(args.at(0));  // subcommand
  for (const auto& [key, value] : j.items()) {
    if (key == "config" || given(key)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) merged.push_back("--" + key);
    } else if (value.is_array()) {
      if (key == "langs" || key == "labels") {
        std::string joined;
        for (const auto& v : value) joined += (joined.empty() ? "" : ",") + scalar(v);
        merged.insert(merged.end(), {"--" + key, joined});
      } else {
        for (const auto& v : value) merged.insert(merged.end(), {"--" + key, scalar(v)});
      }
    } else if (!value.is_null()) {
      merged.insert(merged.end(), {"--" + key, scalar(value)});
    }
  }
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

void add_common(CLI::App* sub, RunConfig& c) {
  sub->add_option("--track", c.track, "Track: a (detection) or b (intensity)");
  sub->add_option("--strategy", c.strategy, "base or pairwise");
  sub->add_option("--langs", c.langs, "Comma-separated language codes");
  sub->add_option("--regime", c.regime, "separated or mixed");
  sub->add_option("--backend", c.backend, "http, mock-echo, mock-lexicon or head");
  sub->add_option("--seed", c.seed, "Seed recorded in every artifact");
  sub->add_option("--config", "JSON config file; flags override its values");
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--concurrency", c.concurrency, "Maximum in-flight requests");
  sub->add_flag("--use-logit-probs", c.use_logit_probs, "Decide pairwise answers from yes/no token probabilities");
}

}  // namespace

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error(ErrorCategory::io, "cannot allocate digest context");
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::string git_blob_hash_file(const fs::path& path) { return git_blob_hash(read_text(path)); }

int exit_code_for(std::string_view category) {
  if (category == "config") return 2;
  if (category == "data") return 3;
  if (category == "io") return 4;
  if (category == "backend") return 5;
  if (category == "parse") return 6;
  if (category == "shape") return 7;
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  CLI::App app{"Multilingual multi-label emotion detection harness", "emodetect"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  auto* split = app.add_subcommand("split", "Per-language stratified train/dev split");
  add_common(split, c);
  split->add_option("--data-dir", c.data_dir, "Directory holding <lang>.csv files");
  split->add_option("--input", c.inputs, "Dataset files (CSV or JSONL)");
  split->add_option("--dev-fraction", c.dev_fraction, "Held-out fraction per language");
  split->add_option("--labels", c.labels, "Label set for unlabeled inputs");

  auto* exp = app.add_subcommand("export", "Write instruction-tuning JSONL");
  add_common(exp, c);
  exp->add_option("--input", c.inputs, "Dataset files");

  auto* train = app.add_subcommand("train-head", "Train the classification head");
  add_common(train, c);
  train->add_option("--input", c.inputs, "Training dataset files");
  train->add_option("--dev", c.dev_inputs, "Dev dataset files for checkpoint selection");
  train->add_option("--features", c.features, "hashed or remote");
  train->add_option("--embedding-endpoint", c.embedding_endpoint, "Embedding service base URL");
  train->add_option("--feature-dim", c.feature_dim, "Hashed feature dimension");
  train->add_option("--feature-seed", c.feature_seed, "Hashed feature seed");
  train->add_option("--epochs", c.train.epochs);
  train->add_option("--lr", c.train.learning_rate);
  train->add_option("--batch-size", c.train.batch_size);
  train->add_option("--hidden-dim", c.train.hidden_dim, "0 = feature dimension");
  train->add_option("--weight-decay", c.train.weight_decay);
  train->add_option("--threshold", c.train.threshold);

  auto* infer = app.add_subcommand("infer", "Run a backend over a dataset");
  add_common(infer, c);
  infer->add_option("--input", c.inputs, "Dataset files");
  infer->add_option("--labels", c.labels, "Label set for unlabeled inputs");
  infer->add_option("--checkpoint", c.checkpoint, "Head checkpoint (backend head)");
  infer->add_option("--lexicon", c.lexicon, "Lexicon JSON (backend mock-lexicon)");
  infer->add_option("--max-new-tokens", c.max_new_tokens);
  infer->add_option("--temperature", c.temperature);
  infer->add_option("--timeout-ms", c.timeout_ms);
  infer->add_option("--max-retries", c.max_retries);
  infer->add_option("--top-logprobs", c.top_logprobs);

  auto* ev = app.add_subcommand("eval", "Score predictions against gold");
  add_common(ev, c);
  ev->add_option("--pred", c.pred, "Predictions JSONL");
  ev->add_option("--gold", c.gold, "Gold dataset");
  ev->add_option("--pearson-mode", c.pearson_mode, "per_label or flattened");

  auto* cmp = app.add_subcommand("compare", "Compare base and pairwise predictions");
  add_common(cmp, c);
  cmp->add_option("--base", c.base_pred, "Base-strategy predictions");
  cmp->add_option("--pairwise", c.pairwise_pred, "Pairwise-strategy predictions");
  cmp->add_option("--gold", c.gold, "Gold dataset");
  cmp->add_option("--intensity-from", c.intensity_from, "Predictions used for the intensity table");

  for (auto* sub : app.get_subcommands({})) {
    for (auto* opt : sub->get_options()) {
      if (opt->get_expected_max() == 1) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty() && args[0].rfind("-", 0) != 0) args = merge_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& e) {
      std::ostringstream o, e2;
      int code = app.exit(e, o, e2);
      out << o.str();
      err << e2.str();
      return code == 0 ? 0 : exit_code_for("config");
    }
    c.command = app.get_subcommands().front()->get_name();
    validate(c);
    if (c.command == "split") return cmd_split(c, out);
    if (c.command == "export") return cmd_export(c, out);
    if (c.command == "train-head") return cmd_train_head(c, out);
    if (c.command == "infer") return cmd_infer(c, out, err);
    if (c.command == "eval") return cmd_eval(c, out);
    if (c.command == "compare") return cmd_compare(c, out);
    return 1;
  } catch (const Error& e) {
    err << "error[" << to_string(e.category()) << "]: " << e.what() << '\n';
    return exit_code_for(to_string(e.category()));
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace emo::cli
