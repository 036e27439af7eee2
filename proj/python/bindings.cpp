#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "emo/analysis.hpp"
#include "emo/backend.hpp"
#include "emo/cli.hpp"
#include "emo/eval.hpp"
#include "emo/head.hpp"
#include "emo/prompting.hpp"
#include "json.hpp"

namespace py = pybind11;
using namespace emo;

namespace {

using Values = std::map<std::string, int>;
using PredMap = std::map<std::string, Values>;

LabelSchema make_schema(const std::vector<std::string>& labels, Track track) { return LabelSchema(labels, track); }

LabelAssignment make_assignment(const Values& v, Track track) { return LabelAssignment{track, v}; }

std::vector<Prediction> to_predictions(const PredMap& m, Track track) {
  std::vector<Prediction> out;
  for (const auto& [id, v] : m) out.push_back({id, make_assignment(v, track)});
  return out;
}

PredMap from_predictions(const std::vector<Prediction>& preds) {
  PredMap out;
  for (const auto& p : preds) out[p.sample_id] = p.assignment.values;
  return out;
}

py::object parse_json(const std::string& s) { return py::module_::import("json").attr("loads")(s); }

py::list messages_of(const PromptInstance& p) {
  py::list msgs;
  for (const auto& m : p.messages) {
    py::dict d;
    d["role"] = to_string(m.role);
    d["content"] = m.content;
    msgs.append(d);
  }
  return msgs;
}

py::dict prompt_dict(const PromptInstance& p) {
  py::dict d;
  d["sample_id"] = p.sample_id;
  d["strategy"] = to_string(p.strategy);
  d["track"] = to_string(p.track);
  d["target"] = p.target_label ? py::cast(*p.target_label) : py::none();
  d["messages"] = messages_of(p);
  return d;
}

py::list sample_records(const Dataset& d) {
  py::list out;
  for (const auto& s : d.samples()) {
    py::dict r;
    r["id"] = s.id;
    r["lang"] = s.lang;
    r["text"] = s.text;
    r["labels"] = s.gold ? py::cast(s.gold->values) : py::none();
    out.append(r);
  }
  return out;
}

Dataset dataset_from_records(const py::list& records, const std::vector<std::string>& labels, Track track) {
  std::vector<Sample> samples;
  for (const auto& item : records) {
    auto r = item.cast<py::dict>();
    Sample s{r["id"].cast<std::string>(), r["lang"].cast<std::string>(), r["text"].cast<std::string>(), std::nullopt};
    if (r.contains("labels") && !r["labels"].is_none()) s.gold = make_assignment(r["labels"].cast<Values>(), track);
    samples.push_back(std::move(s));
  }
  return Dataset(std::move(samples), make_schema(labels, track));
}

std::unique_ptr<Backend> mock_backend(const std::string& name, const Dataset& d) {
  if (name == "mock-echo") return std::make_unique<EchoGoldBackend>(d);
  if (name == "mock-lexicon") return std::make_unique<LexiconBackend>();
  throw ConfigError({"backend must be mock-echo or mock-lexicon (got '" + name + "')"});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multilingual multi-label emotion detection core";

  // the module attribute keeps the type alive
  static PyObject* emo_error = py::exception<Error>(m, "EmoError").ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(emo_error)(e.what());
      err.attr("category") = to_string(e.category());
      PyErr_SetObject(emo_error, err.ptr());
    }
  });

  py::enum_<Track>(m, "Track").value("A", Track::A).value("B", Track::B);
  py::enum_<Strategy>(m, "Strategy").value("base", Strategy::base).value("pairwise", Strategy::pairwise);

  py::class_<LabelSchema>(m, "LabelSchema")
      .def(py::init(&make_schema), py::arg("labels"), py::arg("track"))
      .def_property_readonly("labels", &LabelSchema::labels)
      .def_property_readonly("track", &LabelSchema::track)
      .def("__len__", &LabelSchema::size)
      .def("__eq__", [](const LabelSchema& a, const LabelSchema& b) { return a == b; });

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &read_dataset, py::arg("path"), py::arg("track"), py::arg("lang") = "",
                  py::arg("schema") = std::nullopt, "Read a CSV or JSONL dataset.")
      .def_static("from_records", &dataset_from_records, py::arg("records"), py::arg("labels"), py::arg("track"))
      .def_static("mix", &mix_languages, py::arg("datasets"))
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { write_dataset_jsonl(d, p); })
      .def("records", &sample_records)
      .def("split",
           [](const Dataset& d, double fraction, std::uint64_t seed) {
             auto s = internal_split(d, fraction, seed);
             return py::make_tuple(s.train, s.dev);
           },
           py::arg("dev_fraction") = 0.1, py::arg("seed") = 42)
      .def("filter_language", &filter_language)
      .def("schema_for", &Dataset::schema_for)
      .def_property_readonly("schema", &Dataset::schema)
      .def_property_readonly("langs", &Dataset::langs)
      .def_property_readonly("track", &Dataset::track)
      .def("__len__", &Dataset::size);

  m.def("template_version", &template_version);

  m.def(
      "render_prompts",
      [](const std::string& text, const std::vector<std::string>& labels, Track track, Strategy strategy,
         const std::optional<Values>& gold) {
        Sample s{"s", "", text, gold ? std::optional(make_assignment(*gold, track)) : std::nullopt};
        py::list out;
        for (const auto& p : render_prompts(s, make_schema(labels, track), strategy, gold.has_value()))
          out.append(prompt_dict(p));
        return out;
      },
      py::arg("text"), py::arg("labels"), py::arg("track"), py::arg("strategy"), py::arg("gold") = std::nullopt,
      "Chat prompts for one sentence; with gold, each carries its assistant turn.");

  m.def(
      "render_completion",
      [](const Values& a, const std::vector<std::string>& labels, Track track, Strategy strategy,
         const std::optional<std::string>& target) {
        return render_completion(make_assignment(a, track), make_schema(labels, track), strategy, target);
      },
      py::arg("assignment"), py::arg("labels"), py::arg("track"), py::arg("strategy"), py::arg("target") = std::nullopt);

  m.def(
      "parse_completion",
      [](const std::string& text, const std::vector<std::string>& labels, Track track, Strategy strategy,
         const std::optional<std::string>& target) {
        return parse_completion(text, make_schema(labels, track), strategy, target).parsed;
      },
      py::arg("text"), py::arg("labels"), py::arg("track"), py::arg("strategy"), py::arg("target") = std::nullopt);

  m.def(
      "export_instructions",
      [](const Dataset& d, Strategy strategy, const std::filesystem::path& path) {
        return export_instruction_dataset(d, strategy, path);
      },
      py::arg("dataset"), py::arg("strategy"), py::arg("path"));

  m.def(
      "macro_f1",
      [](const PredMap& preds, const PredMap& golds, const std::vector<std::string>& labels) {
        return parse_json(
            macro_f1(to_predictions(preds, Track::A), to_predictions(golds, Track::A), make_schema(labels, Track::A))
                .to_json());
      },
      py::arg("preds"), py::arg("golds"), py::arg("labels"));

  m.def(
      "pearson",
      [](const PredMap& preds, const PredMap& golds, const std::vector<std::string>& labels, const std::string& mode) {
        if (mode != "per_label" && mode != "flattened") throw ConfigError({"mode must be per_label or flattened"});
        return parse_json(pearson_score(to_predictions(preds, Track::B), to_predictions(golds, Track::B),
                                        make_schema(labels, Track::B),
                                        mode == "flattened" ? PearsonMode::flattened : PearsonMode::per_label)
                              .to_json());
      },
      py::arg("preds"), py::arg("golds"), py::arg("labels"), py::arg("mode") = "per_label");

  m.def(
      "per_sample_f1",
      [](const Values& pred, const Values& gold) {
        return per_sample_f1(make_assignment(pred, Track::A), make_assignment(gold, Track::A));
      },
      py::arg("pred"), py::arg("gold"));

  m.def(
      "improvement_distribution",
      [](const PredMap& base, const PredMap& pairwise, const PredMap& golds) {
        auto h = improvement_distribution(to_predictions(base, Track::A), to_predictions(pairwise, Track::A),
                                          to_predictions(golds, Track::A));
        std::map<std::size_t, std::map<std::string, std::size_t>> out;
        for (const auto& [b, c] : h.buckets)
          out[b] = {{"base_better", c.base_better}, {"pairwise_better", c.pairwise_better}, {"tie", c.tie}};
        return out;
      },
      py::arg("base"), py::arg("pairwise"), py::arg("golds"));

  m.def(
      "intensity_table",
      [](const PredMap& preds, const PredMap& golds, const std::vector<std::string>& labels) {
        return parse_json(emotion_intensity_performance(to_predictions(preds, Track::B),
                                                        to_predictions(golds, Track::B), make_schema(labels, Track::B))
                              .to_json());
      },
      py::arg("preds"), py::arg("golds"), py::arg("labels"));

  m.def("featurize", &featurize, py::arg("text"), py::arg("dim"), py::arg("seed") = 0);

  m.def(
      "train_head",
      [](const Dataset& train, const Dataset& dev, std::size_t feature_dim, std::uint64_t feature_seed, int epochs,
         double lr, std::size_t batch_size, std::uint64_t seed) {
        HashedNgramFeatures f(feature_dim, feature_seed);
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = lr;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_head(train, dev, f, cfg);
        }
        py::list history;
        for (const auto& e : r.history) {
          py::dict h;
          h["epoch"] = e.epoch;
          h["train_loss"] = e.train_loss;
          h["dev_macro_f1"] = e.dev_macro_f1;
          history.append(h);
        }
        HeadCheckpoint ck{r.params, train.schema(), cfg, f.describe(), feature_dim, feature_seed};
        return py::make_tuple(checkpoint_to_json(ck), history);
      },
      py::arg("train"), py::arg("dev"), py::arg("feature_dim") = 512, py::arg("feature_seed") = 13,
      py::arg("epochs") = 6, py::arg("lr") = 3e-4, py::arg("batch_size") = 8, py::arg("seed") = 42,
      "Train the classification head on hashed n-gram features. Returns (checkpoint JSON, history).");

  m.def(
      "head_probabilities",
      [](const std::string& checkpoint_json, const std::vector<std::string>& texts) {
        HeadCheckpoint ck = checkpoint_from_json(checkpoint_json);
        std::vector<std::map<std::string, double>> out;
        for (const auto& t : texts) {
          auto probs = head_forward(ck.params, featurize(t, ck.feature_dim, ck.feature_seed));
          std::map<std::string, double> row;
          for (std::size_t k = 0; k < probs.size(); ++k) row[ck.schema.labels()[k]] = probs[k];
          out.push_back(std::move(row));
        }
        return out;
      },
      py::arg("checkpoint_json"), py::arg("texts"));

  m.def(
      "pairwise_yes_probability",
      [](const std::vector<std::pair<std::string, double>>& alternatives) {
        std::vector<TokenLogprob> alts;
        for (const auto& [t, lp] : alternatives) alts.push_back({t, lp});
        return pairwise_yes_probability(Completion{"", alts});
      },
      py::arg("alternatives"), "Two-way softmax over yes/no first-token log-probabilities.");

  m.def(
      "build_chat_request",
      [](const std::string& text, const std::vector<std::string>& labels, Track track, Strategy strategy,
         const std::optional<std::string>& target, const std::string& model, int max_new_tokens, double temperature,
         bool logprobs, int top_logprobs) {
        Sample s{"s", "", text, std::nullopt};
        auto prompts = render_prompts(s, make_schema(labels, track), strategy, false);
        const PromptInstance* chosen = &prompts.front();
        for (const auto& p : prompts)
          if (target && p.target_label == target) chosen = &p;
        GenerationConfig g;
        g.max_new_tokens = max_new_tokens;
        g.temperature = temperature;
        g.want_logprobs = logprobs;
        g.top_logprobs = top_logprobs;
        return parse_json(build_chat_request(*chosen, g, model));
      },
      py::arg("text"), py::arg("labels"), py::arg("track"), py::arg("strategy"), py::arg("target") = std::nullopt,
      py::arg("model") = "emo-test", py::arg("max_new_tokens") = 32, py::arg("temperature") = 0.0,
      py::arg("logprobs") = false, py::arg("top_logprobs") = 5);

  m.def(
      "parse_chat_response",
      [](const std::string& body) {
        Completion c = parse_chat_response(body);
        py::dict d;
        d["text"] = c.text;
        if (c.first_token_alternatives) {
          py::list alts;
          for (const auto& a : *c.first_token_alternatives) alts.append(py::make_tuple(a.token, a.logprob));
          d["alternatives"] = alts;
        } else {
          d["alternatives"] = py::none();
        }
        return d;
      },
      py::arg("body"));

  m.def(
      "infer",
      [](const Dataset& d, const std::string& backend, Strategy strategy, std::size_t concurrency) {
        auto b = mock_backend(backend, d);
        InferenceOptions o;
        o.strategy = strategy;
        o.concurrency = concurrency;
        InferenceResult r;
        {
          py::gil_scoped_release release;
          r = run_inference(d, *b, o);
        }
        py::dict stats;
        stats["requests"] = r.stats.requests;
        stats["dropped"] = r.stats.dropped;
        stats["drop_rate"] = r.stats.drop_rate;
        return py::make_tuple(from_predictions(r.predictions), stats);
      },
      py::arg("dataset"), py::arg("backend") = "mock-echo", py::arg("strategy") = Strategy::base,
      py::arg("concurrency") = 1, "Run a built-in mock backend over a dataset.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> argv{"emodetect"};
        argv.insert(argv.end(), args.begin(), args.end());
        std::vector<const char*> ptrs;
        for (const auto& a : argv) ptrs.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(ptrs.size()), ptrs.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a command-line invocation in-process. Returns (exit code, stdout, stderr).");
}
