#include "emo/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace emo {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void GenerationConfig::validate() const {
  std::vector<std::string> problems;
  if (max_new_tokens < 1) problems.push_back("max_new_tokens must be >= 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) problems.push_back("temperature must be finite and >= 0");
  if (request_timeout.count() <= 0) problems.push_back("request_timeout must be positive");
  if (want_logprobs && top_logprobs < 2) problems.push_back("top_logprobs must be >= 2 when logprobs are requested");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

bool BackendError::transient() const noexcept {
  switch (kind_) {
    case BackendErrorKind::transport:
    case BackendErrorKind::timeout:
      return true;
    case BackendErrorKind::http_status:
      return status_ >= 500 || status_ == 429;
    default:
      return false;
  }
}

Completion Backend::complete(const PromptInstance& p, const GenerationConfig& cfg) {
  if (p.has_completion()) throw DataError("prompt for '" + p.sample_id + "' already carries an assistant turn");
  if (p.messages.size() != 2) throw DataError("prompt must hold exactly a system and a user turn");
  requests_.fetch_add(1);
  return do_complete(p, cfg);
}

std::string build_chat_request(const PromptInstance& p, const GenerationConfig& cfg, const std::string& model) {
  ojson body;
  body["model"] = model;
  ojson msgs = ojson::array();
  for (const auto& m : p.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  body["messages"] = std::move(msgs);
  body["temperature"] = cfg.temperature;
  body["max_tokens"] = cfg.max_new_tokens;
  body["logprobs"] = cfg.want_logprobs;
  if (cfg.want_logprobs) body["top_logprobs"] = cfg.top_logprobs;
  return body.dump();
}

namespace {

[[noreturn]] void malformed(const std::string& why) {
  throw BackendError(BackendErrorKind::malformed_response, "malformed backend response: " + why);
}

double checked_logprob(const json& v) {
  if (!v.is_number()) malformed("logprob is not a number");
  double lp = v.get<double>();
  if (!std::isfinite(lp) || lp > 0.0) malformed("logprob must be finite and <= 0");
  return lp;
}

}  // namespace

Completion parse_chat_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    malformed("missing choices");
  const json& choice = j["choices"][0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object())
    malformed("missing choices[0].message");
  const json& msg = choice["message"];
  if (!msg.contains("content") || !msg["content"].is_string()) malformed("message.content is not a string");

  Completion c{msg["content"].get<std::string>(), std::nullopt};
  if (choice.contains("logprobs") && !choice["logprobs"].is_null()) {
    const json& lp = choice["logprobs"];
    if (!lp.is_object() || !lp.contains("content") || !lp["content"].is_array()) malformed("logprobs.content missing");
    if (!lp["content"].empty()) {
      const json& first = lp["content"][0];
      if (!first.is_object() || !first.contains("token") || !first["token"].is_string())
        malformed("logprobs entry lacks token");
      std::vector<TokenLogprob> alts;
      if (first.contains("top_logprobs") && first["top_logprobs"].is_array() && !first["top_logprobs"].empty()) {
        for (const json& t : first["top_logprobs"]) {
          if (!t.is_object() || !t.contains("token") || !t["token"].is_string() || !t.contains("logprob"))
            malformed("top_logprobs entry lacks token/logprob");
          alts.push_back({t["token"].get<std::string>(), checked_logprob(t["logprob"])});
        }
      } else {
        if (!first.contains("logprob")) malformed("logprobs entry lacks logprob");
        alts.push_back({first["token"].get<std::string>(), checked_logprob(first["logprob"])});
      }
      c.first_token_alternatives = std::move(alts);
    }
  }
  return c;
}

HttpBackendConfig HttpBackendConfig::from_env() {
  HttpBackendConfig cfg;
  if (const char* v = std::getenv("EMO_ENDPOINT")) cfg.endpoint = v;
  if (const char* v = std::getenv("EMO_API_KEY")) cfg.api_key = v;
  if (const char* v = std::getenv("EMO_MODEL")) cfg.model = v;
  return cfg;
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  std::vector<std::string> problems;
  if (cfg_.endpoint.empty()) problems.push_back("endpoint URL is empty (set EMO_ENDPOINT)");
  if (cfg_.model.empty()) problems.push_back("model name is empty (set EMO_MODEL)");
  if (cfg_.max_retries < 0) problems.push_back("max_retries must be >= 0");
  if (!problems.empty()) throw ConfigError(std::move(problems));

  auto scheme_end = cfg_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ConfigError({"endpoint must include a scheme: " + cfg_.endpoint});
  auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  origin_ = cfg_.endpoint.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : cfg_.endpoint.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

Completion HttpBackend::do_complete(const PromptInstance& p, const GenerationConfig& cfg) {
  const std::string body = build_chat_request(p, cfg, cfg_.model);
  const std::string path = path_prefix_ + "/v1/chat/completions";
  auto backoff = cfg_.initial_backoff;

  for (int attempt = 0;; ++attempt) {
    try {
      httplib::Client client(origin_);
      auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.request_timeout);
      auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.request_timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      httplib::Headers headers;
      if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

      auto res = client.Post(path, headers, body, "application/json");
      if (!res) {
        auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
          throw BackendError(BackendErrorKind::timeout, "request timed out: " + httplib::to_string(err));
        throw BackendError(BackendErrorKind::transport, "transport failure: " + httplib::to_string(err));
      }
      if (res->status != 200)
        throw BackendError(BackendErrorKind::http_status,
                           "backend returned HTTP " + std::to_string(res->status), res->status);
      return parse_chat_response(res->body);
    } catch (const BackendError& e) {
      if (!e.transient() || attempt >= cfg_.max_retries) {
        if (attempt > 0 && e.transient())
          throw BackendError(BackendErrorKind::transport,
                             std::string(e.what()) + " (gave up after " + std::to_string(attempt + 1) + " attempts)",
                             e.status());
        throw;
      }
    }
    retries_.fetch_add(1);
    std::this_thread::sleep_for(backoff);
    backoff = std::min(cfg_.max_backoff, std::chrono::duration_cast<std::chrono::milliseconds>(
                                             backoff * cfg_.backoff_factor));
  }
}

EchoGoldBackend::EchoGoldBackend(const Dataset& gold) {
  for (const Sample& s : gold.samples()) {
    if (!s.gold) throw DataError("echo backend needs gold for sample '" + s.id + "'");
    entries_.emplace(s.id, Entry{*s.gold, gold.schema_for(s.lang)});
  }
}

namespace {
std::vector<TokenLogprob> certain_answer(const std::string& answer) {
  const std::string other = answer == "yes" ? "no" : "yes";
  return {{answer, std::log(0.9)}, {other, std::log(0.1)}};
}
}  // namespace

Completion EchoGoldBackend::do_complete(const PromptInstance& p, const GenerationConfig& cfg) {
  auto it = entries_.find(p.sample_id);
  if (it == entries_.end())
    throw BackendError(BackendErrorKind::unsupported, "echo backend has no gold for '" + p.sample_id + "'");
  Completion c{render_completion(it->second.gold, it->second.schema, p.strategy, p.target_label), std::nullopt};
  if (cfg.want_logprobs && p.strategy == Strategy::pairwise && p.track == Track::A)
    c.first_token_alternatives = certain_answer(c.text);
  return c;
}

std::string extract_sentence(const PromptInstance& p) {
  const std::string& user = p.user();
  constexpr std::string_view head = "Given the sentence: \"";
  if (user.rfind(head, 0) != 0) throw DataError("user turn does not follow the prompt template");
  auto end = user.rfind("\", ");
  if (end == std::string::npos || end < head.size()) throw DataError("user turn does not follow the prompt template");
  return user.substr(head.size(), end - head.size());
}

std::vector<std::string> extract_label_set(const PromptInstance& p) {
  const std::string& sys = p.system();
  auto open = sys.find('{');
  auto close = sys.find('}', open);
  if (open == std::string::npos || close == std::string::npos) throw DataError("system turn holds no label set");
  std::vector<std::string> labels;
  std::string inner = sys.substr(open + 1, close - open - 1);
  std::size_t start = 0;
  while (start <= inner.size()) {
    auto comma = inner.find(',', start);
    std::string part = inner.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    part.erase(0, part.find_first_not_of(' '));
    part.erase(part.find_last_not_of(' ') + 1);
    if (!part.empty()) labels.push_back(part);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return labels;
}

LexiconBackend::LexiconBackend(Lexicon lexicon) : lexicon_(std::move(lexicon)) {
  for (auto& [emotion, words] : lexicon_) {
    for (auto& w : words) {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
  }
}

LexiconBackend::Lexicon LexiconBackend::default_lexicon() {
  return {
      {"anger", {"angry", "furious", "mad", "hate", "rage", "annoyed"}},
      {"disgust", {"disgusting", "gross", "revolting", "nasty", "sickening"}},
      {"fear", {"afraid", "scared", "terrified", "creeped", "fear", "panic", "don't do this", "dont do this"}},
      {"joy", {"happy", "glad", "joy", "love", "wonderful", "great", "delighted"}},
      {"sadness", {"sad", "cry", "crying", "miss", "lonely", "heartbroken", "tears"}},
      {"surprise", {"wow", "suddenly", "unexpected", "surprised", "shocked", "can't believe"}},
  };
}

LexiconBackend::Lexicon LexiconBackend::load(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open lexicon " + json_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("lexicon " + json_path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw DataError("lexicon must be an object of emotion -> [keywords]");
  Lexicon lex;
  for (const auto& [emotion, words] : j.items()) {
    if (!words.is_array()) throw DataError("lexicon entry '" + emotion + "' must be an array");
    for (const auto& w : words) {
      if (!w.is_string()) throw DataError("lexicon entry '" + emotion + "' holds a non-string keyword");
      lex[emotion].push_back(w.get<std::string>());
    }
  }
  return lex;
}

Completion LexiconBackend::do_complete(const PromptInstance& p, const GenerationConfig& cfg) {
  std::string text = extract_sentence(p);
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto labels = extract_label_set(p);

  auto hits = [&](const std::string& emotion) {
    auto it = lexicon_.find(emotion);
    if (it == lexicon_.end()) return 0;
    int n = 0;
    for (const auto& w : it->second) n += text.find(w) != std::string::npos ? 1 : 0;
    return std::min(n, 3);
  };

  LabelSchema schema(labels, p.track);
  LabelAssignment a = zero_assignment(schema);
  for (const auto& l : labels) a.values[l] = p.track == Track::A ? std::min(hits(l), 1) : hits(l);
  Completion c{render_completion(a, schema, p.strategy, p.target_label), std::nullopt};
  if (cfg.want_logprobs && p.strategy == Strategy::pairwise && p.track == Track::A)
    c.first_token_alternatives = certain_answer(c.text);
  return c;
}

namespace {

std::string normalize_token(const std::string& tok) {
  std::string out;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(tok[i]);
    // Skip byte-level BPE (U+0120) and sentencepiece (U+2581) word markers.
    if (c == 0xC4 && i + 1 < tok.size() && static_cast<unsigned char>(tok[i + 1]) == 0xA0) {
      ++i;
      continue;
    }
    if (c == 0xE2 && i + 2 < tok.size() && static_cast<unsigned char>(tok[i + 1]) == 0x96 &&
        static_cast<unsigned char>(tok[i + 2]) == 0x81) {
      i += 2;
      continue;
    }
    if (std::isspace(c)) continue;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

double log_sum_exp(const std::vector<double>& xs) {
  double hi = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

}  // namespace

double pairwise_yes_probability(const Completion& c) {
  if (!c.first_token_alternatives) throw DataError("completion carries no first-token alternatives");
  std::vector<double> yes, no;
  for (const auto& alt : *c.first_token_alternatives) {
    std::string t = normalize_token(alt.token);
    if (t == "yes") yes.push_back(alt.logprob);
    else if (t == "no") no.push_back(alt.logprob);
  }
  if (yes.empty() && no.empty()) throw DataError("alternatives contain neither a yes nor a no token");
  if (no.empty()) return 1.0;
  if (yes.empty()) return 0.0;
  double lp_yes = log_sum_exp(yes);
  double lp_no = log_sum_exp(no);
  // Logistic form of the two-way softmax.
  return 1.0 / (1.0 + std::exp(lp_no - lp_yes));
}

namespace {

class Journal {
 public:
  explicit Journal(std::optional<std::filesystem::path> path) : path_(std::move(path)) {
    if (!path_) return;
    if (std::filesystem::exists(*path_)) {
      std::ifstream in(*path_);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::exception&) {
          continue;  // torn final line from an interrupted run
        }
        Completion c{j.at("text").get<std::string>(), std::nullopt};
        if (j.contains("alternatives") && j["alternatives"].is_array()) {
          std::vector<TokenLogprob> alts;
          for (const auto& a : j["alternatives"]) alts.push_back({a.at("token"), a.at("logprob")});
          c.first_token_alternatives = std::move(alts);
        }
        done_[j.at("key").get<std::string>()] = std::move(c);
      }
    }
    if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
    out_.open(*path_, std::ios::app);
    if (!out_) throw IoError("cannot open journal " + path_->string());
  }

  const Completion* lookup(const std::string& key) const {
    auto it = done_.find(key);
    return it == done_.end() ? nullptr : &it->second;
  }

  void append(const std::string& key, const Completion& c) {
    if (!path_) return;
    ojson j;
    j["key"] = key;
    j["text"] = c.text;
    if (c.first_token_alternatives) {
      ojson alts = ojson::array();
      for (const auto& a : *c.first_token_alternatives) alts.push_back({{"token", a.token}, {"logprob", a.logprob}});
      j["alternatives"] = std::move(alts);
    } else {
      j["alternatives"] = nullptr;
    }
    std::lock_guard lock(mu_);
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::optional<std::filesystem::path> path_;
  std::map<std::string, Completion> done_;
  std::ofstream out_;
  std::mutex mu_;
};

struct Task {
  std::size_t sample_index;
  PromptInstance prompt;
};

LatencySummary summarize(std::vector<double> ms) {
  LatencySummary s;
  if (ms.empty()) return s;
  std::sort(ms.begin(), ms.end());
  double sum = 0;
  for (double v : ms) sum += v;
  auto pct = [&](double q) {
    auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(ms.size()))) ;
    return ms[std::min(ms.size() - 1, idx == 0 ? 0 : idx - 1)];
  };
  s.min_ms = ms.front();
  s.max_ms = ms.back();
  s.mean_ms = sum / static_cast<double>(ms.size());
  s.p50_ms = pct(0.5);
  s.p95_ms = pct(0.95);
  return s;
}

}  // namespace

InferenceResult run_inference(const Dataset& d, Backend& backend, const InferenceOptions& opts) {
  if (opts.concurrency < 1) throw ConfigError({"concurrency must be >= 1"});
  GenerationConfig gen = opts.generation;
  if (opts.use_logit_probs && opts.strategy == Strategy::pairwise && d.track() == Track::A) gen.want_logprobs = true;
  gen.validate();

  std::vector<Task> tasks;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Sample& s = d.samples()[i];
    for (auto& p : render_prompts(s, d.schema_for(s.lang), opts.strategy, false)) tasks.push_back({i, std::move(p)});
  }

  Journal journal(opts.journal);
  std::vector<std::optional<Completion>> completions(tasks.size());
  std::vector<double> latencies(tasks.size(), -1.0);
  std::size_t resumed = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (const Completion* c = journal.lookup(tasks[t].prompt.request_key())) {
      completions[t] = *c;
      ++resumed;
    }
  }

  const std::size_t retries_before = backend.retry_count();
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> issued{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    while (!stop.load()) {
      std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      if (completions[t]) continue;
      try {
        auto start = std::chrono::steady_clock::now();
        Completion c = backend.complete(tasks[t].prompt, gen);
        latencies[t] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        issued.fetch_add(1);
        journal.append(tasks[t].prompt.request_key(), c);
        completions[t] = std::move(c);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        stop.store(true);
        return;
      }
    }
  };

  const std::size_t n_threads = std::min(opts.concurrency, std::max<std::size_t>(tasks.size(), 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  InferenceResult result;
  RunStats& st = result.stats;
  st.requests = issued.load();
  st.resumed = resumed;
  st.retries = backend.retry_count() - retries_before;
  auto warn = [&](const std::string& msg) {
    if (st.parse_errors.size() < 20) st.parse_errors.push_back(msg);
    if (opts.on_warning) opts.on_warning(msg);
  };

  std::vector<double> observed;
  for (double v : latencies) {
    if (v >= 0) observed.push_back(v);
  }
  st.latency = summarize(std::move(observed));

  bool warned_no_alternatives = false;
  std::size_t t = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Sample& s = d.samples()[i];
    const LabelSchema& schema = d.schema_for(s.lang);
    if (opts.strategy == Strategy::base) {
      const Completion& c = *completions[t++];
      ++st.fragments;
      LabelAssignment a = zero_assignment(schema);
      try {
        a.values = parse_completion(c.text, schema, Strategy::base, std::nullopt, s.id).parsed;
      } catch (const ParseError& e) {
        ++st.dropped;
        warn(s.id + ": " + e.what());
      }
      result.predictions.push_back({s.id, std::move(a)});
      continue;
    }
    std::vector<CompletionFragment> frags;
    for (std::size_t k = 0; k < schema.size(); ++k, ++t) {
      const Task& task = tasks[t];
      const Completion& c = *completions[t];
      ++st.fragments;
      if (opts.use_logit_probs && schema.track() == Track::A) {
        try {
          double p_yes = pairwise_yes_probability(c);
          frags.push_back({s.id, task.prompt.target_label, {{*task.prompt.target_label, p_yes >= 0.5 ? 1 : 0}}});
          ++st.logit_decisions;
          continue;
        } catch (const DataError&) {
          ++st.logit_fallbacks;
          if (!warned_no_alternatives && opts.on_warning) {
            opts.on_warning("logit refinement unavailable for some requests; falling back to text parsing");
            warned_no_alternatives = true;
          }
        }
      }
      try {
        frags.push_back(parse_completion(c.text, schema, Strategy::pairwise, task.prompt.target_label, s.id));
      } catch (const ParseError& e) {
        warn(s.id + "/" + *task.prompt.target_label + ": " + e.what());
      }
    }
    auto agg = aggregate_pairwise(frags, schema);
    st.dropped += agg.dropped;
    result.predictions.push_back({s.id, std::move(agg.assignment)});
  }
  st.drop_rate = st.fragments ? static_cast<double>(st.dropped) / static_cast<double>(st.fragments) : 0.0;
  return result;
}

std::vector<Prediction> predictions_from_dataset(const Dataset& d) {
  std::vector<Prediction> out;
  out.reserve(d.size());
  for (const Sample& s : d.samples()) {
    if (!s.gold) throw DataError("sample '" + s.id + "' carries no labels");
    out.push_back({s.id, *s.gold});
  }
  return out;
}

Dataset predictions_to_dataset(const Dataset& source, const std::vector<Prediction>& preds) {
  std::vector<Sample> samples;
  samples.reserve(preds.size());
  for (const Prediction& p : preds) {
    const Sample* s = source.find(p.sample_id);
    if (!s) throw DataError("prediction for unknown sample '" + p.sample_id + "'");
    samples.push_back({s->id, s->lang, s->text, p.assignment});
  }
  return Dataset(std::move(samples), source.schema(), source.lang_schemas());
}

}  // namespace emo
