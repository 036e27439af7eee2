#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "emo/corpus.hpp"
#include "emo/prompting.hpp"

namespace emo {

struct GenerationConfig {
  int max_new_tokens = 32;
  double temperature = 0.0;  // 0 = greedy
  std::chrono::milliseconds request_timeout{60000};
  bool want_logprobs = false;
  int top_logprobs = 5;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;

  friend bool operator==(const TokenLogprob&, const TokenLogprob&) = default;
};

struct Completion {
  std::string text;
  /// Alternatives for the first generated token, when the backend reports them.
  std::optional<std::vector<TokenLogprob>> first_token_alternatives;

  friend bool operator==(const Completion&, const Completion&) = default;
};

enum class BackendErrorKind { transport, timeout, http_status, malformed_response, unsupported };

class BackendError : public Error {
 public:
  BackendError(BackendErrorKind kind, const std::string& what, int status = 0)
      : Error(ErrorCategory::backend, what), kind_(kind), status_(status) {}
  BackendErrorKind kind() const noexcept { return kind_; }
  int status() const noexcept { return status_; }
  bool transient() const noexcept;

 private:
  BackendErrorKind kind_;
  int status_;
};

/// Text-generation backend. Implementations must be safe to call from
/// several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;

  /// Rejects prompts that already carry an assistant turn.
  Completion complete(const PromptInstance& p, const GenerationConfig& cfg);

  virtual std::string name() const = 0;
  std::size_t request_count() const noexcept { return requests_.load(); }
  virtual std::size_t retry_count() const noexcept { return 0; }

 protected:
  virtual Completion do_complete(const PromptInstance& p, const GenerationConfig& cfg) = 0;

 private:
  std::atomic<std::size_t> requests_{0};
};

// Wire protocol (chat-completions subset).
std::string build_chat_request(const PromptInstance& p, const GenerationConfig& cfg, const std::string& model);
/// Throws BackendError(malformed_response) on anything outside the protocol.
Completion parse_chat_response(std::string_view body);

struct HttpBackendConfig {
  std::string endpoint;  // e.g. http://localhost:8000
  std::string api_key;
  std::string model;
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{250};
  double backoff_factor = 2.0;
  std::chrono::milliseconds max_backoff{8000};

  /// Reads EMO_ENDPOINT, EMO_API_KEY and EMO_MODEL.
  static HttpBackendConfig from_env();
};

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg);
  std::string name() const override { return "http"; }
  std::size_t retry_count() const noexcept override { return retries_.load(); }

 protected:
  Completion do_complete(const PromptInstance& p, const GenerationConfig& cfg) override;

 private:
  HttpBackendConfig cfg_;
  std::string origin_;
  std::string path_prefix_;
  std::atomic<std::size_t> retries_{0};
};

/// Answers every prompt with the rendered gold completion of its sample.
class EchoGoldBackend : public Backend {
 public:
  explicit EchoGoldBackend(const Dataset& gold);
  std::string name() const override { return "mock-echo"; }

 protected:
  Completion do_complete(const PromptInstance& p, const GenerationConfig& cfg) override;

 private:
  struct Entry {
    LabelAssignment gold;
    LabelSchema schema;
  };
  std::map<std::string, Entry, std::less<>> entries_;
};

/// Keyword spotting over the quoted sentence of the user turn. The label set
/// is read back from the system prompt.
class LexiconBackend : public Backend {
 public:
  using Lexicon = std::map<std::string, std::vector<std::string>>;

  explicit LexiconBackend(Lexicon lexicon = default_lexicon());
  static Lexicon default_lexicon();
  static Lexicon load(const std::filesystem::path& json_path);
  std::string name() const override { return "mock-lexicon"; }

 protected:
  Completion do_complete(const PromptInstance& p, const GenerationConfig& cfg) override;

 private:
  Lexicon lexicon_;
};

/// Sentence and label set embedded in rendered prompts.
std::string extract_sentence(const PromptInstance& p);
std::vector<std::string> extract_label_set(const PromptInstance& p);

/// Two-way softmax over the aggregated yes/no first-token masses.
/// Throws DataError when alternatives are missing or hold neither answer.
double pairwise_yes_probability(const Completion& c);

struct InferenceOptions {
  Strategy strategy = Strategy::base;
  GenerationConfig generation;
  std::size_t concurrency = 1;
  bool use_logit_probs = false;
  std::optional<std::filesystem::path> journal;
  std::function<void(const std::string&)> on_warning;
};

struct LatencySummary {
  double min_ms = 0, mean_ms = 0, p50_ms = 0, p95_ms = 0, max_ms = 0;
};

struct RunStats {
  std::size_t requests = 0;  // issued in this run
  std::size_t resumed = 0;   // served from the journal
  std::size_t fragments = 0;
  std::size_t dropped = 0;
  double drop_rate = 0.0;
  std::size_t retries = 0;
  std::size_t logit_decisions = 0;
  std::size_t logit_fallbacks = 0;
  LatencySummary latency;
  std::vector<std::string> parse_errors;  // first few, for logging
};

struct InferenceResult {
  std::vector<Prediction> predictions;  // dataset order
  RunStats stats;
};

/// Issues one request per sample (base) or per native label (pairwise) with
/// at most `concurrency` in flight. Predictions do not depend on scheduling.
/// When a journal path is set, completed requests are appended to it and
/// requests already present are not re-issued.
InferenceResult run_inference(const Dataset& d, Backend& backend, const InferenceOptions& opts);

/// Reads predictions written by write_predictions_jsonl (canonical dataset form).
std::vector<Prediction> predictions_from_dataset(const Dataset& d);
Dataset predictions_to_dataset(const Dataset& source, const std::vector<Prediction>& preds);

}  // namespace emo
