#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emo/corpus.hpp"

namespace emo {

enum class Strategy { base, pairwise };

const char* to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

enum class Role { system, user, assistant };
const char* to_string(Role r);

struct Message {
  Role role;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

/// A system/user(/assistant) instruction prompt. The assistant turn is only
/// present when the prompt carries its gold completion.
struct PromptInstance {
  std::string sample_id;
  Strategy strategy = Strategy::base;
  Track track = Track::A;
  std::vector<Message> messages;
  std::optional<std::string> target_label;

  bool has_completion() const { return messages.size() == 3; }
  const std::string& system() const { return messages.at(0).content; }
  const std::string& user() const { return messages.at(1).content; }
  /// Key identifying the request: sample id plus the pairwise target, if any.
  std::string request_key() const;

  friend bool operator==(const PromptInstance&, const PromptInstance&) = default;
};

/// Per-sample parse result. Pairwise fragments constrain exactly one label.
struct CompletionFragment {
  std::string sample_id;
  std::optional<std::string> target_label;
  std::map<std::string, int> parsed;
};

enum class ParseErrorKind { unknown_label, malformed_degree_phrase, unrecognized_answer };
const char* to_string(ParseErrorKind k);

class ParseError : public Error {
 public:
  ParseError(ParseErrorKind kind, std::string offending);
  ParseErrorKind kind() const noexcept { return kind_; }
  const std::string& offending() const noexcept { return offending_; }

 private:
  ParseErrorKind kind_;
  std::string offending_;
};

/// Digest over every template string; changes whenever wording changes.
std::string template_version();

std::string render_system(const LabelSchema& schema);
std::string render_user(std::string_view text, Strategy strategy, Track track,
                        const std::string* target_label = nullptr);

/// Gold completion text for an assignment. Base completions list labels in
/// schema order; pairwise completions answer for `target_label` only.
std::string render_completion(const LabelAssignment& a, const LabelSchema& schema, Strategy strategy,
                              const std::optional<std::string>& target_label = std::nullopt);

PromptInstance render_base_prompt(const Sample& s, const LabelSchema& schema, bool with_gold);
std::vector<PromptInstance> render_pairwise_prompts(const Sample& s, const LabelSchema& schema, bool with_gold);
std::vector<PromptInstance> render_prompts(const Sample& s, const LabelSchema& schema, Strategy strategy,
                                           bool with_gold);

/// Inverse of render_completion. Case-insensitive and whitespace tolerant;
/// throws ParseError carrying the offending text.
CompletionFragment parse_completion(std::string_view text, const LabelSchema& schema, Strategy strategy,
                                    const std::optional<std::string>& target_label = std::nullopt,
                                    std::string sample_id = {});

struct AggregateResult {
  LabelAssignment assignment;
  std::size_t dropped = 0;
};

/// Composes per-label fragments into one assignment. Labels without a
/// fragment default to 0 and are counted in `dropped`.
AggregateResult aggregate_pairwise(const std::vector<CompletionFragment>& fragments, const LabelSchema& schema);

/// JSON Lines `{"messages":[...]}` records, one per prompt. Returns the record count.
std::size_t export_instruction_dataset(const Dataset& d, Strategy strategy, const std::filesystem::path& path);
std::string instruction_record(const PromptInstance& p);

}  // namespace emo
