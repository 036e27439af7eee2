#include "emo/prompting.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"

namespace emo {

namespace {

constexpr std::string_view kSystemHead =
    "You are an expert in analyzing the emotions expressed in a natural sentence. The emotional label set includes {";
constexpr std::string_view kSystemIntensity = ", with three levels of intensity: low, moderate, and high";
constexpr std::string_view kSystemTail = ". Each sentence may have one or more emotional labels, or none at all.";
constexpr std::string_view kUserHead = "Given the sentence: \"";
constexpr std::string_view kUserBaseA = "\", which emotions are expressed in it?";
constexpr std::string_view kUserBaseB = "\", which emotions and their corresponding intensities are expressed in it?";
constexpr std::string_view kUserPairA1 = "\", is the emotion ";
constexpr std::string_view kUserPairA2 = " expressed in it?";
constexpr std::string_view kUserPairB1 = "\", what is the intensity of the emotion ";
constexpr std::string_view kUserPairB2 = " expressed in it?";
constexpr std::string_view kDegreeOf = " degree of ";
constexpr std::string_view kNone = "none";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Lowercases ASCII, maps the fullwidth comma to ',' and collapses whitespace runs.
std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (text.substr(i, 3) == "\xEF\xBC\x8C") {  // U+FF0C
      c = ',';
      i += 2;
    }
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    out.push_back(c);
  }
  // Tolerate a trailing full stop and wrapping quotes.
  if (!out.empty() && out.back() == '.') out.pop_back();
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = s.find(',', start);
    std::string part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    while (!part.empty() && part.front() == ' ') part.erase(part.begin());
    while (!part.empty() && part.back() == ' ') part.pop_back();
    if (!part.empty()) parts.push_back(std::move(part));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return parts;
}

const std::string& require_target(const std::optional<std::string>& target, const LabelSchema& schema) {
  if (!target) throw DataError("pairwise rendering needs a target label");
  if (!schema.contains(*target)) throw DataError("target label '" + *target + "' is not in the schema");
  return *target;
}

}  // namespace

const char* to_string(Strategy s) { return s == Strategy::base ? "base" : "pairwise"; }

Strategy parse_strategy(std::string_view s) {
  if (s == "base") return Strategy::base;
  if (s == "pairwise") return Strategy::pairwise;
  throw DataError("unknown strategy '" + std::string(s) + "' (expected base or pairwise)");
}

const char* to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

const char* to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::unknown_label: return "UnknownLabel";
    case ParseErrorKind::malformed_degree_phrase: return "MalformedDegreePhrase";
    case ParseErrorKind::unrecognized_answer: return "UnrecognizedAnswer";
  }
  return "?";
}

ParseError::ParseError(ParseErrorKind kind, std::string offending)
    : Error(ErrorCategory::parse, std::string(to_string(kind)) + "(" + offending + ")"),
      kind_(kind),
      offending_(std::move(offending)) {}

std::string PromptInstance::request_key() const {
  return sample_id + "\x1f" + to_string(strategy) + "\x1f" + (target_label ? *target_label : std::string());
}

std::string template_version() {
  std::string all;
  for (auto part : {kSystemHead, kSystemIntensity, kSystemTail, kUserHead, kUserBaseA, kUserBaseB, kUserPairA1,
                    kUserPairA2, kUserPairB1, kUserPairB2, kDegreeOf, kNone}) {
    all.append(part);
    all.push_back('\0');
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(stable_hash(all, 0)));
  return buf;
}

std::string render_system(const LabelSchema& schema) {
  std::string out(kSystemHead);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (i) out += ", ";
    out += schema.labels()[i];
  }
  out += '}';
  if (schema.track() == Track::B) out += kSystemIntensity;
  out += kSystemTail;
  return out;
}

std::string render_user(std::string_view text, Strategy strategy, Track track, const std::string* target_label) {
  std::string out(kUserHead);
  out += text;
  if (strategy == Strategy::base) {
    out += track == Track::A ? kUserBaseA : kUserBaseB;
    return out;
  }
  if (!target_label) throw DataError("pairwise prompt needs a target label");
  out += track == Track::A ? kUserPairA1 : kUserPairB1;
  out += *target_label;
  out += track == Track::A ? kUserPairA2 : kUserPairB2;
  return out;
}

std::string render_completion(const LabelAssignment& a, const LabelSchema& schema, Strategy strategy,
                              const std::optional<std::string>& target_label) {
  validate_assignment(a, schema, true);
  if (strategy == Strategy::pairwise) {
    const std::string& target = require_target(target_label, schema);
    int v = a.value(target);
    if (schema.track() == Track::A) return v > 0 ? "yes" : "no";
    return level_name(v);
  }
  std::string out;
  for (const auto& label : schema.labels()) {
    int v = a.value(label);
    if (v <= 0) continue;
    if (!out.empty()) out += ", ";
    if (schema.track() == Track::B) {
      out += level_name(v);
      out += kDegreeOf;
    }
    out += label;
  }
  return out.empty() ? std::string(kNone) : out;
}

PromptInstance render_base_prompt(const Sample& s, const LabelSchema& schema, bool with_gold) {
  if (s.text.empty()) throw DataError("sample '" + s.id + "' has empty text");
  PromptInstance p{s.id, Strategy::base, schema.track(), {}, std::nullopt};
  p.messages.push_back({Role::system, render_system(schema)});
  p.messages.push_back({Role::user, render_user(s.text, Strategy::base, schema.track())});
  if (with_gold) {
    if (!s.gold) throw DataError("gold completion requested but sample '" + s.id + "' is unlabeled");
    p.messages.push_back({Role::assistant, render_completion(*s.gold, schema, Strategy::base)});
  }
  return p;
}

std::vector<PromptInstance> render_pairwise_prompts(const Sample& s, const LabelSchema& schema, bool with_gold) {
  if (s.text.empty()) throw DataError("sample '" + s.id + "' has empty text");
  if (with_gold && !s.gold) throw DataError("gold completion requested but sample '" + s.id + "' is unlabeled");
  const std::string system = render_system(schema);
  std::vector<PromptInstance> out;
  out.reserve(schema.size());
  for (const auto& label : schema.labels()) {
    PromptInstance p{s.id, Strategy::pairwise, schema.track(), {}, label};
    p.messages.push_back({Role::system, system});
    p.messages.push_back({Role::user, render_user(s.text, Strategy::pairwise, schema.track(), &label)});
    if (with_gold) p.messages.push_back({Role::assistant, render_completion(*s.gold, schema, Strategy::pairwise, label)});
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PromptInstance> render_prompts(const Sample& s, const LabelSchema& schema, Strategy strategy,
                                           bool with_gold) {
  if (strategy == Strategy::base) return {render_base_prompt(s, schema, with_gold)};
  return render_pairwise_prompts(s, schema, with_gold);
}

CompletionFragment parse_completion(std::string_view text, const LabelSchema& schema, Strategy strategy,
                                    const std::optional<std::string>& target_label, std::string sample_id) {
  const std::string norm = normalize(text);
  CompletionFragment frag{std::move(sample_id), std::nullopt, {}};

  if (strategy == Strategy::pairwise) {
    const std::string& target = require_target(target_label, schema);
    frag.target_label = target;
    if (schema.track() == Track::A) {
      if (norm == "yes") frag.parsed[target] = 1;
      else if (norm == "no") frag.parsed[target] = 0;
      else throw ParseError(ParseErrorKind::unrecognized_answer, std::string(text));
    } else {
      auto level = level_from_name(norm);
      if (!level) throw ParseError(ParseErrorKind::unrecognized_answer, std::string(text));
      frag.parsed[target] = *level;
    }
    return frag;
  }

  for (const auto& l : schema.labels()) frag.parsed[l] = 0;
  if (norm == kNone) return frag;
  const auto tokens = split_commas(norm);
  if (tokens.empty()) throw ParseError(ParseErrorKind::unrecognized_answer, std::string(text));

  std::set<std::string> assigned;
  for (const auto& tok : tokens) {
    if (schema.track() == Track::A) {
      if (!schema.contains(tok)) throw ParseError(ParseErrorKind::unknown_label, tok);
      frag.parsed[tok] = 1;
      continue;
    }
    // "<level> degree of <emotion>"
    std::size_t at = tok.find(kDegreeOf);
    if (at == std::string::npos) throw ParseError(ParseErrorKind::malformed_degree_phrase, tok);
    std::string level_word = tok.substr(0, at);
    std::string emotion = tok.substr(at + kDegreeOf.size());
    auto level = level_from_name(level_word);
    if (!level || emotion.empty() || emotion.find(' ') != std::string::npos)
      throw ParseError(ParseErrorKind::malformed_degree_phrase, tok);
    if (!schema.contains(emotion)) throw ParseError(ParseErrorKind::unknown_label, emotion);
    if (!assigned.insert(emotion).second && frag.parsed[emotion] != *level)
      throw ParseError(ParseErrorKind::malformed_degree_phrase, tok);
    frag.parsed[emotion] = *level;
  }
  return frag;
}

AggregateResult aggregate_pairwise(const std::vector<CompletionFragment>& fragments, const LabelSchema& schema) {
  AggregateResult result{zero_assignment(schema), 0};
  std::set<std::string> seen;
  for (const auto& f : fragments) {
    if (!f.target_label) throw DataError("aggregate_pairwise got a fragment without a target label");
    const std::string& target = *f.target_label;
    if (!schema.contains(target)) throw DataError("fragment target '" + target + "' is not in the schema");
    if (!seen.insert(target).second) throw DataError("duplicate fragment for label '" + target + "'");
    auto it = f.parsed.find(target);
    if (it == f.parsed.end()) throw DataError("fragment for '" + target + "' carries no value");
    if (it->second < 0 || it->second > max_label_value(schema.track()))
      throw DataError("fragment value out of range for '" + target + "'");
    result.assignment.values[target] = it->second;
  }
  result.dropped = schema.size() - seen.size();
  return result;
}

std::string instruction_record(const PromptInstance& p) {
  nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
  for (const auto& m : p.messages) {
    nlohmann::ordered_json jm;
    jm["role"] = to_string(m.role);
    jm["content"] = m.content;
    msgs.push_back(std::move(jm));
  }
  nlohmann::ordered_json rec;
  rec["messages"] = std::move(msgs);
  return rec.dump();
}

std::size_t export_instruction_dataset(const Dataset& d, Strategy strategy, const std::filesystem::path& path) {
  for (const Sample& s : d.samples()) {
    if (!s.gold) throw DataError("cannot export: sample '" + s.id + "' is unlabeled");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  std::size_t count = 0;
  for (const Sample& s : d.samples()) {
    for (const auto& p : render_prompts(s, d.schema_for(s.lang), strategy, true)) {
      out << instruction_record(p) << '\n';
      ++count;
    }
  }
  return count;
}

}  // namespace emo
