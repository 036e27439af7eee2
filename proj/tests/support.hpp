#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "emo/corpus.hpp"
#include "emo/prompting.hpp"

namespace emo::test {

inline const std::vector<std::string>& six_labels() {
  static const std::vector<std::string> labels{"anger", "disgust", "fear", "joy", "sadness", "surprise"};
  return labels;
}

inline const std::vector<std::string>& five_labels() {
  static const std::vector<std::string> labels{"anger", "fear", "joy", "sadness", "surprise"};
  return labels;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

/// Fresh scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("emo-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// `[system]`, `[user]`, `[assistant]` sections, the golden-file layout.
inline std::string transcript(const PromptInstance& p) {
  std::string out;
  for (const auto& m : p.messages) out += "[" + std::string(to_string(m.role)) + "]\n" + m.content + "\n";
  return out;
}

inline LabelAssignment random_assignment(const LabelSchema& schema, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> v(0, max_label_value(schema.track()));
  LabelAssignment a{schema.track(), {}};
  for (const auto& l : schema.labels()) a.values[l] = v(rng);
  return a;
}

/// Assignment number `code` in base (max+1) over the schema labels.
inline LabelAssignment enumerate_assignment(const LabelSchema& schema, std::size_t code) {
  const std::size_t base = static_cast<std::size_t>(max_label_value(schema.track())) + 1;
  LabelAssignment a{schema.track(), {}};
  for (const auto& l : schema.labels()) {
    a.values[l] = static_cast<int>(code % base);
    code /= base;
  }
  return a;
}

inline std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"the",   "day",   "was",    "Ich",   "habe", "nicht", "मैं",
                                              "खुश",   "hoy",   "estoy",  "très",  "ça",   "va",    "ok",
                                              "rain",  "Ёжик",  "туман",  "喜欢",  "天气", "lol",   "\"quoted\""};
  std::uniform_int_distribution<std::size_t> n(1, 8), w(0, words.size() - 1);
  std::string s;
  for (std::size_t i = 0, k = n(rng); i < k; ++i) s += (i ? " " : "") + words[w(rng)];
  return s;
}

/// Multilingual dataset where each language keeps a different subset of the
/// label set, as in per-language corpora.
inline Dataset synthetic_multilingual(std::size_t n, Track track, std::uint64_t seed) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> langs{
      {"eng", {"anger", "fear", "joy", "sadness", "surprise"}},
      {"deu", {"anger", "disgust", "fear", "joy", "sadness", "surprise"}},
      {"hin", {"anger", "disgust", "fear", "joy", "sadness", "surprise"}},
      {"esp", {"anger", "disgust", "fear", "joy", "sadness", "surprise"}},
      {"rus", {"anger", "disgust", "fear", "joy", "sadness", "surprise"}},
      {"chn", {"anger", "disgust", "fear", "joy", "sadness", "surprise"}},
      {"afr", {"anger", "disgust", "fear", "joy", "sadness"}},
  };
  std::mt19937_64 rng(seed);
  std::vector<Dataset> parts;
  std::uniform_int_distribution<std::size_t> pick(0, langs.size() - 1);
  std::vector<std::vector<Sample>> per_lang(langs.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t li = pick(rng);
    LabelSchema schema(langs[li].second, track);
    per_lang[li].push_back(
        {langs[li].first + "_" + std::to_string(i), langs[li].first, random_text(rng), random_assignment(schema, rng)});
  }
  for (std::size_t li = 0; li < langs.size(); ++li) {
    if (per_lang[li].empty()) continue;
    parts.emplace_back(std::move(per_lang[li]), LabelSchema(langs[li].second, track));
  }
  return mix_languages(parts);
}

inline Dataset synthetic_single(std::size_t n, const std::vector<std::string>& labels, Track track,
                                std::uint64_t seed, const std::string& lang = "eng") {
  std::mt19937_64 rng(seed);
  LabelSchema schema(labels, track);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i)
    samples.push_back({lang + "_" + std::to_string(i), lang, random_text(rng), random_assignment(schema, rng)});
  return Dataset(std::move(samples), schema);
}

/// Two-label data where a label is present iff its keyword occurs in the text.
inline Dataset keyword_separable(std::size_t n, std::uint64_t seed, const std::string& prefix) {
  static const std::vector<std::string> filler{"today", "we",     "went", "to",    "the",   "market", "and",
                                               "saw",   "people", "with", "their", "dogs",  "near",   "river",
                                               "after", "lunch",  "it",   "was",   "quite", "long",   "walk"};
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> len(4, 9), w(0, filler.size() - 1);
  LabelSchema schema({"joy", "anger"}, Track::A);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    const bool joy = coin(rng), anger = coin(rng);
    std::vector<std::string> words;
    for (std::size_t k = 0, m = len(rng); k < m; ++k) words.push_back(filler[w(rng)]);
    if (joy) words.insert(words.begin() + static_cast<long>(w(rng) % (words.size() + 1)), "delighted");
    if (anger) words.insert(words.begin() + static_cast<long>(w(rng) % (words.size() + 1)), "furious");
    std::string text;
    for (const auto& word : words) text += (text.empty() ? "" : " ") + word;
    samples.push_back({prefix + std::to_string(i), "eng", text, LabelAssignment{Track::A, {{"joy", joy}, {"anger", anger}}}});
  }
  return Dataset(std::move(samples), schema);
}

}  // namespace emo::test
