#include "emo/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace emo {

namespace {

constexpr std::string_view kLevelNames[] = {"none", "low", "moderate", "high"};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// RFC 4180 records: comma separated, double-quote escaping, quoted fields may
// span lines. Returns (line number, fields) per record.
std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(std::string_view text) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<std::pair<std::size_t, std::vector<std::string>>> records;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t record_line = 1;

  auto end_record = [&] {
    fields.push_back(std::move(field));
    field.clear();
    bool blank = fields.size() == 1 && fields[0].empty();
    if (!blank) records.emplace_back(record_line, std::move(fields));
    fields.clear();
    field_started = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty())
          throw DataError("line " + std::to_string(line) + ": stray quote inside unquoted field");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        record_line = line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw DataError("unterminated quoted field starting near line " + std::to_string(record_line));
  if (!field.empty() || !fields.empty()) end_record();
  return records;
}

std::optional<int> parse_int(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::data: return "data";
    case ErrorCategory::config: return "config";
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::backend: return "backend";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

namespace {
std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                    (problems.size() == 1 ? "" : "s") + ")";
  for (const auto& p : problems) out += "\n  - " + p;
  return out;
}
}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(ErrorCategory::config, join_problems(problems)), problems_(std::move(problems)) {}

const char* to_string(Track t) { return t == Track::A ? "a" : "b"; }

Track parse_track(std::string_view s) {
  std::string v = ascii_lower(trim(s));
  if (v == "a") return Track::A;
  if (v == "b") return Track::B;
  throw DataError("unknown track '" + std::string(s) + "' (expected a or b)");
}

const char* level_name(int level) {
  if (level < 0 || level > 3) throw DataError("intensity level out of range: " + std::to_string(level));
  return kLevelNames[level].data();
}

std::optional<int> level_from_name(std::string_view name) {
  for (int i = 0; i < 4; ++i) {
    if (kLevelNames[i] == name) return i;
  }
  return std::nullopt;
}

LabelSchema::LabelSchema(std::vector<std::string> labels, Track track)
    : labels_(std::move(labels)), track_(track) {
  if (labels_.empty()) throw DataError("label schema is empty");
  std::set<std::string_view> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw DataError("empty label name in schema");
    for (char c : l) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
        throw DataError("label '" + l + "' contains whitespace");
      if (c >= 'A' && c <= 'Z') throw DataError("label '" + l + "' is not lowercase");
    }
    if (!seen.insert(l).second) throw DataError("duplicate label '" + l + "' in schema");
  }
}

bool LabelSchema::contains(std::string_view label) const { return index_of(label).has_value(); }

std::optional<std::size_t> LabelSchema::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return i;
  }
  return std::nullopt;
}

int LabelAssignment::value(std::string_view label) const {
  auto it = values.find(std::string(label));
  return it == values.end() ? 0 : it->second;
}

std::vector<std::string> LabelAssignment::active(const LabelSchema& schema) const {
  std::vector<std::string> out;
  for (const auto& l : schema.labels()) {
    if (value(l) > 0) out.push_back(l);
  }
  return out;
}

LabelAssignment zero_assignment(const LabelSchema& schema) {
  LabelAssignment a{schema.track(), {}};
  for (const auto& l : schema.labels()) a.values[l] = 0;
  return a;
}

void validate_assignment(const LabelAssignment& a, const LabelSchema& schema, bool allow_masked) {
  if (a.track != schema.track()) throw DataError("assignment track does not match schema track");
  const int hi = max_label_value(schema.track());
  for (const auto& [label, v] : a.values) {
    if (!schema.contains(label)) throw DataError("assignment has label '" + label + "' outside the schema");
    if (v < 0 || v > hi)
      throw DataError("value " + std::to_string(v) + " for '" + label + "' out of range for track " +
                      to_string(schema.track()));
  }
  if (!allow_masked && a.values.size() != schema.size())
    throw DataError("assignment does not cover every schema label");
  if (a.values.empty()) throw DataError("assignment covers no labels");
}

Dataset::Dataset(std::vector<Sample> samples, LabelSchema schema, std::map<std::string, LabelSchema> lang_schemas)
    : samples_(std::move(samples)), schema_(std::move(schema)), lang_schemas_(std::move(lang_schemas)) {
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (s.id.empty()) throw DataError("sample at position " + std::to_string(i) + " has an empty id");
    if (s.text.empty()) throw DataError("sample '" + s.id + "' has empty text");
    if (s.lang.empty()) throw DataError("sample '" + s.id + "' has an empty language tag");
    if (!index_.emplace(s.id, i).second) throw DataError("duplicate sample id '" + s.id + "'");
    langs_.insert(s.lang);
  }
  for (const auto& lang : langs_) {
    if (!lang_schemas_.count(lang)) lang_schemas_.emplace(lang, schema_);
  }
  for (auto it = lang_schemas_.begin(); it != lang_schemas_.end();) {
    if (!langs_.count(it->first)) {
      it = lang_schemas_.erase(it);
      continue;
    }
    if (it->second.track() != schema_.track()) throw DataError("language schema track mismatch for " + it->first);
    for (const auto& l : it->second.labels()) {
      if (!schema_.contains(l)) throw DataError("language schema label '" + l + "' missing from dataset schema");
    }
    ++it;
  }
  for (const Sample& s : samples_) {
    if (!s.gold) continue;
    const LabelSchema& native = lang_schemas_.at(s.lang);
    validate_assignment(*s.gold, schema_, true);
    for (const auto& l : native.labels()) {
      if (!s.gold->has(l)) throw DataError("sample '" + s.id + "' lacks a value for '" + l + "'");
    }
    for (const auto& [l, v] : s.gold->values) {
      if (!native.contains(l))
        throw DataError("sample '" + s.id + "' has label '" + l + "' outside its language schema");
    }
  }
}

bool Dataset::labeled() const {
  return std::all_of(samples_.begin(), samples_.end(), [](const Sample& s) { return s.gold.has_value(); });
}

const LabelSchema& Dataset::schema_for(const std::string& lang) const {
  auto it = lang_schemas_.find(lang);
  return it == lang_schemas_.end() ? schema_ : it->second;
}

const Sample* Dataset::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &samples_[it->second];
}

Dataset parse_dataset_csv(std::string_view content, Track track, const std::string& lang,
                          const std::optional<LabelSchema>& schema_override) {
  auto records = parse_csv(content);
  if (records.empty()) throw DataError("empty file: no header row");
  const auto& header = records.front().second;
  if (header.size() < 2) throw DataError("header must start with id,text");

  std::vector<std::string> cols;
  for (const auto& h : header) cols.push_back(ascii_lower(trim(h)));
  if (cols[0] != "id" || cols[1] != "text")
    throw DataError("header must start with id,text (got '" + header[0] + "," + header[1] + "')");

  std::vector<std::string> label_cols(cols.begin() + 2, cols.end());
  {
    std::set<std::string> seen{"id", "text"};
    for (const auto& l : label_cols) {
      if (l.empty()) throw DataError("empty column name in header");
      if (!seen.insert(l).second) throw DataError("duplicate header column '" + l + "'");
    }
  }

  LabelSchema schema;
  if (!label_cols.empty()) {
    schema = LabelSchema(label_cols, track);
    if (schema_override && !(*schema_override == schema))
      throw DataError("header labels disagree with the supplied schema");
  } else if (schema_override) {
    schema = *schema_override;
  } else {
    throw DataError("header has no label columns and no schema was supplied");
  }

  const int hi = max_label_value(track);
  std::vector<Sample> samples;
  samples.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& [line, row] = records[r];
    const std::string where = "line " + std::to_string(line);
    if (row.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(row.size()));
    Sample s{std::string(trim(row[0])), lang, row[1], std::nullopt};
    bool all_empty = true;
    for (std::size_t c = 2; c < row.size(); ++c) all_empty = all_empty && trim(row[c]).empty();
    if (!label_cols.empty() && !all_empty) {
      LabelAssignment a{track, {}};
      for (std::size_t c = 2; c < row.size(); ++c) {
        auto v = parse_int(row[c]);
        if (!v) throw DataError(where + ": non-integer label cell '" + row[c] + "' for " + label_cols[c - 2]);
        if (*v < 0 || *v > hi)
          throw DataError(where + ": label value " + std::to_string(*v) + " for " + label_cols[c - 2] +
                          " out of range for track " + to_string(track));
        a.values[label_cols[c - 2]] = *v;
      }
      s.gold = std::move(a);
    }
    samples.push_back(std::move(s));
  }
  return Dataset(std::move(samples), std::move(schema));
}

Dataset load_dataset(const std::filesystem::path& path, Track track, const std::string& lang,
                     const std::optional<LabelSchema>& schema_override) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  return parse_dataset_csv(read_file(path), track, lang, schema_override);
}

std::string serialize_dataset_jsonl(const Dataset& d) {
  std::string out;
  for (const Sample& s : d.samples()) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["lang"] = s.lang;
    j["text"] = s.text;
    if (s.gold) {
      nlohmann::ordered_json labels = nlohmann::ordered_json::object();
      for (const auto& l : d.schema_for(s.lang).labels()) {
        auto it = s.gold->values.find(l);
        if (it != s.gold->values.end()) labels[l] = it->second;
      }
      j["labels"] = std::move(labels);
    } else {
      j["labels"] = nullptr;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_dataset_jsonl(const Dataset& d, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize_dataset_jsonl(d);
}

Dataset parse_dataset_jsonl(std::string_view content, Track track, const std::optional<LabelSchema>& schema_override) {
  std::vector<Sample> samples;
  std::vector<std::string> union_labels;
  std::map<std::string, std::vector<std::string>> per_lang;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    std::string_view line = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? content.size() : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j.contains("lang"))
      throw DataError(where + ": record needs id, lang and text");
    if (!j["id"].is_string() || !j["text"].is_string() || !j["lang"].is_string())
      throw DataError(where + ": id, lang and text must be strings");
    Sample s{j["id"].get<std::string>(), j["lang"].get<std::string>(), j["text"].get<std::string>(), std::nullopt};
    if (j.contains("labels") && !j["labels"].is_null()) {
      if (!j["labels"].is_object()) throw DataError(where + ": labels must be an object");
      LabelAssignment a{track, {}};
      auto& lang_labels = per_lang[s.lang];
      for (const auto& [k, v] : j["labels"].items()) {
        if (!v.is_number_integer()) throw DataError(where + ": label '" + k + "' is not an integer");
        a.values[k] = v.get<int>();
        if (std::find(union_labels.begin(), union_labels.end(), k) == union_labels.end()) union_labels.push_back(k);
        if (std::find(lang_labels.begin(), lang_labels.end(), k) == lang_labels.end()) lang_labels.push_back(k);
      }
      s.gold = std::move(a);
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DataError("empty file: no samples");

  LabelSchema schema;
  if (schema_override) {
    schema = *schema_override;
  } else if (!union_labels.empty()) {
    schema = LabelSchema(union_labels, track);
  } else {
    throw DataError("unlabeled JSONL dataset needs an explicit schema");
  }
  std::map<std::string, LabelSchema> lang_schemas;
  for (const auto& [lang, labels] : per_lang) {
    for (const auto& l : labels) {
      if (!schema.contains(l)) throw DataError("label '" + l + "' is not in the supplied schema");
    }
    lang_schemas.emplace(lang, LabelSchema(labels, track));
  }
  return Dataset(std::move(samples), std::move(schema), std::move(lang_schemas));
}

Dataset read_dataset_jsonl(const std::filesystem::path& path, Track track, const std::optional<LabelSchema>& schema_override) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  return parse_dataset_jsonl(read_file(path), track, schema_override);
}

Dataset read_dataset(const std::filesystem::path& path, Track track, const std::string& lang_hint,
                     const std::optional<LabelSchema>& schema_override) {
  auto ext = ascii_lower(path.extension().string());
  if (ext == ".csv") {
    std::string lang = lang_hint.empty() ? path.stem().string() : lang_hint;
    return load_dataset(path, track, lang, schema_override);
  }
  if (ext == ".jsonl" || ext == ".json") return read_dataset_jsonl(path, track, schema_override);
  throw IoError("unsupported dataset extension '" + ext + "' for " + path.string());
}

std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed) {
  // FNV-1a over the bytes, seeded and finalized with splitmix64.
  std::uint64_t h = 0xCBF29CE484222325ULL ^ mix64(seed);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

namespace {
Dataset subset(const Dataset& d, const std::vector<bool>& keep) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (keep[i]) out.push_back(d.samples()[i]);
  }
  return Dataset(std::move(out), d.schema(), d.lang_schemas());
}
}  // namespace

SplitResult internal_split(const Dataset& d, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0))
    throw DataError("dev_fraction must lie strictly between 0 and 1");
  if (!d.labeled()) throw DataError("internal_split needs a labeled dataset");

  std::map<std::string, std::vector<std::size_t>> by_lang;
  for (std::size_t i = 0; i < d.size(); ++i) by_lang[d.samples()[i].lang].push_back(i);

  const auto total = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(d.size())));
  if (total == 0 || total >= d.size())
    throw DataError("dataset of " + std::to_string(d.size()) + " samples is too small for a " +
                    std::to_string(dev_fraction) + " dev split");

  // Largest-remainder apportionment of `total` across languages.
  struct Quota {
    std::string lang;
    std::size_t base;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [lang, idx] : by_lang) {
    double exact = dev_fraction * static_cast<double>(idx.size());
    auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({lang, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; assigned < total && k < order.size(); ++k, ++assigned) quotas[order[k]].base += 1;

  std::vector<bool> is_dev(d.size(), false);
  for (const Quota& q : quotas) {
    auto idx = by_lang.at(q.lang);
    std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
    ranked.reserve(idx.size());
    for (std::size_t i : idx) ranked.emplace_back(stable_hash(d.samples()[i].id, seed), i);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return d.samples()[a.second].id < d.samples()[b.second].id;
    });
    for (std::size_t k = 0; k < q.base; ++k) is_dev[ranked[k].second] = true;
  }

  std::vector<bool> is_train(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) is_train[i] = !is_dev[i];
  return {subset(d, is_train), subset(d, is_dev)};
}

Dataset mix_languages(const std::vector<Dataset>& datasets) {
  if (datasets.empty()) throw DataError("mix_languages needs at least one dataset");
  const Track track = datasets.front().track();
  std::vector<std::string> labels;
  std::vector<Sample> samples;
  std::map<std::string, LabelSchema> lang_schemas;
  for (const Dataset& d : datasets) {
    if (d.track() != track) throw DataError("cannot mix datasets of different tracks");
    for (const auto& l : d.schema().labels()) {
      if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
    }
    for (const auto& [lang, schema] : d.lang_schemas()) {
      auto [it, inserted] = lang_schemas.emplace(lang, schema);
      if (!inserted && !(it->second == schema))
        throw DataError("language '" + lang + "' appears with two different label sets");
    }
    samples.insert(samples.end(), d.samples().begin(), d.samples().end());
  }
  return Dataset(std::move(samples), LabelSchema(labels, track), std::move(lang_schemas));
}

Dataset filter_language(const Dataset& d, const std::string& lang) {
  std::vector<Sample> out;
  for (const Sample& s : d.samples()) {
    if (s.lang == lang) out.push_back(s);
  }
  if (out.empty()) throw DataError("no samples for language '" + lang + "'");
  const LabelSchema& native = d.schema_for(lang);
  return Dataset(std::move(out), native);
}

}  // namespace emo
