#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emo/errors.hpp"

namespace emo {

/// Competition track: A = multi-label presence, B = ordinal intensity.
enum class Track { A, B };

const char* to_string(Track t);
Track parse_track(std::string_view s);

/// Ordinal intensity none < low < moderate < high.
enum class IntensityLevel : int { none = 0, low = 1, moderate = 2, high = 3 };

const char* level_name(int level);
/// Returns the level for one of the four names, std::nullopt otherwise.
std::optional<int> level_from_name(std::string_view name);

/// Largest valid label value for a track (1 for A, 3 for B).
inline int max_label_value(Track t) { return t == Track::A ? 1 : 3; }

class LabelSchema {
 public:
  LabelSchema() = default;
  /// Throws DataError when labels are empty, duplicated, not lowercase or contain whitespace.
  LabelSchema(std::vector<std::string> labels, Track track);

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  Track track() const noexcept { return track_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool contains(std::string_view label) const;
  std::optional<std::size_t> index_of(std::string_view label) const;

  friend bool operator==(const LabelSchema&, const LabelSchema&) = default;

 private:
  std::vector<std::string> labels_;
  Track track_ = Track::A;
};

/// Per-emotion values. A label missing from `values` is absent-by-schema
/// (masked): it takes no part in losses or metrics for that sample.
struct LabelAssignment {
  Track track = Track::A;
  std::map<std::string, int> values;

  bool has(std::string_view label) const { return values.find(std::string(label)) != values.end(); }
  /// Value of a label, 0 when masked.
  int value(std::string_view label) const;
  /// Labels with value > 0, in schema order.
  std::vector<std::string> active(const LabelSchema& schema) const;

  friend bool operator==(const LabelAssignment&, const LabelAssignment&) = default;
};

/// All-zero assignment over every label of the schema.
LabelAssignment zero_assignment(const LabelSchema& schema);

/// Throws DataError when keys differ from the schema or a value is out of range.
void validate_assignment(const LabelAssignment& a, const LabelSchema& schema, bool allow_masked = false);

struct Sample {
  std::string id;
  std::string lang;
  std::string text;
  std::optional<LabelAssignment> gold;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// A predicted (or gold) assignment keyed by sample id.
struct Prediction {
  std::string sample_id;
  LabelAssignment assignment;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

class Dataset {
 public:
  Dataset() = default;
  /// Validates ids, texts and gold assignments. `lang_schemas` defaults to
  /// `schema` for every language present.
  Dataset(std::vector<Sample> samples, LabelSchema schema,
          std::map<std::string, LabelSchema> lang_schemas = {});

  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const LabelSchema& schema() const noexcept { return schema_; }
  Track track() const noexcept { return schema_.track(); }
  const std::set<std::string>& langs() const noexcept { return langs_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  bool labeled() const;

  /// Native label set for a language; the union schema for unknown languages.
  const LabelSchema& schema_for(const std::string& lang) const;
  const std::map<std::string, LabelSchema>& lang_schemas() const noexcept { return lang_schemas_; }

  const Sample* find(std::string_view id) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<Sample> samples_;
  LabelSchema schema_;
  std::map<std::string, LabelSchema> lang_schemas_;
  std::set<std::string> langs_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Reads a per-language CSV with header `id,text,<label1>,...`. A header of
/// only `id,text` (or rows whose label cells are all empty) yields unlabeled
/// samples; `schema_override` supplies the schema in that case.
Dataset load_dataset(const std::filesystem::path& path, Track track, const std::string& lang,
                     const std::optional<LabelSchema>& schema_override = std::nullopt);
Dataset parse_dataset_csv(std::string_view content, Track track, const std::string& lang,
                          const std::optional<LabelSchema>& schema_override = std::nullopt);

/// Canonical JSON Lines form: one `{"id","lang","text","labels"}` object per line.
std::string serialize_dataset_jsonl(const Dataset& d);
void write_dataset_jsonl(const Dataset& d, const std::filesystem::path& path);
/// Schema is the first-seen union of label keys unless `schema_override` is given.
Dataset parse_dataset_jsonl(std::string_view content, Track track,
                            const std::optional<LabelSchema>& schema_override = std::nullopt);
Dataset read_dataset_jsonl(const std::filesystem::path& path, Track track,
                           const std::optional<LabelSchema>& schema_override = std::nullopt);

/// Dispatches on extension: `.csv` or `.jsonl`/`.json`.
Dataset read_dataset(const std::filesystem::path& path, Track track, const std::string& lang_hint,
                     const std::optional<LabelSchema>& schema_override = std::nullopt);

struct SplitResult {
  Dataset train;
  Dataset dev;
};

/// Per-language stratified hold-out. Within each language, samples are
/// ranked by a seeded hash of their id and the lowest-ranked become dev.
/// Per-language dev counts are apportioned by largest remainder so the total
/// equals round(dev_fraction * |d|). Output keeps input order.
SplitResult internal_split(const Dataset& d, double dev_fraction, std::uint64_t seed);

/// Concatenates datasets of one track under the first-seen union schema.
Dataset mix_languages(const std::vector<Dataset>& datasets);

/// Samples of a single language (keeps that language's native schema).
Dataset filter_language(const Dataset& d, const std::string& lang);

/// Seeded 64-bit hash of a byte string, stable across platforms.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed);

}  // namespace emo
