#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emo/corpus.hpp"

namespace emo {

struct ImprovementCounts {
  std::size_t base_better = 0;
  std::size_t pairwise_better = 0;
  std::size_t tie = 0;

  std::size_t total() const { return base_better + pairwise_better + tie; }
  friend bool operator==(const ImprovementCounts&, const ImprovementCounts&) = default;
};

/// Keyed by the number of gold emotions in a sample.
struct ImprovementHistogram {
  std::map<std::size_t, ImprovementCounts> buckets;

  std::size_t total() const;
  /// `bucket,base_better,pairwise_better,tie`
  std::string to_csv() const;
  /// Grouped bar chart, one group per bucket.
  std::string to_svg(const std::string& title = "") const;

  friend bool operator==(const ImprovementHistogram&, const ImprovementHistogram&) = default;
};

/// Compares per-sample F1 of two prediction sets against gold, bucketed by
/// gold emotion count (intensities binarized at level > 0).
ImprovementHistogram improvement_distribution(const std::vector<Prediction>& base,
                                              const std::vector<Prediction>& pairwise,
                                              const std::vector<Prediction>& golds);

struct IntensityCell {
  std::string emotion;
  int level = 0;
  std::size_t support = 0;                  // samples whose gold is this level
  std::optional<double> exact_match_rate;   // null when support is 0
  double pearson_contribution = 0.0;        // sums over levels to the emotion's r
  bool zero_support() const { return support == 0; }
};

struct IntensityTable {
  std::vector<IntensityCell> cells;  // schema order, levels 0..3

  /// `emotion,level,support,exact_match_rate` (empty rate when unsupported)
  std::string to_csv() const;
  std::string to_json() const;
};

/// Per (emotion, gold level) support, exact-match rate, and the share of the
/// emotion's Pearson r contributed by samples at that gold level.
IntensityTable emotion_intensity_performance(const std::vector<Prediction>& preds,
                                             const std::vector<Prediction>& golds, const LabelSchema& schema);

}  // namespace emo
