#pragma once

#include <string>
#include <vector>

#include "emo/corpus.hpp"

namespace emo {

struct LabelScore {
  std::string label;
  double score = 0.0;
  std::size_t support = 0;  // unmasked samples (Pearson) or gold positives (F1)
  bool degenerate = false;  // zero-division (F1) or zero variance (Pearson)
};

struct MetricsReport {
  Track track = Track::A;
  std::string metric;  // macro_f1 | pearson | pearson_flat
  std::vector<LabelScore> per_label;
  double aggregate = 0.0;
  std::size_t n_samples = 0;
  double drop_rate = 0.0;

  std::vector<std::string> degenerate_labels() const;
  std::string to_json() const;
  /// One row per label plus a trailing `aggregate` row.
  std::string to_csv() const;
};

/// Corpus-level per-label F1 = 2TP / (2TP + FP + FN), averaged without
/// weights. Labels with no gold and no predicted positives score 0 and are
/// flagged degenerate. Labels masked in a sample's gold are skipped.
MetricsReport macro_f1(const std::vector<Prediction>& preds, const std::vector<Prediction>& golds,
                       const LabelSchema& schema);

enum class PearsonMode { per_label, flattened };

/// Pearson r of predicted vs gold intensities. `per_label` averages per
/// emotion; `flattened` correlates all (sample, emotion) pairs at once.
/// Zero-variance labels score 0 and are flagged degenerate.
MetricsReport pearson_score(const std::vector<Prediction>& preds, const std::vector<Prediction>& golds,
                            const LabelSchema& schema, PearsonMode mode = PearsonMode::per_label);

/// F1 between the active label sets of one sample (level > 0 counts as
/// active). Two empty sets agree perfectly.
double per_sample_f1(const LabelAssignment& pred, const LabelAssignment& gold);

/// Pairs predictions with golds by sample id, in gold order. Throws DataError
/// when the id sets differ.
std::vector<std::pair<const LabelAssignment*, const LabelAssignment*>> align_by_id(
    const std::vector<Prediction>& preds, const std::vector<Prediction>& golds);

}  // namespace emo
