#include "emo/eval.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace emo {

namespace {

void check_track(const LabelAssignment& a, Track expected) {
  if (a.track != expected) throw DataError("track mismatch between assignments and schema");
}

// Two-pass Pearson over paired values. Returns nullopt on zero variance.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::vector<std::pair<const LabelAssignment*, const LabelAssignment*>> align_by_id(
    const std::vector<Prediction>& preds, const std::vector<Prediction>& golds) {
  if (preds.size() != golds.size())
    throw DataError("id mismatch: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(golds.size()) + " gold samples");
  std::unordered_map<std::string_view, const LabelAssignment*> by_id;
  by_id.reserve(preds.size());
  for (const auto& p : preds) {
    if (!by_id.emplace(p.sample_id, &p.assignment).second)
      throw DataError("id mismatch: duplicate prediction for '" + p.sample_id + "'");
  }
  std::vector<std::pair<const LabelAssignment*, const LabelAssignment*>> out;
  out.reserve(golds.size());
  for (const auto& g : golds) {
    auto it = by_id.find(g.sample_id);
    if (it == by_id.end()) throw DataError("id mismatch: no prediction for '" + g.sample_id + "'");
    out.emplace_back(it->second, &g.assignment);
  }
  return out;
}

std::vector<std::string> MetricsReport::degenerate_labels() const {
  std::vector<std::string> out;
  for (const auto& s : per_label) {
    if (s.degenerate) out.push_back(s.label);
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["track"] = to_string(track);
  j["metric"] = metric;
  j["aggregate"] = aggregate;
  j["n_samples"] = n_samples;
  j["drop_rate"] = drop_rate;
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (const auto& s : per_label)
    labels.push_back({{"label", s.label}, {"score", s.score}, {"support", s.support}, {"degenerate", s.degenerate}});
  j["per_label"] = std::move(labels);
  j["degenerate_labels"] = degenerate_labels();
  return j.dump(2);
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "label,score,support,degenerate\n";
  for (const auto& s : per_label) out << s.label << ',' << s.score << ',' << s.support << ',' << (s.degenerate ? 1 : 0) << '\n';
  out << "aggregate," << aggregate << ',' << n_samples << ",\n";
  return out.str();
}

MetricsReport macro_f1(const std::vector<Prediction>& preds, const std::vector<Prediction>& golds,
                       const LabelSchema& schema) {
  if (schema.track() != Track::A) throw DataError("track mismatch: macro_f1 expects Track A assignments");
  const auto pairs = align_by_id(preds, golds);
  MetricsReport r;
  r.track = Track::A;
  r.metric = "macro_f1";
  r.n_samples = pairs.size();
  double sum = 0.0;
  for (const auto& label : schema.labels()) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [pred, gold] : pairs) {
      check_track(*pred, Track::A);
      check_track(*gold, Track::A);
      if (!gold->has(label)) continue;
      bool g = gold->value(label) > 0;
      bool p = pred->value(label) > 0;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    LabelScore s{label, 0.0, tp + fn, false};
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom == 0) s.degenerate = true;
    else s.score = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    sum += s.score;
    r.per_label.push_back(std::move(s));
  }
  r.aggregate = sum / static_cast<double>(schema.size());
  return r;
}

MetricsReport pearson_score(const std::vector<Prediction>& preds, const std::vector<Prediction>& golds,
                            const LabelSchema& schema, PearsonMode mode) {
  if (schema.track() != Track::B) throw DataError("track mismatch: pearson_score expects Track B assignments");
  const auto pairs = align_by_id(preds, golds);
  if (pairs.size() < 2) throw DataError("pearson_score needs at least 2 samples");
  MetricsReport r;
  r.track = Track::B;
  r.metric = mode == PearsonMode::per_label ? "pearson" : "pearson_flat";
  r.n_samples = pairs.size();

  std::vector<double> all_p, all_g;
  double sum = 0.0;
  for (const auto& label : schema.labels()) {
    std::vector<double> xs, ys;
    for (const auto& [pred, gold] : pairs) {
      check_track(*pred, Track::B);
      check_track(*gold, Track::B);
      if (!gold->has(label)) continue;
      xs.push_back(pred->value(label));
      ys.push_back(gold->value(label));
    }
    all_p.insert(all_p.end(), xs.begin(), xs.end());
    all_g.insert(all_g.end(), ys.begin(), ys.end());
    LabelScore s{label, 0.0, xs.size(), false};
    if (auto v = pearson(xs, ys)) s.score = *v;
    else s.degenerate = true;
    sum += s.score;
    r.per_label.push_back(std::move(s));
  }
  if (mode == PearsonMode::per_label) {
    r.aggregate = sum / static_cast<double>(schema.size());
  } else {
    r.aggregate = pearson(all_p, all_g).value_or(0.0);
  }
  return r;
}

double per_sample_f1(const LabelAssignment& pred, const LabelAssignment& gold) {
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  for (const auto& [label, g] : gold.values) {
    bool gp = g > 0;
    bool pp = pred.value(label) > 0;
    tp += gp && pp;
    n_pred += pp;
    n_gold += gp;
  }
  if (n_pred + n_gold == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(n_pred + n_gold);
}

}  // namespace emo
