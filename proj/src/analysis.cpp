#include "emo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "emo/eval.hpp"
#include "json.hpp"

namespace emo {

std::size_t ImprovementHistogram::total() const {
  std::size_t n = 0;
  for (const auto& [bucket, c] : buckets) n += c.total();
  return n;
}

std::string ImprovementHistogram::to_csv() const {
  std::ostringstream out;
  out << "bucket,base_better,pairwise_better,tie\n";
  for (const auto& [bucket, c] : buckets)
    out << bucket << ',' << c.base_better << ',' << c.pairwise_better << ',' << c.tie << '\n';
  return out.str();
}

std::string ImprovementHistogram::to_svg(const std::string& title) const {
  constexpr int width = 640, height = 360, margin = 50, top = 40;
  std::size_t peak = 1;
  for (const auto& [b, c] : buckets) peak = std::max({peak, c.base_better, c.pairwise_better, c.tie});
  const int plot_w = width - 2 * margin, plot_h = height - top - margin;
  const std::size_t groups = std::max<std::size_t>(buckets.size(), 1);
  const double group_w = static_cast<double>(plot_w) / static_cast<double>(groups);
  const double bar_w = group_w / 4.0;
  const char* colors[] = {"#4c72b0", "#dd8452", "#9a9a9a"};
  const char* names[] = {"base better", "pairwise better", "tie"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << top + plot_h << "\" x2=\"" << margin + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << top << "\" x2=\"" << margin << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << margin - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << peak << "</text>\n";
  svg << "<text x=\"" << margin - 6 << "\" y=\"" << top + plot_h << "\" text-anchor=\"end\">0</text>\n";

  std::size_t g = 0;
  for (const auto& [bucket, c] : buckets) {
    const std::size_t values[] = {c.base_better, c.pairwise_better, c.tie};
    const double x0 = margin + group_w * static_cast<double>(g) + bar_w / 2.0;
    for (int s = 0; s < 3; ++s) {
      const double h = static_cast<double>(plot_h) * static_cast<double>(values[s]) / static_cast<double>(peak);
      svg << "<rect x=\"" << x0 + bar_w * s << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar_w * 0.9
          << "\" height=\"" << h << "\" fill=\"" << colors[s] << "\"><title>" << names[s] << ": " << values[s]
          << "</title></rect>\n";
    }
    svg << "<text x=\"" << x0 + bar_w * 1.5 << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">" << bucket
        << "</text>\n";
    ++g;
  }
  svg << "<text x=\"" << margin + plot_w / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\">number of gold emotions</text>\n";
  for (int s = 0; s < 3; ++s) {
    const int lx = margin + plot_w - 130, ly = top + 14 * s;
    svg << "<rect x=\"" << lx << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << colors[s] << "\"/>"
        << "<text x=\"" << lx + 14 << "\" y=\"" << ly + 9 << "\">" << names[s] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

ImprovementHistogram improvement_distribution(const std::vector<Prediction>& base,
                                              const std::vector<Prediction>& pairwise,
                                              const std::vector<Prediction>& golds) {
  const auto base_pairs = align_by_id(base, golds);
  const auto pair_pairs = align_by_id(pairwise, golds);
  ImprovementHistogram hist;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const LabelAssignment& gold = *base_pairs[i].second;
    std::size_t n_gold = 0;
    for (const auto& [label, v] : gold.values) n_gold += v > 0;
    const double f_base = per_sample_f1(*base_pairs[i].first, gold);
    const double f_pair = per_sample_f1(*pair_pairs[i].first, gold);
    auto& c = hist.buckets[n_gold];
    if (f_base > f_pair) ++c.base_better;
    else if (f_pair > f_base) ++c.pairwise_better;
    else ++c.tie;
  }
  return hist;
}

IntensityTable emotion_intensity_performance(const std::vector<Prediction>& preds,
                                             const std::vector<Prediction>& golds, const LabelSchema& schema) {
  if (schema.track() != Track::B) throw DataError("track mismatch: intensity analysis needs Track B");
  const auto pairs = align_by_id(preds, golds);
  for (const auto& [p, g] : pairs) {
    if (p->track != Track::B || g->track != Track::B) throw DataError("track mismatch: intensity analysis needs Track B");
  }

  IntensityTable table;
  for (const auto& label : schema.labels()) {
    std::vector<double> xs, ys;
    for (const auto& [p, g] : pairs) {
      if (!g->has(label)) continue;
      xs.push_back(p->value(label));
      ys.push_back(g->value(label));
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    if (!xs.empty()) {
      mx /= n;
      my /= n;
    }
    double sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      syy += (ys[i] - my) * (ys[i] - my);
    }
    const double denom = std::sqrt(sxx * syy);

    for (int level = 0; level <= 3; ++level) {
      IntensityCell cell{label, level, 0, std::nullopt, 0.0};
      std::size_t hits = 0;
      double contrib = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (static_cast<int>(ys[i]) != level) continue;
        ++cell.support;
        hits += xs[i] == ys[i];
        contrib += (xs[i] - mx) * (ys[i] - my);
      }
      if (cell.support > 0) cell.exact_match_rate = static_cast<double>(hits) / static_cast<double>(cell.support);
      if (denom > 0) cell.pearson_contribution = contrib / denom;
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

std::string IntensityTable::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "emotion,level,support,exact_match_rate\n";
  for (const auto& c : cells) {
    out << c.emotion << ',' << level_name(c.level) << ',' << c.support << ',';
    if (c.exact_match_rate) out << *c.exact_match_rate;
    out << '\n';
  }
  return out.str();
}

std::string IntensityTable::to_json() const {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json r;
    r["emotion"] = c.emotion;
    r["level"] = level_name(c.level);
    r["support"] = c.support;
    r["exact_match_rate"] = c.exact_match_rate ? nlohmann::ordered_json(*c.exact_match_rate) : nlohmann::ordered_json();
    r["pearson_contribution"] = c.pearson_contribution;
    r["zero_support"] = c.zero_support();
    rows.push_back(std::move(r));
  }
  return rows.dump(2);
}

}  // namespace emo
