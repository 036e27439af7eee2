#pragma once

// Reference implementations written independently of the library: metrics by
// explicit precision/recall and textbook Pearson sums, gradients by central
// differences on a naive forward pass.

#include <cmath>
#include <functional>
#include <vector>

namespace emo::oracle {

/// F1 of one label via precision and recall; 0 when undefined.
inline double f1_by_pr(const std::vector<int>& pred, const std::vector<int>& gold) {
  double tp = 0, pp = 0, gp = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tp += (pred[i] > 0 && gold[i] > 0);
    pp += pred[i] > 0;
    gp += gold[i] > 0;
  }
  if (tp == 0) return 0.0;
  const double p = tp / pp, r = tp / gp;
  return 2 * p * r / (p + r);
}

/// columns[k] holds label k over all samples.
inline double macro_f1(const std::vector<std::vector<int>>& pred_cols, const std::vector<std::vector<int>>& gold_cols) {
  double s = 0;
  for (std::size_t k = 0; k < pred_cols.size(); ++k) s += f1_by_pr(pred_cols[k], gold_cols[k]);
  return s / static_cast<double>(pred_cols.size());
}

/// n*Sxy - Sx*Sy over sqrt of the corresponding variance terms; 0 if degenerate.
inline double pearson_sums(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size()), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const long double vx = n * sxx - sx * sx, vy = n * syy - sy * sy;
  if (vx <= 0 || vy <= 0) return 0.0;
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt(vx * vy));
}

/// Naive forward pass and loss: mean clamped BCE over unmasked labels.
/// wh is d x m, wo is m x K, both row-major.
inline double head_loss(const std::vector<double>& wh, const std::vector<double>& wo, const std::vector<double>& h,
                        const std::vector<double>& y, const std::vector<int>& mask, std::size_t d, std::size_t m,
                        std::size_t K) {
  std::vector<double> a(m);
  for (std::size_t j = 0; j < m; ++j) {
    double z = 0;
    for (std::size_t i = 0; i < d; ++i) z += h[i] * wh[i * m + j];
    a[j] = std::tanh(z);
  }
  double loss = 0;
  int n = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!mask[k]) continue;
    double u = 0;
    for (std::size_t j = 0; j < m; ++j) u += a[j] * wo[j * K + k];
    double p = 1.0 / (1.0 + std::exp(-u));
    p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
    loss -= y[k] * std::log(p) + (1 - y[k]) * std::log(1 - p);
    ++n;
  }
  return loss / n;
}

/// Central-difference derivative of f at every coordinate of x.
inline std::vector<double> central_difference(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                              double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

}  // namespace emo::oracle
