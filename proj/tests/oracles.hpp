#pragma once

// Test-only reference implementations, written as direct scalar enumerations of
// the defining formulas. Deliberately independent of the library code paths
// they verify (no shared helpers, no stabilization tricks).

#include <cmath>
#include <vector>

namespace oracle {

inline double dot(const std::vector<double>& u, const std::vector<double>& v) {
  double s = 0;
  for (size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  return dot(u, v) / (std::sqrt(dot(u, u)) * std::sqrt(dot(v, v)));
}

// -log( exp(sim(i,j)/tau) / sum_{k != i} exp(sim(i,k)/tau) ), direct form.
inline double ntxent(const std::vector<std::vector<double>>& z, int i, int j, double tau) {
  double denom = 0;
  for (size_t k = 0; k < z.size(); ++k)
    if (static_cast<int>(k) != i) denom += std::exp(cosine(z[static_cast<size_t>(i)], z[k]) / tau);
  const double num = std::exp(cosine(z[static_cast<size_t>(i)], z[static_cast<size_t>(j)]) / tau);
  return -std::log(num / denom);
}

// -(1/|A|) sum_{a in A} log( exp(sim(i,a)/tau) / sum_{k != i} exp(sim(i,k)/tau) ).
inline double anatomy_aware(const std::vector<std::vector<double>>& z, int i,
                            const std::vector<int>& positives, double tau) {
  double acc = 0;
  for (const int a : positives) acc += ntxent(z, i, a, tau);
  return acc / static_cast<double>(positives.size());
}

// Per-anchor dispatch: positives per anchor (always contains the paired view);
// mean over all anchors.
inline double awcl_batch(const std::vector<std::vector<double>>& z,
                         const std::vector<std::vector<int>>& positives, double tau) {
  double acc = 0;
  for (size_t i = 0; i < z.size(); ++i)
    acc += anatomy_aware(z, static_cast<int>(i), positives[i], tau);
  return acc / static_cast<double>(z.size());
}

// Bilinear resampling, scalar loops, half-pixel centers with edge clamping.
inline std::vector<double> resample(const std::vector<double>& img, int h, int w, int oh, int ow) {
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      double fy = (oy + 0.5) * (static_cast<double>(h) / oh) - 0.5;
      double fx = (ox + 0.5) * (static_cast<double>(w) / ow) - 0.5;
      if (fy < 0) fy = 0;
      if (fy > h - 1) fy = h - 1;
      if (fx < 0) fx = 0;
      if (fx > w - 1) fx = w - 1;
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
      const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
      const double ty = fy - y0, tx = fx - x0;
      const double v = (1 - ty) * ((1 - tx) * img[static_cast<size_t>(y0) * w + x0] +
                                   tx * img[static_cast<size_t>(y0) * w + x1]) +
                       ty * ((1 - tx) * img[static_cast<size_t>(y1) * w + x0] +
                             tx * img[static_cast<size_t>(y1) * w + x1]);
      out[static_cast<size_t>(oy) * ow + ox] = v;
    }
  return out;
}

struct ClassScores {
  std::vector<double> precision, recall, f1;
  std::vector<bool> absent;
  double macro_p = 0, macro_r = 0, macro_f1 = 0;
};

inline ClassScores classification(const std::vector<std::vector<long long>>& m) {
  const size_t k = m.size();
  ClassScores s;
  s.precision.assign(k, 0);
  s.recall.assign(k, 0);
  s.f1.assign(k, 0);
  s.absent.assign(k, false);
  int present = 0;
  for (size_t c = 0; c < k; ++c) {
    long long tp = m[c][c], row = 0, col = 0;
    for (size_t j = 0; j < k; ++j) {
      row += m[c][j];
      col += m[j][c];
    }
    const double p = col > 0 ? static_cast<double>(tp) / col : 0.0;
    const double r = row > 0 ? static_cast<double>(tp) / row : 0.0;
    s.precision[c] = p;
    s.recall[c] = r;
    s.f1[c] = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    s.absent[c] = row == 0;
    if (row > 0) {
      ++present;
      s.macro_p += p;
      s.macro_r += r;
      s.macro_f1 += s.f1[c];
    }
  }
  if (present) {
    s.macro_p /= present;
    s.macro_r /= present;
    s.macro_f1 /= present;
  }
  return s;
}

struct SegScores {
  double gaa = 0, ma = 0, miou = 0;
};

inline SegScores segmentation(const std::vector<std::vector<long long>>& m) {
  const size_t k = m.size();
  SegScores s;
  long long total = 0, trace = 0;
  for (size_t c = 0; c < k; ++c)
    for (size_t j = 0; j < k; ++j) {
      total += m[c][j];
      if (c == j) trace += m[c][j];
    }
  s.gaa = total > 0 ? static_cast<double>(trace) / total : 0.0;
  int acc_n = 0, iou_n = 0;
  for (size_t c = 0; c < k; ++c) {
    long long row = 0, col = 0;
    for (size_t j = 0; j < k; ++j) {
      row += m[c][j];
      col += m[j][c];
    }
    if (row > 0) {
      s.ma += static_cast<double>(m[c][c]) / row;
      ++acc_n;
    }
    const long long uni = row + col - m[c][c];
    if (uni > 0) {
      s.miou += static_cast<double>(m[c][c]) / uni;
      ++iou_n;
    }
  }
  if (acc_n) s.ma /= acc_n;
  if (iou_n) s.miou /= iou_n;
  return s;
}

}  // namespace oracle
