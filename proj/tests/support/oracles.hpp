#pragma once

// Independent reference implementations used only by tests. These are
// deliberately naive (direct nested loops, direct formulas) and share no
// code with the library paths they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace pasfuse::oracle {

struct Geometry {
  int batch, channels;
  std::array<int, 3> in{1, 1, 1};
};

inline int out_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

/// Direct convolution. x is [B, C, in0, in1, in2]; w is [O, C, K, K, K] (with
/// unit trailing kernel axes for 2D, given dims).
template <typename T>
std::vector<T> conv(const std::vector<T>& x, const Geometry& g, const std::vector<T>& w,
                    const std::vector<T>& bias, int out_ch, int K, int stride, int pad,
                    int dims, std::array<int, 3>& out) {
  std::array<int, 3> k{K, K, dims == 3 ? K : 1};
  std::array<int, 3> s{stride, stride, dims == 3 ? stride : 1};
  std::array<int, 3> p{pad, pad, dims == 3 ? pad : 0};
  for (int a = 0; a < 3; ++a) out[a] = out_extent(g.in[a], k[a], s[a], p[a]);
  std::vector<T> y(static_cast<std::size_t>(g.batch) * out_ch * out[0] * out[1] * out[2]);
  std::size_t yi = 0;
  for (int b = 0; b < g.batch; ++b)
    for (int o = 0; o < out_ch; ++o)
      for (int i = 0; i < out[0]; ++i)
        for (int j = 0; j < out[1]; ++j)
          for (int l = 0; l < out[2]; ++l) {
            T acc = bias.empty() ? T(0) : bias[o];
            for (int c = 0; c < g.channels; ++c)
              for (int m = 0; m < k[0]; ++m)
                for (int n = 0; n < k[1]; ++n)
                  for (int q = 0; q < k[2]; ++q) {
                    const int a = i * s[0] + m - p[0];
                    const int bb = j * s[1] + n - p[1];
                    const int cc = l * s[2] + q - p[2];
                    if (a < 0 || bb < 0 || cc < 0 || a >= g.in[0] || bb >= g.in[1] ||
                        cc >= g.in[2])
                      continue;
                    const T xv = x[((((std::size_t)b * g.channels + c) * g.in[0] + a) * g.in[1] +
                                    bb) * g.in[2] + cc];
                    const T wv = w[(((std::size_t)o * g.channels + c) * k[0] + m) * k[1] * k[2] +
                                   n * k[2] + q];
                    acc += xv * wv;
                  }
            y[yi++] = acc;
          }
  return y;
}

template <typename T, bool Max>
std::vector<T> pool(const std::vector<T>& x, const Geometry& g, int K, int stride, int pad,
                    int dims, std::array<int, 3>& out) {
  std::array<int, 3> k{K, K, dims == 3 ? K : 1};
  std::array<int, 3> s{stride, stride, dims == 3 ? stride : 1};
  std::array<int, 3> p{pad, pad, dims == 3 ? pad : 0};
  for (int a = 0; a < 3; ++a) out[a] = out_extent(g.in[a], k[a], s[a], p[a]);
  std::vector<T> y;
  for (int b = 0; b < g.batch; ++b)
    for (int c = 0; c < g.channels; ++c)
      for (int i = 0; i < out[0]; ++i)
        for (int j = 0; j < out[1]; ++j)
          for (int l = 0; l < out[2]; ++l) {
            T acc = Max ? -std::numeric_limits<T>::infinity() : T(0);
            for (int m = 0; m < k[0]; ++m)
              for (int n = 0; n < k[1]; ++n)
                for (int q = 0; q < k[2]; ++q) {
                  const int a = i * s[0] + m - p[0];
                  const int bb = j * s[1] + n - p[1];
                  const int cc = l * s[2] + q - p[2];
                  if (a < 0 || bb < 0 || cc < 0 || a >= g.in[0] || bb >= g.in[1] || cc >= g.in[2])
                    continue;
                  const T v = x[((((std::size_t)b * g.channels + c) * g.in[0] + a) * g.in[1] + bb) *
                                    g.in[2] + cc];
                  if constexpr (Max) acc = std::max(acc, v);
                  else acc += v;
                }
            if constexpr (!Max) acc /= T(k[0] * k[1] * k[2]);
            y.push_back(acc);
          }
  return y;
}

/// AUC as P(score_pos > score_neg) + 0.5 P(tie), by enumerating pairs.
inline double auc_pairwise(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Two-sided p-value of Student's t by Simpson integration of the density.
inline double t_two_sided_p(double t, int dof) {
  const double nu = dof;
  const double c = std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) /
                   std::sqrt(nu * 3.14159265358979323846);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / nu, -(nu + 1) / 2); };
  const int n = 200000;
  const double a = 0, b = std::fabs(t), h = (b - a) / n;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4 : 2);
  const double central = s * h / 3;  // P(0 < T < |t|)
  return 1.0 - 2.0 * central;
}

/// Benjamini-Hochberg by the definition: adj_i = min_{j: p_j >= p_i} p_j m / rank_j.
inline std::vector<double> bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      // rank of p_j (1-based, ties broken by index)
      std::size_t rank = 1;
      for (std::size_t l = 0; l < m; ++l) {
        if (p[l] < p[j] || (p[l] == p[j] && l < j)) ++rank;
      }
      std::size_t rank_i = 1;
      for (std::size_t l = 0; l < m; ++l) {
        if (p[l] < p[i] || (p[l] == p[i] && l < i)) ++rank_i;
      }
      if (rank >= rank_i) best = std::min(best, p[j] * m / rank);
    }
    out[i] = best;
  }
  return out;
}

}  // namespace pasfuse::oracle
