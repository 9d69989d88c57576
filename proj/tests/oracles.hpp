#pragma once

// Independent brute-force references for the statistics and clustering metrics.

#include "sagefm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracles {

using sagefm::PointMatrix;

/// Two-tailed Student t tail by Simpson integration of the density on
/// [0, |t|]; no special functions beyond lgamma.
inline double t_tail_by_integration(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const double a = std::abs(t);
  const int n = 20000;  // even
  const double h = a / n;
  double s = pdf(0) + pdf(a);
  for (int i = 1; i < n; ++i) s += pdf(i * h) * (i % 2 ? 4 : 2);
  const double half_mass = s * h / 3;
  return std::clamp(1.0 - 2.0 * half_mass, 0.0, 1.0);
}

/// Pair-counting ARI (Hubert-Arabie): a = same/same, b = same/diff, c = diff/same, d = diff/diff.
inline double ari_by_pairs(const std::vector<int>& x, const std::vector<int>& y) {
  double a = 0, b = 0, c = 0, d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const bool sx = x[i] == x[j], sy = y[i] == y[j];
      if (sx && sy) ++a;
      else if (sx) ++b;
      else if (sy) ++c;
      else ++d;
    }
  }
  const double den = (a + b) * (b + d) + (a + c) * (c + d);
  if (den == 0) return 1.0;
  return 2 * (a * d - b * c) / den;
}

inline double dist(const PointMatrix& p, std::size_t i, std::size_t j) {
  double s = 0;
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    const double d = p(static_cast<Eigen::Index>(i), k) - p(static_cast<Eigen::Index>(j), k);
    s += d * d;
  }
  return std::sqrt(s);
}

inline double silhouette_brute(const PointMatrix& p, const std::vector<int>& lab) {
  const std::size_t n = lab.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double own = 0;
    std::size_t own_n = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && lab[j] == lab[i]) {
        own += dist(p, i, j);
        ++own_n;
      }
    }
    if (own_n == 0) continue;
    const double a = own / static_cast<double>(own_n);
    double b = INFINITY;
    for (int c : lab) {
      if (c == lab[i]) continue;
      double s = 0;
      std::size_t m = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (lab[j] == c) {
          s += dist(p, i, j);
          ++m;
        }
      }
      b = std::min(b, s / static_cast<double>(m));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

inline double dbi_brute(const PointMatrix& p, const std::vector<int>& lab) {
  std::vector<int> ids = lab;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::size_t k = ids.size();
  std::vector<std::vector<double>> cen(k, std::vector<double>(static_cast<std::size_t>(p.cols()), 0.0));
  std::vector<double> cnt(k, 0), sc(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < lab.size(); ++i) {
      if (lab[i] != ids[c]) continue;
      cnt[c] += 1;
      for (Eigen::Index d = 0; d < p.cols(); ++d) cen[c][static_cast<std::size_t>(d)] += p(static_cast<Eigen::Index>(i), d);
    }
    for (auto& v : cen[c]) v /= cnt[c];
    for (std::size_t i = 0; i < lab.size(); ++i) {
      if (lab[i] != ids[c]) continue;
      double s = 0;
      for (Eigen::Index d = 0; d < p.cols(); ++d) {
        const double diff = p(static_cast<Eigen::Index>(i), d) - cen[c][static_cast<std::size_t>(d)];
        s += diff * diff;
      }
      sc[c] += std::sqrt(s) / cnt[c];
    }
  }
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      double s = 0;
      for (std::size_t d = 0; d < cen[i].size(); ++d) s += (cen[i][d] - cen[j][d]) * (cen[i][d] - cen[j][d]);
      worst = std::max(worst, (sc[i] + sc[j]) / std::sqrt(s));
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

/// U by direct pair comparison (ties count one half).
inline double u_by_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0;
  for (double x : a) {
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  return u;
}

/// Exact null mean/variance of U by enumerating every assignment of the
/// pooled values to group a.
inline std::pair<double, double> u_null_moments(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), na = a.size();
  double s = 0, s2 = 0, count = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) continue;
    std::vector<double> ga, gb;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? ga : gb).push_back(pooled[i]);
    const double u = u_by_pairs(ga, gb);
    s += u;
    s2 += u * u;
    ++count;
  }
  const double mean = s / count;
  return {mean, s2 / count - mean * mean};
}

/// BH by definition: adj_i = min over ranks k >= rank(i) of m p_(k) / k, capped at 1.
inline std::vector<double> bh_brute(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      // rank of j: number of values strictly smaller plus ties ordered by index.
      std::size_t rank = 1;
      for (std::size_t t = 0; t < m; ++t) {
        if (p[t] < p[j] || (p[t] == p[j] && t < j)) ++rank;
      }
      std::size_t rank_i = 1;
      for (std::size_t t = 0; t < m; ++t) {
        if (p[t] < p[i] || (p[t] == p[i] && t < i)) ++rank_i;
      }
      if (rank >= rank_i) best = std::min(best, p[j] * static_cast<double>(m) / static_cast<double>(rank));
    }
    out[i] = best;
  }
  return out;
}

inline PointMatrix random_points(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g(0, 1);
  PointMatrix p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = g(rng);
  }
  return p;
}

}  // namespace oracles
