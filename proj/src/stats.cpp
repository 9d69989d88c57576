#include "sagefm/stats.hpp"

#include "sagefm/errors.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace sagefm {

double student_t_two_tailed(double t, double df) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

CorrelationResult pearson_with_p(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("pearson: vectors differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw TooFewObservations("pearson needs at least 3 observations");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DegenerateInput("pearson: zero variance");
  CorrelationResult out;
  out.n = n;
  out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double one_minus = 1.0 - out.r * out.r;
  if (one_minus <= 0.0 || n == 2) {
    out.p = 0.0;
  } else {
    const double df = static_cast<double>(n - 2);
    out.p = student_t_two_tailed(out.r * std::sqrt(df / one_minus), df);
  }
  return out;
}

double r2(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw InvalidArgument("r2: vectors differ in length");
  if (truth.empty()) throw DegenerateInput("r2: empty input");
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot <= 0.0) throw DegenerateInput("r2: truth has zero variance");
  return 1.0 - ss_res / ss_tot;
}

namespace {

/// Maps arbitrary labels to 0..k-1 in order of first appearance.
std::vector<int> compact_labels(std::span<const int> labels, int* k) {
  std::map<int, int> ids;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = ids.emplace(labels[i], static_cast<int>(ids.size()));
    out[i] = it->second;
  }
  *k = static_cast<int>(ids.size());
  return out;
}

double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double adjusted_rand_index(std::span<const int> labels_a, std::span<const int> labels_b) {
  if (labels_a.size() != labels_b.size()) throw InvalidArgument("ARI: label vectors differ in length");
  const std::size_t n = labels_a.size();
  if (n < 2) throw InvalidArgument("ARI needs at least 2 observations");
  int ka = 0, kb = 0;
  const auto a = compact_labels(labels_a, &ka);
  const auto b = compact_labels(labels_b, &kb);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(ka, kb);
  for (std::size_t i = 0; i < n; ++i) table(a[i], b[i]) += 1.0;
  double sum_cells = 0, sum_rows = 0, sum_cols = 0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.cols(); ++j) sum_cells += choose2(table(i, j));
  }
  for (Eigen::Index i = 0; i < table.rows(); ++i) sum_rows += choose2(table.row(i).sum());
  for (Eigen::Index j = 0; j < table.cols(); ++j) sum_cols += choose2(table.col(j).sum());
  const double expected = sum_rows * sum_cols / choose2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;  // both partitions trivial (all-one or all-singleton)
  return (sum_cells - expected) / (max_index - expected);
}

double silhouette_score(const PointMatrix& points, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (labels.size() != n) throw InvalidArgument("silhouette: label count differs from point count");
  int k = 0;
  const auto lab = compact_labels(labels, &k);
  if (k < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sizes(static_cast<std::size_t>(k), 0.0);
  for (int l : lab) sizes[static_cast<std::size_t>(l)] += 1.0;

  double total = 0.0;
  Eigen::VectorXd sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    sums.setZero();
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sums(lab[j]) += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    }
    const int own = lab[i];
    if (sizes[static_cast<std::size_t>(own)] <= 1.0) continue;  // singleton: s = 0
    const double a = sums(own) / (sizes[static_cast<std::size_t>(own)] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sums(c) / sizes[static_cast<std::size_t>(c)]);
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

double davies_bouldin(const PointMatrix& points, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (labels.size() != n) throw InvalidArgument("DBI: label count differs from point count");
  int k = 0;
  const auto lab = compact_labels(labels, &k);
  if (k < 2) return std::numeric_limits<double>::quiet_NaN();
  PointMatrix centroids = PointMatrix::Zero(k, points.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
  for (std::size_t i = 0; i < n; ++i) {
    centroids.row(lab[i]) += points.row(static_cast<Eigen::Index>(i));
    counts(lab[i]) += 1.0;
  }
  for (int c = 0; c < k; ++c) centroids.row(c) /= counts(c);
  Eigen::VectorXd scatter = Eigen::VectorXd::Zero(k);
  for (std::size_t i = 0; i < n; ++i) {
    scatter(lab[i]) += (points.row(static_cast<Eigen::Index>(i)) - centroids.row(lab[i])).norm();
  }
  scatter = scatter.cwiseQuotient(counts);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    double worst = 0.0;
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      const double sep = (centroids.row(i) - centroids.row(j)).norm();
      const double ratio = sep > 0.0 ? (scatter(i) + scatter(j)) / sep : std::numeric_limits<double>::infinity();
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

ClusterScores clustering_scores(const PointMatrix& points, std::span<const int> labels_pred,
                                std::span<const int> labels_true) {
  if (points.rows() < 2) throw InvalidArgument("clustering scores need at least 2 points");
  ClusterScores s;
  s.ari = adjusted_rand_index(labels_pred, labels_true);
  s.silhouette = silhouette_score(points, labels_pred);
  s.dbi = davies_bouldin(points, labels_pred);
  return s;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("rank-sum needs non-empty samples");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = average_ranks(pooled);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double n = na + nb;
  double rank_sum_a = 0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum_a += ranks[i];

  // Tie term sum(t^3 - t) over groups of equal values.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }

  RankSumResult out;
  out.u = rank_sum_a - na * (na + 1.0) / 2.0;
  const double mu = na * nb / 2.0;
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) {
    out.z = 0.0;
    out.p = 1.0;
    return out;
  }
  const double dev = std::max(std::abs(out.u - mu) - 0.5, 0.0);
  out.z = std::copysign(dev / std::sqrt(var), out.u - mu);
  out.p = std::clamp(std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)), 0.0, 1.0);
  return out;
}

std::vector<double> bh_fdr(std::span<const double> pvalues) {
  const std::size_t m = pvalues.size();
  for (double p : pvalues) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidP("p-value outside [0, 1]");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pvalues[i] < pvalues[j]; });
  std::vector<double> adjusted(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const double rank = static_cast<double>(k + 1);
    running = std::min(running, pvalues[order[k]] * (static_cast<double>(m) / rank));
    adjusted[order[k]] = std::min(running, 1.0);
  }
  return adjusted;
}

TTestResult two_sample_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw TooFewObservations("Welch t-test needs at least 2 values per group");
  auto moments = [](std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  TTestResult out;
  if (sa + sb <= 0.0) {
    out.df = na + nb - 2.0;
    if (ma == mb) {
      out.t = 0.0;
      out.p = 1.0;
    } else {
      out.t = std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
      out.p = 0.0;
    }
    return out;
  }
  out.t = (ma - mb) / std::sqrt(sa + sb);
  out.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  out.p = student_t_two_tailed(out.t, out.df);
  return out;
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw InvalidArgument("cosine: vectors differ in length");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu <= 0.0 || nv <= 0.0) throw DegenerateInput("cosine distance of a zero vector");
  return std::clamp(1.0 - dot / std::sqrt(nu * nv), 0.0, 2.0);
}

}  // namespace sagefm
