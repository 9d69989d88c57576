#pragma once

// Statistical tests and clustering metrics used by the evaluation modules.

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace sagefm {

struct CorrelationResult {
  double r = 0.0;
  std::size_t n = 0;
  double p = 1.0;  // two-tailed
};

/// Product-moment r with a two-tailed p from t = r sqrt((n-2)/(1-r^2)) on
/// n-2 degrees of freedom; |r| = 1 gives p = 0.
/// Throws TooFewObservations (n < 3) or DegenerateInput (zero variance).
CorrelationResult pearson_with_p(std::span<const double> x, std::span<const double> y);

/// 1 - SS_res / SS_tot. Throws DegenerateInput when truth has zero variance.
double r2(std::span<const double> pred, std::span<const double> truth);

/// Undefined silhouette / DBI (single predicted cluster) are reported as NaN.
struct ClusterScores {
  double ari = 0.0;
  double dbi = std::numeric_limits<double>::quiet_NaN();
  double silhouette = std::numeric_limits<double>::quiet_NaN();
};

/// Rows of `points` are observations.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double adjusted_rand_index(std::span<const int> labels_a, std::span<const int> labels_b);
/// Mean silhouette with Euclidean distances; singleton clusters score 0.
double silhouette_score(const PointMatrix& points, std::span<const int> labels);
double davies_bouldin(const PointMatrix& points, std::span<const int> labels);
ClusterScores clustering_scores(const PointMatrix& points, std::span<const int> labels_pred,
                                std::span<const int> labels_true);

struct RankSumResult {
  double u = 0.0;  // U statistic of the first sample
  double z = 0.0;
  double p = 1.0;  // two-tailed, normal approximation, tie + continuity corrected
};

/// Throws InvalidArgument when either sample is empty.
RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b);

/// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Benjamini-Hochberg step-up adjusted p-values in input order.
/// Throws InvalidP for values outside [0, 1].
std::vector<double> bh_fdr(std::span<const double> pvalues);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Welch two-sample t-test. Zero variance in both groups gives t = 0, p = 1
/// for equal means and t = +-inf, p = 0 otherwise.
/// Throws TooFewObservations when a group has fewer than two values.
TTestResult two_sample_t(std::span<const double> a, std::span<const double> b);

/// 1 - u.v / (|u||v|). Throws DegenerateInput for a zero vector.
double cosine_distance(std::span<const double> u, std::span<const double> v);

/// Two-tailed Student-t tail probability P(|T| >= |t|).
double student_t_two_tailed(double t, double df);

}  // namespace sagefm
