#pragma once

// Hidden-layer embeddings and the analyses run on them: PCA, k-means,
// centroid distance matrices, neighborhood ranks, DEG tables, linear probe.

#include "sagefm/gcn.hpp"
#include "sagefm/graph.hpp"
#include "sagefm/stats.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sagefm {

struct SpotKey {
  std::string sample_id;
  std::uint32_t spot = 0;
  friend bool operator==(const SpotKey&, const SpotKey&) = default;
};

struct EmbeddingMatrix {
  PointMatrix vectors;  // one row per spot
  std::vector<SpotKey> keys;
  std::size_t layer = 0;  // 1-based conv layer
};

/// Center activation after conv layer `layer` (1-based) with nothing masked,
/// one row per subgraph in sample then subgraph order. Throws InvalidLayer.
EmbeddingMatrix extract_embeddings(const ModelParams<float>& params, const std::vector<PreparedSample>& samples,
                                   std::size_t layer = 3, std::size_t batch_size = 64);

/// Normalized expression of the same centers, same row order.
EmbeddingMatrix center_expression(const std::vector<PreparedSample>& samples);

// "SAGEEM01", little-endian: u64 rows, u64 dim, u64 layer, key table
// (u32 id length, id bytes, u32 spot) per row, then f32 row-major values.
void write_embeddings(const EmbeddingMatrix& e, const std::filesystem::path& path);
/// Throws CorruptData.
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

/// Column-centered projection onto the leading right-singular vectors, each
/// sign-fixed so its largest-magnitude loading is positive. Returns X
/// unchanged when d <= components. Throws InvalidComponents.
PointMatrix pca_reduce(const PointMatrix& x, std::size_t components = 200);

struct KMeansResult {
  std::vector<int> labels;
  double inertia = 0.0;
  PointMatrix centroids;
};

/// k-means++ seeding, Lloyd iterations, best of `restarts` by inertia.
/// Empty clusters are re-seeded from the point farthest from its centroid.
/// Throws InvalidK.
KMeansResult kmeans(const PointMatrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                    std::size_t max_iter = 300, double tol = 1e-6);

struct KSelection {
  std::size_t best_k = 0;
  std::vector<std::pair<std::size_t, double>> silhouette_by_k;
};

/// Ties go to the smaller k.
KSelection select_k_by_silhouette(const PointMatrix& x, std::size_t k_min, std::size_t k_max, std::uint64_t seed);

struct CentroidDistances {
  std::vector<std::string> labels;  // sorted
  Eigen::MatrixXd raw;
  Eigen::MatrixXd normalized;  // raw / max off-diagonal entry
};

/// Cosine distances between per-label mean vectors. Throws DegenerateCentroid
/// for a zero centroid and InvalidArgument on size mismatch.
CentroidDistances centroid_distance_analysis(const PointMatrix& x, const std::vector<std::string>& labels);

struct PreservationError {
  std::vector<double> errors;  // strict upper triangle, row-major, reference label order
  double mean = 0.0;
};

/// Throws LabelMismatch.
PreservationError matrix_preservation_error(const CentroidDistances& candidate, const CentroidDistances& reference);

struct NeighborRank {
  std::string sample_id;
  double mean_rank = 0.0;
  std::size_t peers = 0;
};

struct NeighborhoodReport {
  std::vector<NeighborRank> per_sample;
  std::vector<std::string> skipped;  // singleton tissues
  double global_mean = 0.0;
};

/// Throws NoComparableTissues.
NeighborhoodReport neighborhood_rank(const CentroidDistances& sample_distances,
                                     const std::map<std::string, std::string>& tissue_of);

struct DegEntry {
  std::size_t gene = 0;
  int direction = 0;  // sign of mean(cluster) - mean(rest)
  double u = 0.0;
  double p = 1.0;
  double p_adj = 1.0;
  bool significant = false;
};

struct DegTable {
  int cluster = 0;
  std::vector<DegEntry> entries;  // tested genes in gene order
  std::size_t significant = 0;
};

struct DegResult {
  std::vector<DegTable> tables;  // one per cluster, ascending label
  std::size_t genes_excluded = 0;  // constant across all spots
};

/// Throws InvalidArgument for fewer than two clusters or a size mismatch.
DegResult deg_one_vs_rest(const PointMatrix& expression, std::span<const int> labels, double fdr = 0.05);

struct ProbeResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Seeded row split into (train, test) index lists.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> probe_split(std::size_t n, double test_fraction,
                                                                           std::uint64_t seed);

/// Multinomial logistic regression on standardized features, full-batch
/// gradient descent from zero weights. Throws MissingClass.
ProbeResult linear_probe(const PointMatrix& x, std::span<const int> labels, const std::vector<std::size_t>& train,
                         const std::vector<std::size_t>& test, std::size_t iterations = 500, double lr = 0.5,
                         double l2 = 1e-4);

}  // namespace sagefm
