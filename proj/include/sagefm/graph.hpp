#pragma once

// 15-spot spatial subgraphs (a center plus its 14 nearest neighbors) and the
// distance-weighted, symmetrically normalized adjacency used by the GCN.

#include "sagefm/data.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace sagefm {

inline constexpr std::size_t kNeighborCount = 14;
inline constexpr std::size_t kSubgraphSize = kNeighborCount + 1;

/// A center is eligible only when its 14th neighbor lies within this many
/// lattice pitches. On a Visium-like lattice the 14-NN shell ends at 2 pitches.
inline constexpr double kEligibleRadiusPitches = 2.1;
/// Neighbor-neighbor edges exist when the pair is within this many pitches.
inline constexpr double kNeighborEdgePitches = 1.5;

using SubgraphMatrix = Eigen::Matrix<double, static_cast<int>(kSubgraphSize), static_cast<int>(kSubgraphSize)>;

struct Subgraph {
  std::string sample_id;
  /// Spot indices into the sample; nodes[0] is the center.
  std::array<std::uint32_t, kSubgraphSize> nodes{};
  /// distances[i] = Euclidean distance (um) from the center to nodes[i + 1].
  std::array<double, kNeighborCount> distances{};
  SubgraphMatrix pairwise_dist = SubgraphMatrix::Zero();
  /// Lattice pitch estimate of the owning sample (um).
  double pitch_um = 0.0;

  std::uint32_t center() const { return nodes[0]; }
};

struct NormalizedAdjacency {
  SubgraphMatrix a_hat = SubgraphMatrix::Identity();
  double sigma = 0.0;
};

/// Median over spots of the nearest-neighbor distance. Throws InvalidArgument
/// when the sample has fewer than two spots.
double estimate_pitch(const SampleRecord& sample);

/// One subgraph per eligible center. Neighbors are the k nearest spots by
/// Euclidean distance on (x_um, y_um), ties broken by (array_row, array_col).
/// Centers with all-zero counts, or whose 14th neighbor lies beyond
/// kEligibleRadiusPitches, are skipped. Samples with fewer than 15 spots
/// yield an empty collection.
std::vector<Subgraph> build_subgraphs(const SampleRecord& sample, std::size_t k = kNeighborCount);

/// Gaussian kernel weights exp(-d^2 / 2 sigma^2) on center-neighbor edges and
/// on neighbor pairs within kNeighborEdgePitches * pitch, unit self-loops,
/// then D^-1/2 W D^-1/2. Throws InvalidBandwidth for sigma <= 0.
NormalizedAdjacency compute_adjacency(const Subgraph& sg, double sigma);

/// A sample made ready for the model: normalized expression, its subgraphs
/// and their adjacency matrices. Immutable after construction.
struct PreparedSample {
  std::size_t sample_index = 0;  // into Dataset::samples
  std::string sample_id;
  std::string tissue;
  NormalizedMatrix expression;
  double pitch_um = 0.0;
  std::vector<Subgraph> subgraphs;
  std::vector<NormalizedAdjacency> adjacency;
};

/// sigma <= 0 selects the sample's pitch estimate as the bandwidth.
PreparedSample prepare_sample(const Dataset& dataset, std::size_t sample_index, double sigma = 0.0);

// Subgraph cache ("SAGESG01", little-endian): u64 record count, then per
// record u32 sample index, 15 x u32 node ids, 105 x f32 upper-triangle
// pairwise distances (row-major, i < j).
struct CachedSubgraph {
  std::uint32_t sample_index = 0;
  std::array<std::uint32_t, kSubgraphSize> nodes{};
  std::array<float, kSubgraphSize*(kSubgraphSize - 1) / 2> pairwise{};
  friend bool operator==(const CachedSubgraph&, const CachedSubgraph&) = default;
};

CachedSubgraph to_cached(const Subgraph& sg, std::uint32_t sample_index);
void write_subgraph_cache(const std::filesystem::path& path, const std::vector<CachedSubgraph>& records);
/// Throws CorruptData on bad magic or truncation.
std::vector<CachedSubgraph> read_subgraph_cache(const std::filesystem::path& path);

}  // namespace sagefm
