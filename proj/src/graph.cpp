#include "sagefm/graph.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/log.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>

namespace sagefm {

namespace {

double distance(const SpotPosition& a, const SpotPosition& b) { return std::hypot(a.x_um - b.x_um, a.y_um - b.y_um); }

/// Distances are compared at nanometer resolution so geometrically equal
/// lattice distances tie exactly despite floating-point noise.
long long quantize(double d_um) { return std::llround(d_um * 1e3); }

/// Uniform bucket grid over spot coordinates.
class SpotGrid {
 public:
  SpotGrid(const std::vector<SpotPosition>& xy, double cell) : xy_(xy), cell_(cell) {
    for (std::uint32_t i = 0; i < xy.size(); ++i) buckets_[key(cell_of(xy[i].x_um), cell_of(xy[i].y_um))].push_back(i);
  }

  template <class Fn>
  void for_each_near(const SpotPosition& p, Fn&& fn) const {
    const long long cx = cell_of(p.x_um), cy = cell_of(p.y_um);
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        auto it = buckets_.find(key(cx + dx, cy + dy));
        if (it == buckets_.end()) continue;
        for (auto j : it->second) fn(j);
      }
    }
  }

 private:
  long long cell_of(double v) const { return static_cast<long long>(std::floor(v / cell_)); }
  static std::uint64_t key(long long cx, long long cy) {
    return (static_cast<std::uint64_t>(cx) << 32) ^ (static_cast<std::uint64_t>(cy) & 0xffffffffULL);
  }

  const std::vector<SpotPosition>& xy_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets_;
};

}  // namespace

double estimate_pitch(const SampleRecord& sample) {
  const auto& xy = sample.spot_xy;
  if (xy.size() < 2) throw InvalidArgument("pitch estimate needs at least two spots");
  // Bounding-box density gives a starting cell size; grow until every spot
  // sees at least one other spot in its 3x3 block.
  double min_x = xy[0].x_um, max_x = min_x, min_y = xy[0].y_um, max_y = min_y;
  for (const auto& p : xy) {
    min_x = std::min(min_x, p.x_um);
    max_x = std::max(max_x, p.x_um);
    min_y = std::min(min_y, p.y_um);
    max_y = std::max(max_y, p.y_um);
  }
  const double area = std::max((max_x - min_x) * (max_y - min_y), 1e-12);
  double cell = std::max(std::sqrt(area / static_cast<double>(xy.size())) * 2.0, 1e-9);

  std::vector<double> nearest(xy.size(), std::numeric_limits<double>::infinity());
  for (int attempt = 0; attempt < 64; ++attempt) {
    SpotGrid grid(xy, cell);
    bool all_found = true;
    for (std::uint32_t i = 0; i < xy.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      grid.for_each_near(xy[i], [&](std::uint32_t j) {
        if (j != i) best = std::min(best, distance(xy[i], xy[j]));
      });
      // A neighbor found within one cell is guaranteed to be the nearest.
      if (best > cell) all_found = false;
      nearest[i] = best;
    }
    if (all_found) break;
    cell *= 2.0;
  }
  std::nth_element(nearest.begin(), nearest.begin() + static_cast<std::ptrdiff_t>(nearest.size() / 2), nearest.end());
  double median = nearest[nearest.size() / 2];
  if (nearest.size() % 2 == 0) {
    const double lower = *std::max_element(nearest.begin(), nearest.begin() + static_cast<std::ptrdiff_t>(nearest.size() / 2));
    median = 0.5 * (median + lower);
  }
  return median;
}

std::vector<Subgraph> build_subgraphs(const SampleRecord& sample, std::size_t k) {
  if (k != kNeighborCount) throw InvalidArgument("subgraphs have exactly 14 neighbors");
  std::vector<Subgraph> out;
  const std::size_t n = sample.spot_count();
  if (n < kSubgraphSize) {
    logger().warn("sample '{}' has {} spots (< {}); no subgraphs built", sample.sample_id, n, kSubgraphSize);
    return out;
  }
  const double pitch = estimate_pitch(sample);
  const double radius = kEligibleRadiusPitches * pitch;
  SpotGrid grid(sample.spot_xy, radius);

  struct Candidate {
    long long qdist;
    GridIndex rc;
    std::uint32_t idx;
    double dist;
  };
  std::vector<Candidate> cand;
  std::size_t skipped_zero = 0, skipped_edge = 0;
  for (std::uint32_t c = 0; c < n; ++c) {
    if (sample.counts.row_total(c) == 0) {
      ++skipped_zero;
      continue;
    }
    cand.clear();
    const auto& p = sample.spot_xy[c];
    grid.for_each_near(p, [&](std::uint32_t j) {
      if (j == c) return;
      const double d = distance(p, sample.spot_xy[j]);
      if (d <= radius && d > 0.0) cand.push_back({quantize(d), sample.spot_rowcol[j], j, d});
    });
    if (cand.size() < k) {
      ++skipped_edge;
      continue;
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.qdist != b.qdist) return a.qdist < b.qdist;
                        if (a.rc != b.rc) return a.rc < b.rc;
                        return a.idx < b.idx;
                      });
    Subgraph sg;
    sg.sample_id = sample.sample_id;
    sg.pitch_um = pitch;
    sg.nodes[0] = c;
    for (std::size_t i = 0; i < k; ++i) {
      sg.nodes[i + 1] = cand[i].idx;
      sg.distances[i] = cand[i].dist;
    }
    for (std::size_t i = 0; i < kSubgraphSize; ++i) {
      for (std::size_t j = i + 1; j < kSubgraphSize; ++j) {
        const double d = distance(sample.spot_xy[sg.nodes[i]], sample.spot_xy[sg.nodes[j]]);
        sg.pairwise_dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
        sg.pairwise_dist(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = d;
      }
    }
    for (std::size_t i = 0; i < k; ++i) sg.pairwise_dist(0, static_cast<Eigen::Index>(i + 1)) = sg.distances[i];
    for (std::size_t i = 0; i < k; ++i) sg.pairwise_dist(static_cast<Eigen::Index>(i + 1), 0) = sg.distances[i];
    out.push_back(std::move(sg));
  }
  if (skipped_zero + skipped_edge > 0) {
    logger().debug("sample '{}': {} subgraphs, skipped {} all-zero and {} edge centers", sample.sample_id, out.size(),
                   skipped_zero, skipped_edge);
  }
  return out;
}

NormalizedAdjacency compute_adjacency(const Subgraph& sg, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidBandwidth("kernel bandwidth must be positive");
  const double cutoff = kNeighborEdgePitches * sg.pitch_um;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  SubgraphMatrix w = SubgraphMatrix::Identity();
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < w.cols(); ++j) {
      const double d = sg.pairwise_dist(i, j);
      if (i == 0 || d <= cutoff) {
        const double v = std::exp(-d * d * inv_two_sigma2);
        w(i, j) = v;
        w(j, i) = v;
      }
    }
  }
  const Eigen::Matrix<double, kSubgraphSize, 1> inv_sqrt_deg = w.rowwise().sum().cwiseSqrt().cwiseInverse();
  NormalizedAdjacency out;
  out.sigma = sigma;
  out.a_hat = inv_sqrt_deg.asDiagonal() * w * inv_sqrt_deg.asDiagonal();
  // Exact symmetry; the two triangle products can differ in the last bit.
  out.a_hat = (0.5 * (out.a_hat + out.a_hat.transpose())).eval();
  return out;
}

PreparedSample prepare_sample(const Dataset& dataset, std::size_t sample_index, double sigma) {
  const SampleRecord& rec = dataset.samples.at(sample_index);
  PreparedSample ps;
  ps.sample_index = sample_index;
  ps.sample_id = rec.sample_id;
  ps.tissue = rec.tissue;
  ps.expression = normalize_cp10k_log1p(rec.counts);
  ps.subgraphs = build_subgraphs(rec);
  if (rec.spot_count() >= 2) ps.pitch_um = estimate_pitch(rec);
  const double bandwidth = sigma > 0.0 ? sigma : ps.pitch_um;
  ps.adjacency.reserve(ps.subgraphs.size());
  for (const auto& sg : ps.subgraphs) ps.adjacency.push_back(compute_adjacency(sg, bandwidth));
  return ps;
}

// ---------------------------------------------------------------------------
// Cache file

namespace {

constexpr char kCacheMagic[8] = {'S', 'A', 'G', 'E', 'S', 'G', '0', '1'};

template <class T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw CorruptData("subgraph cache truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

CachedSubgraph to_cached(const Subgraph& sg, std::uint32_t sample_index) {
  CachedSubgraph r;
  r.sample_index = sample_index;
  r.nodes = sg.nodes;
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(kSubgraphSize); ++i) {
    for (Eigen::Index j = i + 1; j < static_cast<Eigen::Index>(kSubgraphSize); ++j) {
      r.pairwise[k++] = static_cast<float>(sg.pairwise_dist(i, j));
    }
  }
  return r;
}

void write_subgraph_cache(const std::filesystem::path& path, const std::vector<CachedSubgraph>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(kCacheMagic, sizeof(kCacheMagic));
  put_le<std::uint64_t>(out, records.size());
  for (const auto& r : records) {
    put_le(out, r.sample_index);
    for (auto v : r.nodes) put_le(out, v);
    for (auto v : r.pairwise) put_le(out, v);
  }
}

std::vector<CachedSubgraph> read_subgraph_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
    throw CorruptData(path.string() + ": not a subgraph cache");
  }
  const auto count = get_le<std::uint64_t>(in);
  std::vector<CachedSubgraph> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    CachedSubgraph r;
    r.sample_index = get_le<std::uint32_t>(in);
    for (auto& v : r.nodes) v = get_le<std::uint32_t>(in);
    for (auto& v : r.pairwise) v = get_le<float>(in);
    out.push_back(r);
  }
  return out;
}

}  // namespace sagefm
