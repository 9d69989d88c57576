#include "sagefm/imputation.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/pretrain.hpp"
#include "sagefm/random.hpp"
#include "sagefm/stats.hpp"
#include "sagefm/textio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sagefm {

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Which genes each center hides, and whether neighbors hide them too.
struct MaskPlan {
  bool all_nodes = false;
  std::vector<std::uint32_t> shared;  // all_nodes: one set for every graph
  std::uint64_t seed = 0;             // per-center sets otherwise
  double fraction = 0.0;
};

MetricsReport run_evaluation(const Imputer& model, const std::vector<PreparedSample>& samples, std::size_t G,
                             const MaskPlan& plan, std::size_t batch_size) {
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  const auto centers = enumerate_centers(samples);

  // Pooled (prediction, truth) per gene, per-sample flat lists, global sums.
  std::vector<std::vector<double>> gene_pred(G), gene_truth(G);
  std::vector<std::vector<double>> sample_pred(samples.size()), sample_truth(samples.size());
  double sq = 0.0, sq0 = 0.0;
  std::size_t count = 0;

  ImputeBatch batch;
  std::vector<std::vector<std::uint32_t>> masks;
  for (std::size_t begin = 0; begin < centers.size(); begin += batch_size) {
    const std::size_t end = std::min(centers.size(), begin + batch_size);
    const std::size_t n = end - begin;
    batch.graphs.resize(n, G);
    batch.truth.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(G));
    masks.assign(n, {});
    for (std::size_t b = 0; b < n; ++b) {
      const auto& ref = centers[begin + b];
      const auto& ps = samples[ref.sample];
      load_batch_slot(batch.graphs, b, ps, ref.subgraph);
      const auto base = static_cast<Eigen::Index>(b * kSubgraphSize);
      batch.truth.row(static_cast<Eigen::Index>(b)) = batch.graphs.inputs.row(base);
      if (plan.all_nodes) {
        masks[b] = plan.shared;
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(kSubgraphSize); ++i) {
          for (auto g : masks[b]) batch.graphs.inputs(base + i, g) = 0.0f;
        }
      } else {
        masks[b] = center_mask(plan.seed, ps, ref.subgraph, G, plan.fraction);
        for (auto g : masks[b]) batch.graphs.inputs(base, g) = 0.0f;
      }
    }
    const Matrix<float> pred = model.predict(batch);
    if (pred.rows() != static_cast<Eigen::Index>(n) || pred.cols() != static_cast<Eigen::Index>(G)) {
      throw ShapeError("imputer returned a prediction of the wrong shape");
    }
    for (std::size_t b = 0; b < n; ++b) {
      const auto row = static_cast<Eigen::Index>(b);
      const std::size_t s = centers[begin + b].sample;
      for (auto g : masks[b]) {
        const double p = pred(row, g), t = batch.truth(row, g);
        sq += (p - t) * (p - t);
        sq0 += t * t;
        gene_pred[g].push_back(p);
        gene_truth[g].push_back(t);
        sample_pred[s].push_back(p);
        sample_truth[s].push_back(t);
      }
      count += masks[b].size();
    }
  }

  MetricsReport rep;
  rep.missing_fraction = plan.fraction;
  rep.masked_entries = count;
  if (count > 0) {
    rep.rmse = std::sqrt(sq / static_cast<double>(count));
    rep.baseline_rmse = std::sqrt(sq0 / static_cast<double>(count));
  }

  std::vector<double> r2s;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    SampleR2 entry{samples[s].sample_id, std::numeric_limits<double>::quiet_NaN()};
    try {
      if (!sample_truth[s].empty()) entry.r2 = r2(sample_pred[s], sample_truth[s]);
    } catch (const DegenerateInput&) {
    }
    if (std::isfinite(entry.r2)) r2s.push_back(entry.r2);
    rep.per_sample.push_back(entry);
  }
  rep.mean_r2 = mean_of(r2s);
  rep.median_r2 = median_of(r2s);

  std::vector<double> rs;
  std::size_t significant = 0;
  for (std::size_t g = 0; g < G; ++g) {
    if (gene_truth[g].size() < 3) continue;
    try {
      const auto c = pearson_with_p(gene_pred[g], gene_truth[g]);
      rs.push_back(c.r);
      if (c.p < 0.05) ++significant;
    } catch (const Error&) {
    }
  }
  rep.genes_evaluated = rs.size();
  rep.genes_excluded = G - rs.size();
  rep.gene_r_mean = mean_of(rs);
  rep.gene_r_median = median_of(rs);
  rep.fraction_significant = rs.empty() ? 0.0 : static_cast<double>(significant) / static_cast<double>(rs.size());
  return rep;
}

}  // namespace

MetricsReport evaluate_masked(const Imputer& model, const std::vector<PreparedSample>& samples,
                              std::size_t gene_count, double mask_fraction, std::uint64_t seed,
                              std::size_t batch_size) {
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) throw InvalidFraction("mask fraction must lie in (0, 1)");
  MaskPlan plan;
  plan.seed = seed;
  plan.fraction = mask_fraction;
  return run_evaluation(model, samples, gene_count, plan, batch_size);
}

MetricsReport evaluate_gene_dropout(const Imputer& model, const std::vector<PreparedSample>& samples,
                                    std::size_t gene_count, double fraction, std::uint64_t seed,
                                    std::size_t batch_size) {
  MaskPlan plan;
  plan.all_nodes = true;
  plan.fraction = fraction;
  Rng rng(derive_seed(seed, {0x5eed, static_cast<std::uint64_t>(std::llround(fraction * 1e6))}));
  plan.shared = make_mask(gene_count, fraction, rng);
  return run_evaluation(model, samples, gene_count, plan, batch_size);
}

std::vector<double> default_sweep_fractions() {
  std::vector<double> out;
  for (int i = 1; i <= 9; ++i) out.push_back(i / 10.0);
  return out;
}

SweepCurve missingness_sweep(const Imputer& model, const std::vector<PreparedSample>& samples,
                             std::size_t gene_count, const std::vector<double>& fractions, std::uint64_t seed,
                             std::size_t batch_size) {
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    if (!(fractions[i] > fractions[i - 1])) throw InvalidArgument("sweep fractions must be strictly increasing");
  }
  SweepCurve curve;
  for (double f : fractions) curve.points.push_back(evaluate_gene_dropout(model, samples, gene_count, f, seed, batch_size));
  return curve;
}

std::optional<double> critical_threshold(const SweepCurve& curve, double reference_r2) {
  if (curve.points.empty()) throw EmptyCurve("sweep curve has no points");
  if (!(reference_r2 > 0.0)) throw InvalidArgument("reference R^2 must be positive");
  for (const auto& p : curve.points) {
    if (p.mean_r2 < 0.8 * reference_r2) return p.missing_fraction;
  }
  return std::nullopt;
}

void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path) {
  CsvWriter csv(path, {"missing_fraction", "rmse", "baseline_rmse", "mean_r2", "median_r2", "gene_r_mean",
                       "gene_r_median", "fraction_significant", "genes_evaluated", "genes_excluded", "masked_entries"});
  for (const auto& r : reports) {
    csv.field(r.missing_fraction).field(r.rmse).field(r.baseline_rmse).field(r.mean_r2).field(r.median_r2);
    csv.field(r.gene_r_mean).field(r.gene_r_median).field(r.fraction_significant);
    csv.field(r.genes_evaluated).field(r.genes_excluded).field(r.masked_entries);
    csv.end_row();
  }
}

}  // namespace sagefm
