#pragma once

// Masked-gene recovery metrics and the missingness sweep.

#include "sagefm/gcn.hpp"
#include "sagefm/graph.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sagefm {

/// Model inputs for a batch of centers plus the unmasked center rows. Only
/// the truth-returning test stub looks at `truth`.
struct ImputeBatch {
  GraphBatch<float> graphs;
  Matrix<float> truth;
};

class Imputer {
 public:
  virtual ~Imputer() = default;
  /// One row of center predictions per graph.
  virtual Matrix<float> predict(const ImputeBatch& batch) const = 0;
};

class GcnImputer : public Imputer {
 public:
  explicit GcnImputer(ModelParams<float> params) : params_(std::move(params)) {}
  Matrix<float> predict(const ImputeBatch& batch) const override { return predict_centers(params_, batch.graphs); }
  const ModelParams<float>& params() const { return params_; }

 private:
  ModelParams<float> params_;
};

/// Returns the truth; a perfect predictor for harness checks.
class OracleImputer : public Imputer {
 public:
  Matrix<float> predict(const ImputeBatch& batch) const override { return batch.truth; }
};

/// Predicts 0 everywhere (the no-information baseline in log space).
class ZeroImputer : public Imputer {
 public:
  Matrix<float> predict(const ImputeBatch& batch) const override {
    return Matrix<float>::Zero(batch.truth.rows(), batch.truth.cols());
  }
};

struct SampleR2 {
  std::string sample_id;
  double r2 = 0.0;  // NaN when the sample's masked truth has zero variance
};

struct MetricsReport {
  double missing_fraction = 0.0;
  double rmse = 0.0;
  double baseline_rmse = 0.0;
  double mean_r2 = 0.0;
  double median_r2 = 0.0;
  double gene_r_mean = 0.0;
  double gene_r_median = 0.0;
  double fraction_significant = 0.0;  // genes with p < 0.05 among those evaluated
  std::size_t genes_evaluated = 0;
  std::size_t genes_excluded = 0;
  std::size_t masked_entries = 0;
  std::vector<SampleR2> per_sample;
};

/// Center-only masking: each center hides its own seeded gene subset.
MetricsReport evaluate_masked(const Imputer& model, const std::vector<PreparedSample>& samples,
                              std::size_t gene_count, double mask_fraction, std::uint64_t seed,
                              std::size_t batch_size = 64);

/// One gene set per fraction, hidden in all 15 nodes of every subgraph.
MetricsReport evaluate_gene_dropout(const Imputer& model, const std::vector<PreparedSample>& samples,
                                    std::size_t gene_count, double fraction, std::uint64_t seed,
                                    std::size_t batch_size = 64);

struct SweepCurve {
  std::vector<MetricsReport> points;  // strictly increasing missing_fraction
};

std::vector<double> default_sweep_fractions();  // 0.1, 0.2, ..., 0.9

SweepCurve missingness_sweep(const Imputer& model, const std::vector<PreparedSample>& samples,
                             std::size_t gene_count, const std::vector<double>& fractions, std::uint64_t seed,
                             std::size_t batch_size = 64);

/// Smallest fraction whose mean_r2 falls below 0.8 * reference_r2.
/// Throws EmptyCurve, InvalidArgument (reference_r2 <= 0).
std::optional<double> critical_threshold(const SweepCurve& curve, double reference_r2);

void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path);

}  // namespace sagefm
