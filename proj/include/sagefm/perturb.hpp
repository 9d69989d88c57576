#pragma once

// In-silico perturbation: ligand-receptor clamping and input-gene ->
// downstream-target effect sizes against random-target baselines.

#include "sagefm/gcn.hpp"
#include "sagefm/graph.hpp"
#include "sagefm/pretrain.hpp"
#include "sagefm/stats.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sagefm {

inline constexpr double kChangeThreshold = 1e-8;

struct LrPair {
  std::string ligand;
  std::string receptor;
};

struct DownstreamSet {
  std::string input;
  std::vector<std::string> targets;
};

/// `ligand\treceptor` per line; '#' lines and blanks skipped.
std::vector<LrPair> read_pairs_tsv(const std::filesystem::path& path);
/// `input\ttarget1,target2,...` per line.
std::vector<DownstreamSet> read_targets_tsv(const std::filesystem::path& path);

enum class Verdict { kPositive, kNegative, kUndetermined };
std::string_view to_string(Verdict v);

struct ReferenceCall {
  LrPair pair;
  CorrelationResult val;
  CorrelationResult test;
  Verdict verdict = Verdict::kUndetermined;
  std::string reason;  // set when a correlation could not be computed
};

/// Neighbor-mean ligand vs center receptor on each split. Throws UnknownGene.
std::vector<ReferenceCall> reference_correlations(const GeneVocabulary& vocab, const std::vector<LrPair>& pairs,
                                                  const std::vector<PreparedSample>& val,
                                                  const std::vector<PreparedSample>& test);

struct GeneOverride {
  std::uint32_t gene = 0;
  float value = 0.0f;
};

/// Center predictions for `masked` genes (zeroed at the center) with each
/// override written into all 14 neighbor rows. One row per center.
Matrix<float> predict_with_overrides(const ModelParams<float>& params, const std::vector<PreparedSample>& samples,
                                     const std::vector<CenterRef>& centers, std::span<const std::uint32_t> masked,
                                     std::span<const GeneOverride> overrides, std::size_t batch_size = 64);

/// Single-subgraph form. Throws EmptyMask, NumericError (non-finite override).
RowVector<float> impute_with_overrides(const ModelParams<float>& params, const PreparedSample& sample,
                                       std::size_t subgraph, std::span<const std::uint32_t> masked,
                                       std::span<const GeneOverride> overrides);

enum class Change { kUp, kDown, kUnchanged };
Change classify_change(double delta, double threshold = kChangeThreshold);

struct ChangeTally {
  std::size_t n_up = 0;
  std::size_t n_down = 0;
  std::size_t n_unchanged = 0;
  std::size_t n_total = 0;
  double effect() const;  // (up - down) / total, 0 when empty
};
ChangeTally tally_changes(std::span<const double> deltas, double threshold = kChangeThreshold);

struct ClampRange {
  float min = 0.0f;
  float max = 0.0f;
};

/// Extrema of one gene over every spot of the given samples.
ClampRange clamp_extrema(std::uint32_t gene, const std::vector<PreparedSample>& val,
                         const std::vector<PreparedSample>& test);

struct PerturbationOutcome {
  std::string split;      // "validation" | "test"
  std::string condition;  // "min-clamp" | "max-clamp"
  ChangeTally tally;
};

struct LrResult {
  LrPair pair;
  ClampRange clamp;
  std::vector<PerturbationOutcome> outcomes;  // val/min, val/max, test/min, test/max
  Verdict model_verdict = Verdict::kUndetermined;
  double effect(std::string_view split, std::string_view condition) const;
};

struct LrReport {
  std::vector<LrResult> results;
  std::vector<ReferenceCall> reference;
  std::size_t compared = 0;  // pairs with a determined reference verdict
  std::size_t agreeing = 0;
};

/// Baseline: receptor imputed from unmodified neighbors. Verdict: sign of
/// the max-clamp effect when it agrees across splits.
LrReport ligand_receptor_experiment(const ModelParams<float>& params, const GeneVocabulary& vocab,
                                    const std::vector<LrPair>& pairs, const std::vector<PreparedSample>& val,
                                    const std::vector<PreparedSample>& test, std::size_t batch_size = 64);

struct DownstreamResult {
  std::string input;
  std::vector<std::string> targets;
  ClampRange clamp;
  std::vector<double> effect_val;   // per target
  std::vector<double> effect_test;  // per target
  double mean_val = 0.0;
  double mean_test = 0.0;
};

/// delta = prediction(max-clamp) - prediction(min-clamp), targets masked at
/// the center. `swap_conditions` reverses the contrast.
DownstreamResult downstream_experiment(const ModelParams<float>& params, const GeneVocabulary& vocab,
                                       const DownstreamSet& set, const std::vector<PreparedSample>& val,
                                       const std::vector<PreparedSample>& test, std::size_t batch_size = 64,
                                       bool swap_conditions = false);

struct BaselineReplicate {
  std::uint64_t seed = 0;
  DownstreamResult result;
};

/// Per seed, n_targets genes drawn uniformly from the vocabulary minus the
/// input and `excluded`, then downstream_experiment. Throws TooFewGenes.
std::vector<BaselineReplicate> baseline_replicates(const ModelParams<float>& params, const GeneVocabulary& vocab,
                                                   const std::string& input, std::size_t n_targets,
                                                   const std::vector<std::string>& excluded,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   const std::vector<PreparedSample>& val,
                                                   const std::vector<PreparedSample>& test,
                                                   std::size_t batch_size = 64);

/// Gene sample used by one replicate seed.
std::vector<std::string> sample_baseline_targets(const GeneVocabulary& vocab, const std::string& input,
                                                 std::size_t n_targets, const std::vector<std::string>& excluded,
                                                 std::uint64_t seed);

struct ReplicateTest {
  std::size_t replicate = 0;
  std::optional<TTestResult> test;  // empty when the replicate has < 2 values
  bool target_higher = false;
  bool passes = false;  // target mean higher and p < 0.05
};

struct EffectComparison {
  TTestResult pooled;
  bool pooled_target_higher = false;
  std::vector<ReplicateTest> replicates;
  std::size_t replicates_passing = 0;
};

/// Welch tests of target effects against all baseline effects pooled, then
/// against each replicate. Throws TooFewObservations for < 2 target values.
EffectComparison effect_comparison(std::span<const double> target_effects,
                                   const std::vector<std::vector<double>>& replicate_effects);

}  // namespace sagefm
