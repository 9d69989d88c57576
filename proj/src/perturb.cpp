#include "sagefm/perturb.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/log.hpp"
#include "sagefm/random.hpp"
#include "sagefm/textio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace sagefm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::uint32_t gene_index(const GeneVocabulary& vocab, const std::string& name) {
  return static_cast<std::uint32_t>(vocab.index_of(name));
}

}  // namespace

std::vector<LrPair> read_pairs_tsv(const std::filesystem::path& path) {
  std::vector<LrPair> out;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty() || line.front() == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 2) throw CorruptData(path.string() + ": expected 'ligand<TAB>receptor', got '" + line + "'");
    out.push_back({std::string(trim(f[0])), std::string(trim(f[1]))});
  }
  return out;
}

std::vector<DownstreamSet> read_targets_tsv(const std::filesystem::path& path) {
  std::vector<DownstreamSet> out;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty() || line.front() == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 2) throw CorruptData(path.string() + ": expected 'input<TAB>t1,t2,...', got '" + line + "'");
    DownstreamSet set{std::string(trim(f[0])), {}};
    for (const auto& t : split(f[1], ',')) {
      if (!trim(t).empty()) set.targets.emplace_back(trim(t));
    }
    if (set.targets.empty()) throw CorruptData(path.string() + ": no targets for " + set.input);
    out.push_back(std::move(set));
  }
  return out;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kPositive: return "positive";
    case Verdict::kNegative: return "negative";
    case Verdict::kUndetermined: return "undetermined";
  }
  return "undetermined";
}

namespace {

/// Neighbor-mean of `ligand` and center value of `receptor` per subgraph.
void neighbor_center_series(const std::vector<PreparedSample>& samples, std::uint32_t ligand, std::uint32_t receptor,
                            std::vector<double>& x, std::vector<double>& y) {
  x.clear();
  y.clear();
  for (const auto& ps : samples) {
    for (const auto& sg : ps.subgraphs) {
      double m = 0;
      for (std::size_t i = 1; i < kSubgraphSize; ++i) m += ps.expression.values(sg.nodes[i], ligand);
      x.push_back(m / static_cast<double>(kNeighborCount));
      y.push_back(ps.expression.values(sg.center(), receptor));
    }
  }
}

}  // namespace

std::vector<ReferenceCall> reference_correlations(const GeneVocabulary& vocab, const std::vector<LrPair>& pairs,
                                                  const std::vector<PreparedSample>& val,
                                                  const std::vector<PreparedSample>& test) {
  std::vector<ReferenceCall> out;
  std::vector<double> x, y;
  for (const auto& pair : pairs) {
    const auto lig = gene_index(vocab, pair.ligand);
    const auto rec = gene_index(vocab, pair.receptor);
    ReferenceCall call;
    call.pair = pair;
    bool ok = true;
    for (int s = 0; s < 2; ++s) {
      neighbor_center_series(s == 0 ? val : test, lig, rec, x, y);
      try {
        (s == 0 ? call.val : call.test) = pearson_with_p(x, y);
      } catch (const Error& e) {
        ok = false;
        call.reason = std::string(s == 0 ? "validation: " : "test: ") + e.what();
      }
    }
    if (ok && call.val.p < 0.05 && call.test.p < 0.05) {
      if (call.val.r > 0 && call.test.r > 0) call.verdict = Verdict::kPositive;
      if (call.val.r < 0 && call.test.r < 0) call.verdict = Verdict::kNegative;
    }
    out.push_back(std::move(call));
  }
  return out;
}

Matrix<float> predict_with_overrides(const ModelParams<float>& params, const std::vector<PreparedSample>& samples,
                                     const std::vector<CenterRef>& centers, std::span<const std::uint32_t> masked,
                                     std::span<const GeneOverride> overrides, std::size_t batch_size) {
  const std::size_t G = params.arch.gene_dim;
  if (masked.empty()) throw EmptyMask("no genes masked at the center");
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  for (auto g : masked) {
    if (g >= G) throw ShapeError("masked gene index out of range");
  }
  for (const auto& o : overrides) {
    if (o.gene >= G) throw ShapeError("override gene index out of range");
    if (!std::isfinite(o.value)) throw NumericError("override value must be finite");
  }
  Matrix<float> out(static_cast<Eigen::Index>(centers.size()), static_cast<Eigen::Index>(masked.size()));
  GraphBatch<float> batch;
  for (std::size_t begin = 0; begin < centers.size(); begin += batch_size) {
    const std::size_t end = std::min(centers.size(), begin + batch_size);
    batch.resize(end - begin, G);
    for (std::size_t b = 0; b < end - begin; ++b) {
      const auto& ref = centers[begin + b];
      load_batch_slot(batch, b, samples[ref.sample], ref.subgraph);
      const auto base = static_cast<Eigen::Index>(b * kSubgraphSize);
      for (Eigen::Index i = 1; i < static_cast<Eigen::Index>(kSubgraphSize); ++i) {
        for (const auto& o : overrides) batch.inputs(base + i, o.gene) = o.value;
      }
      for (auto g : masked) batch.inputs(base, g) = 0.0f;
    }
    const Matrix<float> pred = predict_centers(params, batch);
    for (std::size_t b = 0; b < end - begin; ++b) {
      for (std::size_t m = 0; m < masked.size(); ++m) {
        out(static_cast<Eigen::Index>(begin + b), static_cast<Eigen::Index>(m)) =
            pred(static_cast<Eigen::Index>(b), masked[m]);
      }
    }
  }
  return out;
}

RowVector<float> impute_with_overrides(const ModelParams<float>& params, const PreparedSample& sample,
                                       std::size_t subgraph, std::span<const std::uint32_t> masked,
                                       std::span<const GeneOverride> overrides) {
  std::vector<PreparedSample> one;
  // One-subgraph copy of the sample.
  PreparedSample view;
  view.sample_index = sample.sample_index;
  view.sample_id = sample.sample_id;
  view.expression = sample.expression;
  view.subgraphs = {sample.subgraphs.at(subgraph)};
  view.adjacency = {sample.adjacency.at(subgraph)};
  one.push_back(std::move(view));
  const Matrix<float> m = predict_with_overrides(params, one, {{0, 0}}, masked, overrides, 1);
  return m.row(0);
}

Change classify_change(double delta, double threshold) {
  if (delta > threshold) return Change::kUp;
  if (delta < -threshold) return Change::kDown;
  return Change::kUnchanged;
}

double ChangeTally::effect() const {
  if (n_total == 0) return 0.0;
  return (static_cast<double>(n_up) - static_cast<double>(n_down)) / static_cast<double>(n_total);
}

ChangeTally tally_changes(std::span<const double> deltas, double threshold) {
  ChangeTally t;
  for (double d : deltas) {
    switch (classify_change(d, threshold)) {
      case Change::kUp: ++t.n_up; break;
      case Change::kDown: ++t.n_down; break;
      case Change::kUnchanged: ++t.n_unchanged; break;
    }
  }
  t.n_total = deltas.size();
  return t;
}

ClampRange clamp_extrema(std::uint32_t gene, const std::vector<PreparedSample>& val,
                         const std::vector<PreparedSample>& test) {
  float lo = std::numeric_limits<float>::infinity(), hi = -std::numeric_limits<float>::infinity();
  for (const auto* group : {&val, &test}) {
    for (const auto& ps : *group) {
      if (ps.expression.values.rows() == 0) continue;
      lo = std::min(lo, ps.expression.values.col(gene).minCoeff());
      hi = std::max(hi, ps.expression.values.col(gene).maxCoeff());
    }
  }
  if (!std::isfinite(lo)) throw InvalidArgument("no spots to compute clamp extrema from");
  return {lo, hi};
}

double LrResult::effect(std::string_view split, std::string_view condition) const {
  for (const auto& o : outcomes) {
    if (o.split == split && o.condition == condition) return o.tally.effect();
  }
  throw InvalidArgument("no outcome for " + std::string(split) + "/" + std::string(condition));
}

namespace {

std::vector<double> column_delta(const Matrix<float>& a, const Matrix<float>& b, Eigen::Index col) {
  std::vector<double> d(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) d[static_cast<std::size_t>(i)] = static_cast<double>(a(i, col)) - b(i, col);
  return d;
}

}  // namespace

LrReport ligand_receptor_experiment(const ModelParams<float>& params, const GeneVocabulary& vocab,
                                    const std::vector<LrPair>& pairs, const std::vector<PreparedSample>& val,
                                    const std::vector<PreparedSample>& test, std::size_t batch_size) {
  LrReport report;
  report.reference = reference_correlations(vocab, pairs, val, test);
  const auto val_centers = enumerate_centers(val);
  const auto test_centers = enumerate_centers(test);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    LrResult res;
    res.pair = pairs[p];
    const auto lig = gene_index(vocab, pairs[p].ligand);
    const std::uint32_t rec = gene_index(vocab, pairs[p].receptor);
    res.clamp = clamp_extrema(lig, val, test);
    const std::uint32_t masked[] = {rec};
    double max_effect[2] = {0, 0};
    for (int s = 0; s < 2; ++s) {
      const auto& samples = s == 0 ? val : test;
      const auto& centers = s == 0 ? val_centers : test_centers;
      const std::string split = s == 0 ? "validation" : "test";
      const Matrix<float> base = predict_with_overrides(params, samples, centers, masked, {}, batch_size);
      for (int c = 0; c < 2; ++c) {
        const GeneOverride ov[] = {{lig, c == 0 ? res.clamp.min : res.clamp.max}};
        const Matrix<float> pert = predict_with_overrides(params, samples, centers, masked, ov, batch_size);
        const auto tally = tally_changes(column_delta(pert, base, 0));
        res.outcomes.push_back({split, c == 0 ? "min-clamp" : "max-clamp", tally});
        if (c == 1) max_effect[s] = tally.effect();
      }
    }
    if (max_effect[0] > 0 && max_effect[1] > 0) res.model_verdict = Verdict::kPositive;
    if (max_effect[0] < 0 && max_effect[1] < 0) res.model_verdict = Verdict::kNegative;
    const auto ref = report.reference[p].verdict;
    if (ref != Verdict::kUndetermined) {
      ++report.compared;
      if (ref == res.model_verdict) ++report.agreeing;
    }
    report.results.push_back(std::move(res));
  }
  return report;
}

DownstreamResult downstream_experiment(const ModelParams<float>& params, const GeneVocabulary& vocab,
                                       const DownstreamSet& set, const std::vector<PreparedSample>& val,
                                       const std::vector<PreparedSample>& test, std::size_t batch_size,
                                       bool swap_conditions) {
  if (set.targets.empty()) throw InvalidArgument("downstream experiment needs at least one target");
  DownstreamResult out;
  out.input = set.input;
  out.targets = set.targets;
  const auto input = gene_index(vocab, set.input);
  std::vector<std::uint32_t> masked;
  for (const auto& t : set.targets) {
    const auto g = gene_index(vocab, t);
    if (g == input) throw InvalidArgument("input gene " + set.input + " listed among its own targets");
    masked.push_back(g);
  }
  out.clamp = clamp_extrema(input, val, test);
  const GeneOverride lo[] = {{input, out.clamp.min}}, hi[] = {{input, out.clamp.max}};
  for (int s = 0; s < 2; ++s) {
    const auto& samples = s == 0 ? val : test;
    const auto centers = enumerate_centers(samples);
    const Matrix<float> p_min = predict_with_overrides(params, samples, centers, masked, lo, batch_size);
    const Matrix<float> p_max = predict_with_overrides(params, samples, centers, masked, hi, batch_size);
    auto& effects = s == 0 ? out.effect_val : out.effect_test;
    for (std::size_t t = 0; t < masked.size(); ++t) {
      const auto col = static_cast<Eigen::Index>(t);
      effects.push_back(tally_changes(swap_conditions ? column_delta(p_min, p_max, col) : column_delta(p_max, p_min, col))
                            .effect());
    }
    (s == 0 ? out.mean_val : out.mean_test) =
        std::accumulate(effects.begin(), effects.end(), 0.0) / static_cast<double>(effects.size());
  }
  return out;
}

std::vector<std::string> sample_baseline_targets(const GeneVocabulary& vocab, const std::string& input,
                                                 std::size_t n_targets, const std::vector<std::string>& excluded,
                                                 std::uint64_t seed) {
  std::set<std::size_t> banned{vocab.index_of(input)};
  for (const auto& e : excluded) banned.insert(vocab.index_of(e));
  std::vector<std::size_t> allowed;
  for (std::size_t g = 0; g < vocab.size(); ++g) {
    if (!banned.count(g)) allowed.push_back(g);
  }
  if (allowed.size() < n_targets || n_targets == 0) {
    throw TooFewGenes("need " + std::to_string(n_targets) + " baseline genes, " + std::to_string(allowed.size()) +
                      " available");
  }
  Rng rng(derive_seed(seed, {0xba5e}));
  for (std::size_t i = 0; i < n_targets; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, allowed.size() - 1);
    std::swap(allowed[i], allowed[pick(rng)]);
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n_targets; ++i) out.push_back(vocab.name(allowed[i]));
  return out;
}

std::vector<BaselineReplicate> baseline_replicates(const ModelParams<float>& params, const GeneVocabulary& vocab,
                                                   const std::string& input, std::size_t n_targets,
                                                   const std::vector<std::string>& excluded,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   const std::vector<PreparedSample>& val,
                                                   const std::vector<PreparedSample>& test, std::size_t batch_size) {
  std::vector<BaselineReplicate> out;
  for (auto seed : seeds) {
    DownstreamSet set{input, sample_baseline_targets(vocab, input, n_targets, excluded, seed)};
    out.push_back({seed, downstream_experiment(params, vocab, set, val, test, batch_size)});
  }
  return out;
}

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

EffectComparison effect_comparison(std::span<const double> target_effects,
                                   const std::vector<std::vector<double>>& replicate_effects) {
  if (target_effects.size() < 2) throw TooFewObservations("need at least two target effects");
  EffectComparison out;
  std::vector<double> pooled;
  for (const auto& r : replicate_effects) pooled.insert(pooled.end(), r.begin(), r.end());
  out.pooled = two_sample_t(target_effects, pooled);
  const double target_mean = mean_of(target_effects);
  out.pooled_target_higher = target_mean > mean_of(pooled);
  for (std::size_t i = 0; i < replicate_effects.size(); ++i) {
    ReplicateTest rt;
    rt.replicate = i;
    if (replicate_effects[i].size() < 2) {
      logger().info("effect comparison: replicate {} has fewer than two values; skipped", i);
    } else {
      rt.test = two_sample_t(target_effects, replicate_effects[i]);
      rt.target_higher = target_mean > mean_of(replicate_effects[i]);
      rt.passes = rt.target_higher && rt.test->p < 0.05;
    }
    out.replicates_passing += rt.passes ? 1 : 0;
    out.replicates.push_back(rt);
  }
  return out;
}

}  // namespace sagefm
