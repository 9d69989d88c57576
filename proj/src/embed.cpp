#include "sagefm/embed.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/log.hpp"
#include "sagefm/pretrain.hpp"
#include "sagefm/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace sagefm {

namespace fs = std::filesystem;

EmbeddingMatrix extract_embeddings(const ModelParams<float>& params, const std::vector<PreparedSample>& samples,
                                   std::size_t layer, std::size_t batch_size) {
  if (layer < 1 || layer > params.conv.size()) {
    throw InvalidLayer("layer " + std::to_string(layer) + " outside 1.." + std::to_string(params.conv.size()));
  }
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  const auto centers = enumerate_centers(samples);
  EmbeddingMatrix out;
  out.layer = layer;
  out.vectors.resize(static_cast<Eigen::Index>(centers.size()),
                     static_cast<Eigen::Index>(params.conv[layer - 1].weight.cols()));
  GraphBatch<float> batch;
  for (std::size_t begin = 0; begin < centers.size(); begin += batch_size) {
    const std::size_t end = std::min(centers.size(), begin + batch_size);
    batch.resize(end - begin, params.arch.gene_dim);
    for (std::size_t i = begin; i < end; ++i) {
      load_batch_slot(batch, i - begin, samples[centers[i].sample], centers[i].subgraph);
    }
    const Matrix<float> act = center_activations(params, batch, layer);
    out.vectors.middleRows(static_cast<Eigen::Index>(begin), act.rows()) = act.cast<double>();
  }
  for (const auto& c : centers) {
    const auto& ps = samples[c.sample];
    out.keys.push_back({ps.sample_id, ps.subgraphs[c.subgraph].center()});
  }
  return out;
}

EmbeddingMatrix center_expression(const std::vector<PreparedSample>& samples) {
  const auto centers = enumerate_centers(samples);
  EmbeddingMatrix out;
  const Eigen::Index G = samples.empty() ? 0 : samples.front().expression.values.cols();
  out.vectors.resize(static_cast<Eigen::Index>(centers.size()), G);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto& ps = samples[centers[i].sample];
    const auto spot = ps.subgraphs[centers[i].subgraph].center();
    out.vectors.row(static_cast<Eigen::Index>(i)) = ps.expression.values.row(spot).cast<double>();
    out.keys.push_back({ps.sample_id, spot});
  }
  return out;
}

namespace {

constexpr char kEmbedMagic[8] = {'S', 'A', 'G', 'E', 'E', 'M', '0', '1'};

template <class V>
void put_le(std::ostream& out, V v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get_le(std::istream& in, const fs::path& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw CorruptData(path.string() + ": truncated embedding file");
  return v;
}

}  // namespace

void write_embeddings(const EmbeddingMatrix& e, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(kEmbedMagic, sizeof(kEmbedMagic));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.vectors.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.vectors.cols()));
  put_le<std::uint64_t>(out, e.layer);
  for (const auto& k : e.keys) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(k.sample_id.size()));
    out.write(k.sample_id.data(), static_cast<std::streamsize>(k.sample_id.size()));
    put_le<std::uint32_t>(out, k.spot);
  }
  for (Eigen::Index r = 0; r < e.vectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.vectors.cols(); ++c) put_le<float>(out, static_cast<float>(e.vectors(r, c)));
  }
}

EmbeddingMatrix read_embeddings(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kEmbedMagic)) throw CorruptData(path.string() + ": bad magic");
  const auto rows = get_le<std::uint64_t>(in, path);
  const auto cols = get_le<std::uint64_t>(in, path);
  EmbeddingMatrix e;
  e.layer = get_le<std::uint64_t>(in, path);
  if (rows > (1u << 28) || cols > (1u << 20)) throw CorruptData(path.string() + ": implausible shape");
  for (std::uint64_t r = 0; r < rows; ++r) {
    const auto len = get_le<std::uint32_t>(in, path);
    if (len > 4096) throw CorruptData(path.string() + ": implausible key length");
    std::string id(len, '\0');
    if (!in.read(id.data(), len)) throw CorruptData(path.string() + ": truncated key table");
    e.keys.push_back({id, get_le<std::uint32_t>(in, path)});
  }
  e.vectors.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < e.vectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < e.vectors.cols(); ++c) e.vectors(r, c) = get_le<float>(in, path);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptData(path.string() + ": trailing bytes");
  return e;
}

PointMatrix pca_reduce(const PointMatrix& x, std::size_t components) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (components == 0) throw InvalidComponents("components must be >= 1");
  if (d <= components) return x;
  if (components > n) throw InvalidComponents("components exceed the number of rows");
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  Eigen::MatrixXd v = svd.matrixV().leftCols(static_cast<Eigen::Index>(components));
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0) v.col(c) *= -1.0;
  }
  return centered * v;
}

namespace {

struct LloydRun {
  std::vector<int> labels;
  PointMatrix centroids;
  double inertia = 0.0;
};

int nearest(const PointMatrix& c, const auto& row, double* dist) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < c.rows(); ++j) {
    const double dd = (c.row(j) - row).squaredNorm();
    if (dd < bd) {
      bd = dd;
      best = static_cast<int>(j);
    }
  }
  if (dist) *dist = bd;
  return best;
}

LloydRun lloyd_once(const PointMatrix& x, std::size_t k, Rng& rng, std::size_t max_iter, double tol) {
  const Eigen::Index n = x.rows();
  const auto K = static_cast<Eigen::Index>(k);
  PointMatrix c(K, x.cols());

  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (x.row(i) - c.row(0)).squaredNorm();
  for (Eigen::Index j = 1; j < K; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc >= target && d2[static_cast<std::size_t>(i)] > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    c.row(j) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (x.row(i) - c.row(j)).squaredNorm());
    }
  }

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] = nearest(c, x.row(i), &dist[static_cast<std::size_t>(i)]);
    }
    PointMatrix next = PointMatrix::Zero(K, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (Eigen::Index j = 0; j < K; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        next.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      Eigen::Index far = 0;
      double fd = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!taken[static_cast<std::size_t>(i)] && dist[static_cast<std::size_t>(i)] > fd) {
          fd = dist[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      taken[static_cast<std::size_t>(far)] = true;
      dist[static_cast<std::size_t>(far)] = 0.0;
      next.row(j) = x.row(far);
    }
    const double shift = (next - c).squaredNorm();
    c = std::move(next);
    if (shift <= tol) break;
  }
  LloydRun run;
  run.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double dd = 0;
    run.labels[static_cast<std::size_t>(i)] = nearest(c, x.row(i), &dd);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    run.inertia += (x.row(i) - c.row(run.labels[static_cast<std::size_t>(i)])).squaredNorm();
  }
  run.centroids = std::move(c);
  return run;
}

}  // namespace

KMeansResult kmeans(const PointMatrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts, std::size_t max_iter,
                    double tol) {
  if (k == 0 || k > static_cast<std::size_t>(x.rows())) {
    throw InvalidK("k = " + std::to_string(k) + " must lie in 1.." + std::to_string(x.rows()));
  }
  if (restarts == 0) throw InvalidArgument("restarts must be >= 1");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, {0x4b, r}));
    LloydRun run = lloyd_once(x, k, rng, max_iter, tol);
    if (run.inertia < best.inertia) {
      best.inertia = run.inertia;
      best.labels = std::move(run.labels);
      best.centroids = std::move(run.centroids);
    }
  }
  return best;
}

KSelection select_k_by_silhouette(const PointMatrix& x, std::size_t k_min, std::size_t k_max, std::uint64_t seed) {
  if (k_min < 2 || k_min > k_max) throw InvalidK("k range must satisfy 2 <= k_min <= k_max");
  if (k_max > static_cast<std::size_t>(x.rows())) throw InvalidK("k_max exceeds the number of points");
  KSelection out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    const auto km = kmeans(x, k, seed);
    const double s = silhouette_score(x, km.labels);
    out.silhouette_by_k.push_back({k, s});
    if (s > best) {
      best = s;
      out.best_k = k;
    }
  }
  return out;
}

CentroidDistances centroid_distance_analysis(const PointMatrix& x, const std::vector<std::string>& labels) {
  if (labels.size() != static_cast<std::size_t>(x.rows())) throw InvalidArgument("one label per row required");
  CentroidDistances out;
  out.labels = labels;
  std::sort(out.labels.begin(), out.labels.end());
  out.labels.erase(std::unique(out.labels.begin(), out.labels.end()), out.labels.end());
  const auto L = static_cast<Eigen::Index>(out.labels.size());
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(L, x.cols());
  std::vector<std::size_t> counts(out.labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto j = std::lower_bound(out.labels.begin(), out.labels.end(), labels[i]) - out.labels.begin();
    centroids.row(j) += x.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<std::size_t>(j)];
  }
  for (Eigen::Index j = 0; j < L; ++j) {
    centroids.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);
    if (centroids.row(j).squaredNorm() == 0.0) throw DegenerateCentroid("zero centroid for label " + out.labels[static_cast<std::size_t>(j)]);
  }
  out.raw = Eigen::MatrixXd::Zero(L, L);
  double mx = 0.0;
  for (Eigen::Index a = 0; a < L; ++a) {
    for (Eigen::Index b = a + 1; b < L; ++b) {
      const Eigen::VectorXd u = centroids.row(a).transpose(), v = centroids.row(b).transpose();
      const double d = cosine_distance(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())),
                                       std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
      out.raw(a, b) = out.raw(b, a) = d;
      mx = std::max(mx, d);
    }
  }
  out.normalized = mx > 0 ? Eigen::MatrixXd(out.raw / mx) : out.raw;
  return out;
}

PreservationError matrix_preservation_error(const CentroidDistances& candidate, const CentroidDistances& reference) {
  auto a = candidate.labels, b = reference.labels;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) throw LabelMismatch("candidate and reference label sets differ");
  std::vector<Eigen::Index> map(reference.labels.size());
  for (std::size_t i = 0; i < reference.labels.size(); ++i) {
    map[i] = std::find(candidate.labels.begin(), candidate.labels.end(), reference.labels[i]) - candidate.labels.begin();
  }
  PreservationError out;
  const std::size_t L = reference.labels.size();
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = i + 1; j < L; ++j) {
      out.errors.push_back(std::abs(candidate.normalized(map[i], map[j]) -
                                    reference.normalized(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
  }
  if (!out.errors.empty()) {
    out.mean = std::accumulate(out.errors.begin(), out.errors.end(), 0.0) / static_cast<double>(out.errors.size());
  }
  return out;
}

NeighborhoodReport neighborhood_rank(const CentroidDistances& sample_distances,
                                     const std::map<std::string, std::string>& tissue_of) {
  const auto& ids = sample_distances.labels;
  const std::size_t n = ids.size();
  if (n < 2) throw NoComparableTissues("at least two samples are required");
  std::vector<std::string> tissue(n);
  std::map<std::string, std::size_t> per_tissue;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = tissue_of.find(ids[i]);
    if (it == tissue_of.end()) throw LabelMismatch("no tissue for sample " + ids[i]);
    tissue[i] = it->second;
    ++per_tissue[tissue[i]];
  }
  NeighborhoodReport out;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (per_tissue[tissue[i]] < 2) {
      out.skipped.push_back(ids[i]);
      logger().info("neighborhood rank: sample {} has a singleton tissue; skipped", ids[i]);
      continue;
    }
    std::vector<double> d;
    std::vector<std::size_t> who;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      d.push_back(sample_distances.raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      who.push_back(j);
    }
    const auto ranks = average_ranks(d);
    double sum = 0.0;
    std::size_t peers = 0;
    for (std::size_t t = 0; t < who.size(); ++t) {
      if (tissue[who[t]] == tissue[i]) {
        sum += ranks[t];
        ++peers;
      }
    }
    out.per_sample.push_back({ids[i], sum / static_cast<double>(peers), peers});
    total += sum / static_cast<double>(peers);
  }
  if (out.per_sample.empty()) throw NoComparableTissues("no tissue has two or more samples");
  out.global_mean = total / static_cast<double>(out.per_sample.size());
  return out;
}

DegResult deg_one_vs_rest(const PointMatrix& expression, std::span<const int> labels, double fdr) {
  if (labels.size() != static_cast<std::size_t>(expression.rows())) throw InvalidArgument("one label per row required");
  std::set<int> clusters(labels.begin(), labels.end());
  if (clusters.size() < 2) throw InvalidArgument("differential testing needs at least two clusters");
  const Eigen::Index G = expression.cols();
  std::vector<bool> tested(static_cast<std::size_t>(G), false);
  DegResult out;
  for (Eigen::Index g = 0; g < G; ++g) {
    const auto col = expression.col(g);
    tested[static_cast<std::size_t>(g)] = col.maxCoeff() != col.minCoeff();
    if (!tested[static_cast<std::size_t>(g)]) ++out.genes_excluded;
  }
  for (int c : clusters) {
    DegTable table;
    table.cluster = c;
    std::vector<double> pvals;
    for (Eigen::Index g = 0; g < G; ++g) {
      if (!tested[static_cast<std::size_t>(g)]) continue;
      std::vector<double> in, rest;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == c ? in : rest).push_back(expression(static_cast<Eigen::Index>(i), g));
      }
      const auto rs = wilcoxon_rank_sum(in, rest);
      const double diff = std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(in.size()) -
                          std::accumulate(rest.begin(), rest.end(), 0.0) / static_cast<double>(rest.size());
      DegEntry e;
      e.gene = static_cast<std::size_t>(g);
      e.direction = diff > 0 ? 1 : (diff < 0 ? -1 : 0);
      e.u = rs.u;
      e.p = rs.p;
      table.entries.push_back(e);
      pvals.push_back(rs.p);
    }
    const auto adj = bh_fdr(pvals);
    for (std::size_t i = 0; i < adj.size(); ++i) {
      table.entries[i].p_adj = adj[i];
      table.entries[i].significant = adj[i] < fdr;
      table.significant += table.entries[i].significant ? 1 : 0;
    }
    out.tables.push_back(std::move(table));
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> probe_split(std::size_t n, double test_fraction,
                                                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidFraction("test fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, {0x9b}));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n))));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, n)));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, n)), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

ProbeResult linear_probe(const PointMatrix& x, std::span<const int> labels, const std::vector<std::size_t>& train,
                         const std::vector<std::size_t>& test, std::size_t iterations, double lr, double l2) {
  if (labels.size() != static_cast<std::size_t>(x.rows())) throw InvalidArgument("one label per row required");
  if (train.empty() || test.empty()) throw InvalidArgument("train and test sets must be non-empty");
  std::set<int> all_classes(labels.begin(), labels.end()), train_classes;
  for (auto i : train) train_classes.insert(labels[i]);
  if (train_classes.size() < 2) throw MissingClass("the training split holds fewer than two classes");
  for (int c : all_classes) {
    if (!train_classes.count(c)) throw MissingClass("class " + std::to_string(c) + " is absent from the training split");
  }
  const std::vector<int> classes(all_classes.begin(), all_classes.end());
  const auto K = static_cast<Eigen::Index>(classes.size());
  const Eigen::Index d = x.cols();
  const auto class_of = [&](int label) {
    return static_cast<Eigen::Index>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin());
  };

  Eigen::MatrixXd xt(static_cast<Eigen::Index>(train.size()), d);
  for (std::size_t i = 0; i < train.size(); ++i) xt.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(train[i]));
  const Eigen::RowVectorXd mu = xt.colwise().mean();
  Eigen::RowVectorXd sd = ((xt.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(sd(j) > 1e-12)) sd(j) = 1.0;
  }
  const auto standardize = [&](const Eigen::MatrixXd& m) {
    return Eigen::MatrixXd((m.rowwise() - mu).array().rowwise() / sd.array());
  };
  const Eigen::MatrixXd z = standardize(xt);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(z.rows(), K);
  for (std::size_t i = 0; i < train.size(); ++i) y(static_cast<Eigen::Index>(i), class_of(labels[train[i]])) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, K);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(K);
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  for (std::size_t it = 0; it < iterations; ++it) {
    Eigen::MatrixXd logits = (z * w).rowwise() + b;
    logits = logits.colwise() - logits.rowwise().maxCoeff();
    Eigen::MatrixXd p = logits.array().exp();
    p = p.array().colwise() / p.rowwise().sum().array();
    const Eigen::MatrixXd err = (p - y) * inv_n;
    w -= lr * (z.transpose() * err + l2 * w);
    b -= lr * err.colwise().sum();
  }

  Eigen::MatrixXd xs(static_cast<Eigen::Index>(test.size()), d);
  for (std::size_t i = 0; i < test.size(); ++i) xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(test[i]));
  const Eigen::MatrixXd scores = (standardize(xs) * w).rowwise() + b;
  std::vector<std::size_t> tp(classes.size(), 0), fp(classes.size(), 0), fn(classes.size(), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Eigen::Index pred = 0;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&pred);
    const Eigen::Index truth = class_of(labels[test[i]]);
    if (pred == truth) {
      ++correct;
      ++tp[static_cast<std::size_t>(truth)];
    } else {
      ++fp[static_cast<std::size_t>(pred)];
      ++fn[static_cast<std::size_t>(truth)];
    }
  }
  ProbeResult out;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1_sum += denom > 0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  out.macro_f1 = f1_sum / static_cast<double>(classes.size());
  return out;
}

}  // namespace sagefm
