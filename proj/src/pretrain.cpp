#include "sagefm/pretrain.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/log.hpp"
#include "sagefm/textio.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace sagefm {

void AccessAudit::touch(const std::string& sample_id) {
  std::lock_guard lock(mu_);
  seen_.insert(sample_id);
}

std::set<std::string> AccessAudit::samples() const {
  std::lock_guard lock(mu_);
  return seen_;
}

bool AccessAudit::touched(const std::string& sample_id) const {
  std::lock_guard lock(mu_);
  return seen_.count(sample_id) > 0;
}

std::vector<PreparedSample> prepare_samples(const Dataset& dataset, const std::vector<std::string>& ids,
                                            double sigma, AccessAudit* audit) {
  std::vector<PreparedSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    if (audit) audit->touch(id);
    out.push_back(prepare_sample(dataset, dataset.sample_index(id), sigma));
  }
  return out;
}

std::vector<std::uint32_t> make_mask(std::size_t gene_count, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidFraction("mask fraction must lie in (0, 1)");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(gene_count)));
  std::vector<std::uint32_t> idx(gene_count);
  std::iota(idx.begin(), idx.end(), 0u);
  // Partial Fisher-Yates; explicit so draws do not depend on the library's sample().
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, gene_count - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void load_batch_slot(GraphBatch<float>& batch, std::size_t b, const PreparedSample& ps, std::size_t index) {
  const Subgraph& sg = ps.subgraphs.at(index);
  const auto base = static_cast<Eigen::Index>(b * kSubgraphSize);
  for (std::size_t i = 0; i < kSubgraphSize; ++i) {
    batch.inputs.row(base + static_cast<Eigen::Index>(i)) = ps.expression.values.row(sg.nodes[i]);
  }
  batch.adjacency[b] = ps.adjacency.at(index).a_hat.cast<float>();
}

std::vector<CenterRef> enumerate_centers(const std::vector<PreparedSample>& samples) {
  std::vector<CenterRef> out;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (std::size_t i = 0; i < samples[s].subgraphs.size(); ++i) out.push_back({s, i});
  }
  return out;
}

std::vector<std::uint32_t> center_mask(std::uint64_t seed, const PreparedSample& ps, std::size_t subgraph,
                                       std::size_t gene_count, double fraction) {
  Rng rng(derive_seed(seed, {ps.sample_index, ps.subgraphs.at(subgraph).center()}));
  return make_mask(gene_count, fraction, rng);
}

void TrainConfig::validate() const {
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) throw InvalidFraction("mask_fraction must lie in (0, 1)");
  if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
  if (patience == 0) throw InvalidArgument("patience must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("lr must be finite and >= 0");
  if (hidden_widths.empty()) throw InvalidArgument("at least one hidden layer is required");
}

namespace {

struct BatchBuffers {
  GraphBatch<float> graphs;
  Matrix<float> targets;
  std::vector<std::vector<std::uint32_t>> masks;
};

/// Fills `buf` with centers [begin, end) of `order`, zeroing each center's
/// masked genes in the input and keeping the originals as targets.
void fill_batch(BatchBuffers& buf, const std::vector<PreparedSample>& samples, const std::vector<CenterRef>& order,
                std::size_t begin, std::size_t end, std::size_t gene_dim) {
  const std::size_t n = end - begin;
  buf.graphs.resize(n, gene_dim);
  buf.targets.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(gene_dim));
  for (std::size_t b = 0; b < n; ++b) {
    const auto& ref = order[begin + b];
    const auto& ps = samples[ref.sample];
    load_batch_slot(buf.graphs, b, ps, ref.subgraph);
    const auto row = static_cast<Eigen::Index>(b);
    const auto center_row = static_cast<Eigen::Index>(b * kSubgraphSize);
    buf.targets.row(row) = buf.graphs.inputs.row(center_row);
    for (auto g : buf.masks[b]) buf.graphs.inputs(center_row, g) = 0.0f;
  }
}

}  // namespace

MaskedRmse masked_rmse(const ModelParams<float>& params, const std::vector<PreparedSample>& samples,
                       double mask_fraction, std::uint64_t mask_seed, std::size_t batch_size) {
  const std::size_t G = params.arch.gene_dim;
  const auto centers = enumerate_centers(samples);
  BatchBuffers buf;
  double sq = 0.0, sq0 = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < centers.size(); begin += batch_size) {
    const std::size_t end = std::min(centers.size(), begin + batch_size);
    buf.masks.clear();
    for (std::size_t i = begin; i < end; ++i) {
      buf.masks.push_back(center_mask(mask_seed, samples[centers[i].sample], centers[i].subgraph, G, mask_fraction));
    }
    fill_batch(buf, samples, centers, begin, end, G);
    const Matrix<float> pred = predict_centers(params, buf.graphs);
    for (std::size_t b = 0; b < end - begin; ++b) {
      const auto row = static_cast<Eigen::Index>(b);
      for (auto g : buf.masks[b]) {
        const double t = buf.targets(row, g);
        const double r = static_cast<double>(pred(row, g)) - t;
        sq += r * r;
        sq0 += t * t;
      }
      count += buf.masks[b].size();
    }
  }
  MaskedRmse out;
  out.entries = count;
  if (count > 0) {
    out.rmse = std::sqrt(sq / static_cast<double>(count));
    out.baseline_rmse = std::sqrt(sq0 / static_cast<double>(count));
  }
  return out;
}

TrainResult train(const Dataset& dataset, const SplitAssignment& split, const TrainConfig& config, AccessAudit* audit,
                  const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t G = dataset.vocab.size();
  if (static_cast<std::size_t>(std::floor(config.mask_fraction * static_cast<double>(G))) == 0) {
    throw InvalidFraction("mask_fraction selects no genes for this vocabulary");
  }

  TrainResult result;
  result.meta.arch = {G, config.hidden_widths};
  result.meta.arch.validate();
  result.meta.vocab_sha256 = dataset.vocab.sha256();
  result.meta.normalization_scheme = std::string(kSchemeCp10kLog1p);
  result.meta.seed = config.seed;
  result.meta.sigma = config.sigma;
  result.meta.mask_fraction = config.mask_fraction;
  result.meta.split_seed = split.seed;
  const double n_split = static_cast<double>(split.train.size() + split.validation.size() + split.test.size());
  if (n_split > 0) {
    result.meta.split_ratios = {static_cast<double>(split.train.size()) / n_split,
                                static_cast<double>(split.validation.size()) / n_split,
                                static_cast<double>(split.test.size()) / n_split};
  }

  const auto train_samples = prepare_samples(dataset, split.train, config.sigma, audit);
  const auto val_samples = prepare_samples(dataset, split.validation, config.sigma, audit);
  const auto train_centers = enumerate_centers(train_samples);
  if (train_centers.empty()) throw EmptyTrainingSet("no eligible subgraphs in the training split");
  if (enumerate_centers(val_samples).empty()) throw EmptyTrainingSet("no eligible subgraphs in the validation split");

  ModelParams<float> params = init_params<float>(result.meta.arch, derive_seed(config.seed, {0x1417}));
  result.params = params;
  const std::uint64_t val_seed = derive_seed(config.seed, {0x7a1});
  const auto init_eval = masked_rmse(params, val_samples, config.mask_fraction, val_seed);
  result.history.val_baseline_rmse = init_eval.baseline_rmse;
  result.history.init_val_rmse = init_eval.rmse;
  result.history.best_val_rmse = init_eval.rmse;
  logger().info("train: {} train / {} val centers, {} parameters, zero-baseline val RMSE {:.4f}", train_centers.size(),
                enumerate_centers(val_samples).size(), params.parameter_count(), init_eval.baseline_rmse);
  if (config.max_epochs == 0) return result;

  AdamState<float> adam = make_adam_state<float>(params);
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  GradientSet<float> grads = params.zeros_like();
  BatchBuffers buf;
  std::vector<CenterRef> order = train_centers;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(derive_seed(config.seed, {0x5f, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      buf.masks.clear();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ps = train_samples[order[i].sample];
        Rng mrng(derive_seed(config.seed, {0x3a, epoch, ps.sample_index, ps.subgraphs[order[i].subgraph].center()}));
        buf.masks.push_back(make_mask(G, config.mask_fraction, mrng));
      }
      fill_batch(buf, train_samples, order, begin, end, G);
      const float loss = batch_loss_and_gradients(params, buf.graphs, buf.masks, buf.targets, grads);
      if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite in epoch " + std::to_string(epoch));
      loss_sum += static_cast<double>(loss) * static_cast<double>(end - begin);
      try {
        adam_step(static_cast<LayerTensors<float>&>(params), grads, adam, adam_cfg, adam.t + 1);
      } catch (const NumericError&) {
        throw DivergenceError("non-finite gradient in epoch " + std::to_string(epoch));
      }
    }
    if (!params.all_finite()) throw DivergenceError("parameters became non-finite in epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_rmse = masked_rmse(params, val_samples, config.mask_fraction, val_seed).rmse;
    if (!std::isfinite(rec.val_rmse)) throw DivergenceError("validation RMSE became non-finite in epoch " + std::to_string(epoch));
    rec.seconds = config.deterministic
                      ? 0.0
                      : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    logger().info("epoch {}: train loss {:.5f}, val RMSE {:.5f}", epoch, rec.train_loss, rec.val_rmse);
    if (on_epoch) on_epoch(rec);

    if (rec.val_rmse < best) {
      best = rec.val_rmse;
      since_best = 0;
      result.params = params;
      result.history.best_epoch = epoch;
      result.history.best_val_rmse = rec.val_rmse;
    } else if (++since_best >= config.patience) {
      logger().info("early stop after epoch {} (best {})", epoch, result.history.best_epoch);
      break;
    }
  }
  return result;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  CsvWriter csv(path, {"epoch", "train_loss", "val_rmse", "seconds"});
  for (const auto& e : history.epochs) {
    csv.field(e.epoch).field(e.train_loss).field(e.val_rmse).field(e.seconds);
    csv.end_row();
  }
}

}  // namespace sagefm
