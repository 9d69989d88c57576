#pragma once

// Masked-central-spot pretraining with validation-driven model selection.

#include "sagefm/data.hpp"
#include "sagefm/gcn.hpp"
#include "sagefm/graph.hpp"
#include "sagefm/random.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace sagefm {

/// Records which samples were read; tests use it to prove split isolation.
class AccessAudit {
 public:
  void touch(const std::string& sample_id);
  std::set<std::string> samples() const;
  bool touched(const std::string& sample_id) const;

 private:
  mutable std::mutex mu_;
  std::set<std::string> seen_;
};

/// Prepares the named samples (in the order given). `audit` may be null.
std::vector<PreparedSample> prepare_samples(const Dataset& dataset, const std::vector<std::string>& ids,
                                            double sigma, AccessAudit* audit = nullptr);

/// floor(fraction * gene_count) distinct indices drawn uniformly, sorted.
/// Throws InvalidFraction unless 0 < fraction < 1.
std::vector<std::uint32_t> make_mask(std::size_t gene_count, double fraction, Rng& rng);

/// Copies subgraph `index` of `ps` into slot `b` of `batch`: node rows in
/// subgraph order and the float adjacency.
void load_batch_slot(GraphBatch<float>& batch, std::size_t b, const PreparedSample& ps, std::size_t index);

struct CenterRef {
  std::size_t sample = 0;    // index into the prepared collection
  std::size_t subgraph = 0;  // index into PreparedSample::subgraphs
};

/// Every subgraph of every prepared sample, in sample then subgraph order.
std::vector<CenterRef> enumerate_centers(const std::vector<PreparedSample>& samples);

/// Mask of one evaluation center; depends only on (seed, dataset sample
/// index, center spot), so it does not change with batch composition.
std::vector<std::uint32_t> center_mask(std::uint64_t seed, const PreparedSample& ps, std::size_t subgraph,
                                       std::size_t gene_count, double fraction);

struct TrainConfig {
  double mask_fraction = 0.3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double lr = 1e-3;
  double sigma = 0.0;  // <= 0: per-sample lattice pitch
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::vector<std::size_t> hidden_widths{1024, 512, 512, 512, 1024};

  /// Throws InvalidFraction / InvalidArgument.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_rmse = 0.0;
  double seconds = 0.0;  // 0 in deterministic mode so histories compare bytewise
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0: no epoch ran
  double best_val_rmse = 0.0;
  double val_baseline_rmse = 0.0;  // zero predictor on the fixed validation masks
  double init_val_rmse = 0.0;
};

struct TrainResult {
  ModelParams<float> params;  // best epoch (or the initialization)
  CheckpointMeta meta;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on `split.train`, selects on `split.validation`; test samples are
/// never read. Throws EmptyTrainingSet, DivergenceError.
TrainResult train(const Dataset& dataset, const SplitAssignment& split, const TrainConfig& config,
                  AccessAudit* audit = nullptr, const EpochCallback& on_epoch = {});

/// Masked RMSE of `params` over the fixed masks of `samples`, plus the zero
/// predictor on the same masks. Batches of `batch_size`.
struct MaskedRmse {
  double rmse = 0.0;
  double baseline_rmse = 0.0;
  std::size_t entries = 0;
};
MaskedRmse masked_rmse(const ModelParams<float>& params, const std::vector<PreparedSample>& samples,
                       double mask_fraction, std::uint64_t mask_seed, std::size_t batch_size = 64);

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace sagefm
