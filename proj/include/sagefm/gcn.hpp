#pragma once

// Graph convolutional network over subgraphs: H^l = ReLU(A_hat H^{l-1} W^l + b^l),
// followed by a linear readout of the center node.

#include "sagefm/data.hpp"
#include "sagefm/graph.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace sagefm {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct ArchitectureSpec {
  std::size_t gene_dim = 0;
  std::vector<std::size_t> hidden_widths{1024, 512, 512, 512, 1024};

  std::size_t layer_count() const { return hidden_widths.size(); }
  /// Throws ShapeError when any width is zero or there are no conv layers.
  void validate() const;
  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

template <class T>
struct DenseLayer {
  Matrix<T> weight;  // [in x out]
  RowVector<T> bias;  // [out]
};

/// Parameter tensors in manifest order: conv0.weight, conv0.bias, ...,
/// readout.weight, readout.bias. Gradients and optimizer moments share it.
template <class T>
struct LayerTensors {
  std::vector<DenseLayer<T>> conv;
  DenseLayer<T> readout;

  template <class Fn>
  void for_each(Fn&& fn) {
    for (auto& l : conv) {
      fn(l.weight);
      fn(l.bias);
    }
    fn(readout.weight);
    fn(readout.bias);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    for (const auto& l : conv) {
      fn(l.weight);
      fn(l.bias);
    }
    fn(readout.weight);
    fn(readout.bias);
  }

  /// Zero tensors with the same shapes.
  LayerTensors zeros_like() const;
  bool all_finite() const;
  std::size_t parameter_count() const;
};

template <class T>
using GradientSet = LayerTensors<T>;

template <class T>
struct ModelParams : LayerTensors<T> {
  ArchitectureSpec arch;
  std::uint64_t seed = 0;

  template <class U>
  ModelParams<U> cast() const;
};

/// Glorot-uniform weights (+-sqrt(6 / (fan_in + fan_out))), zero biases.
template <class T>
ModelParams<T> init_params(const ArchitectureSpec& arch, std::uint64_t seed);

template <class T>
struct ForwardResult {
  /// activations[l] = H^{l+1}, one row per node.
  std::vector<Matrix<T>> activations;
  RowVector<T> prediction;
};

/// Full propagation over all nodes of an arbitrary-size graph. Row 0 of `x`
/// is the center. Throws ShapeError / NumericError.
template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, const Matrix<T>& a_hat, const Matrix<T>& x);

/// Mean squared residual over the masked genes. Throws EmptyMask.
template <class T>
T masked_mse(const RowVector<T>& pred, const RowVector<T>& target, std::span<const std::uint32_t> mask);

template <class T>
struct BackwardResult {
  GradientSet<T> grads;
  T loss{};
};

/// Reverse-mode gradients of masked_mse(forward(x).prediction, target, mask).
/// ReLU'(0) is taken as 0.
template <class T>
BackwardResult<T> backward(const ModelParams<T>& params, const Matrix<T>& a_hat, const Matrix<T>& x,
                           std::span<const std::uint32_t> mask, const RowVector<T>& target);

// ---------------------------------------------------------------------------
// Batched 15-node path. Only the center row feeds the readout, so the last
// conv layer is evaluated for the center alone; results equal the reference
// path above.

template <class T>
struct GraphBatch {
  std::vector<Eigen::Matrix<T, kSubgraphSize, kSubgraphSize>> adjacency;
  /// Stacked node features: rows [15 b, 15 b + 15) belong to graph b.
  Matrix<T> inputs;

  std::size_t size() const { return adjacency.size(); }
  void resize(std::size_t batch, std::size_t gene_dim);
};

/// Mean masked MSE over the batch and its gradient (accumulated into `grads`,
/// which is overwritten). masks[b] / targets.row(b) belong to graph b.
template <class T>
T batch_loss_and_gradients(const ModelParams<T>& params, const GraphBatch<T>& batch,
                           const std::vector<std::vector<std::uint32_t>>& masks, const Matrix<T>& targets,
                           GradientSet<T>& grads);

/// Center predictions, one row per graph.
template <class T>
Matrix<T> predict_centers(const ModelParams<T>& params, const GraphBatch<T>& batch);

/// Center activation after conv layer `layer` (1-based), one row per graph.
/// Throws InvalidLayer.
template <class T>
Matrix<T> center_activations(const ModelParams<T>& params, const GraphBatch<T>& batch, std::size_t layer);

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
  LayerTensors<T> m;
  LayerTensors<T> v;
  std::uint64_t t = 0;  // steps taken
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
AdamState<T> make_adam_state(const LayerTensors<T>& params);

/// One bias-corrected Adam update at step t (>= 1). Throws NumericError on a
/// non-finite gradient and InvalidArgument for t = 0.
template <class T>
void adam_step(LayerTensors<T>& params, const GradientSet<T>& grads, AdamState<T>& state, const AdamConfig& cfg,
               std::uint64_t t);

// ---------------------------------------------------------------------------
// Checkpoints: model.json + weights.bin

struct CheckpointMeta {
  ArchitectureSpec arch;
  std::string vocab_sha256;
  std::string normalization_scheme;
  std::uint64_t seed = 0;
  double sigma = 0.0;  // adjacency bandwidth; 0 = per-sample pitch
  double mask_fraction = 0.3;
  SplitRatios split_ratios;
  std::uint64_t split_seed = 0;
};

struct Checkpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
};

void save_checkpoint(const ModelParams<float>& params, const CheckpointMeta& meta, const std::filesystem::path& dir);
/// Throws CorruptCheckpoint on bad magic, truncation or shape disagreement.
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Throws IncompatibleCheckpoint when the vocabulary hash or the
/// normalization scheme differ from those the model was trained on.
void check_compatible(const CheckpointMeta& meta, const GeneVocabulary& vocab, std::string_view scheme);

}  // namespace sagefm
