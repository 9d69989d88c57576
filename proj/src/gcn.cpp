#include "sagefm/gcn.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sagefm {

// ---------------------------------------------------------------------------
// Parameters

void ArchitectureSpec::validate() const {
  if (gene_dim == 0) throw ShapeError("gene_dim must be >= 1");
  if (hidden_widths.empty()) throw ShapeError("at least one graph-convolution layer is required");
  for (auto w : hidden_widths) {
    if (w == 0) throw ShapeError("hidden widths must be >= 1");
  }
}

template <class T>
LayerTensors<T> LayerTensors<T>::zeros_like() const {
  LayerTensors<T> z;
  z.conv.resize(conv.size());
  for (std::size_t i = 0; i < conv.size(); ++i) {
    z.conv[i].weight = Matrix<T>::Zero(conv[i].weight.rows(), conv[i].weight.cols());
    z.conv[i].bias = RowVector<T>::Zero(conv[i].bias.size());
  }
  z.readout.weight = Matrix<T>::Zero(readout.weight.rows(), readout.weight.cols());
  z.readout.bias = RowVector<T>::Zero(readout.bias.size());
  return z;
}

template <class T>
bool LayerTensors<T>::all_finite() const {
  bool ok = true;
  for_each([&](const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

template <class T>
std::size_t LayerTensors<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.arch = arch;
  out.seed = seed;
  out.conv.resize(this->conv.size());
  for (std::size_t i = 0; i < this->conv.size(); ++i) {
    out.conv[i].weight = this->conv[i].weight.template cast<U>();
    out.conv[i].bias = this->conv[i].bias.template cast<U>();
  }
  out.readout.weight = this->readout.weight.template cast<U>();
  out.readout.bias = this->readout.bias.template cast<U>();
  return out;
}

template <class T>
ModelParams<T> init_params(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams<T> p;
  p.arch = arch;
  p.seed = seed;
  Rng rng(seed);
  auto make = [&](std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer<T> layer;
    layer.weight.resize(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
    // Row-major fill order so the draw sequence matches the on-disk layout.
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = static_cast<T>(dist(rng));
    }
    layer.bias = RowVector<T>::Zero(static_cast<Eigen::Index>(out));
    return layer;
  };
  std::size_t in = arch.gene_dim;
  for (auto w : arch.hidden_widths) {
    p.conv.push_back(make(in, w));
    in = w;
  }
  p.readout = make(in, arch.gene_dim);
  return p;
}

namespace {

template <class T>
void check_params(const ModelParams<T>& params) {
  params.arch.validate();
  if (params.conv.size() != params.arch.layer_count()) throw ShapeError("layer count disagrees with architecture");
  Eigen::Index in = static_cast<Eigen::Index>(params.arch.gene_dim);
  for (std::size_t l = 0; l < params.conv.size(); ++l) {
    const auto out = static_cast<Eigen::Index>(params.arch.hidden_widths[l]);
    if (params.conv[l].weight.rows() != in || params.conv[l].weight.cols() != out || params.conv[l].bias.size() != out) {
      throw ShapeError("conv layer " + std::to_string(l) + " has the wrong shape");
    }
    in = out;
  }
  if (params.readout.weight.rows() != in || params.readout.weight.cols() != static_cast<Eigen::Index>(params.arch.gene_dim) ||
      params.readout.bias.size() != static_cast<Eigen::Index>(params.arch.gene_dim)) {
    throw ShapeError("readout has the wrong shape");
  }
}

template <class T>
void check_graph_input(const ModelParams<T>& params, const Matrix<T>& a_hat, const Matrix<T>& x) {
  check_params(params);
  if (a_hat.rows() == 0 || a_hat.rows() != a_hat.cols()) throw ShapeError("adjacency must be square and non-empty");
  if (x.rows() != a_hat.rows()) throw ShapeError("feature rows must match adjacency size");
  if (x.cols() != static_cast<Eigen::Index>(params.arch.gene_dim)) throw ShapeError("feature width must equal gene_dim");
  if (!x.allFinite() || !a_hat.allFinite()) throw NumericError("non-finite model input");
}

template <class T>
void check_mask(std::span<const std::uint32_t> mask, std::size_t gene_dim) {
  if (mask.empty()) throw EmptyMask("mask must name at least one gene");
  for (auto g : mask) {
    if (g >= gene_dim) throw ShapeError("mask index " + std::to_string(g) + " out of range");
  }
}

template <class T>
RowVector<T> readout(const ModelParams<T>& params, const RowVector<T>& h) {
  return h * params.readout.weight + params.readout.bias;
}

}  // namespace

template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, const Matrix<T>& a_hat, const Matrix<T>& x) {
  check_graph_input(params, a_hat, x);
  ForwardResult<T> out;
  Matrix<T> h = x;
  for (const auto& layer : params.conv) {
    Matrix<T> z = (a_hat * h) * layer.weight;
    z.rowwise() += layer.bias;
    h = z.cwiseMax(T(0));
    out.activations.push_back(h);
  }
  out.prediction = readout<T>(params, h.row(0));
  return out;
}

template <class T>
T masked_mse(const RowVector<T>& pred, const RowVector<T>& target, std::span<const std::uint32_t> mask) {
  if (pred.size() != target.size()) throw ShapeError("prediction and target widths differ");
  check_mask<T>(mask, static_cast<std::size_t>(pred.size()));
  T sum = 0;
  for (auto g : mask) {
    const T r = pred(g) - target(g);
    sum += r * r;
  }
  return sum / static_cast<T>(mask.size());
}

template <class T>
BackwardResult<T> backward(const ModelParams<T>& params, const Matrix<T>& a_hat, const Matrix<T>& x,
                           std::span<const std::uint32_t> mask, const RowVector<T>& target) {
  check_graph_input(params, a_hat, x);
  check_mask<T>(mask, params.arch.gene_dim);
  if (target.size() != static_cast<Eigen::Index>(params.arch.gene_dim)) throw ShapeError("target width must equal gene_dim");

  const std::size_t layers = params.conv.size();
  std::vector<Matrix<T>> h(layers + 1);   // h[l] = input of layer l
  std::vector<Matrix<T>> ah(layers);      // a_hat * h[l]
  h[0] = x;
  for (std::size_t l = 0; l < layers; ++l) {
    ah[l] = a_hat * h[l];
    Matrix<T> z = ah[l] * params.conv[l].weight;
    z.rowwise() += params.conv[l].bias;
    h[l + 1] = z.cwiseMax(T(0));
  }
  const RowVector<T> center = h[layers].row(0);
  const RowVector<T> pred = readout<T>(params, center);

  BackwardResult<T> out;
  out.loss = masked_mse<T>(pred, target, mask);
  out.grads = params.zeros_like();

  RowVector<T> dpred = RowVector<T>::Zero(pred.size());
  const T scale = T(2) / static_cast<T>(mask.size());
  for (auto g : mask) dpred(g) += scale * (pred(g) - target(g));

  out.grads.readout.weight = center.transpose() * dpred;
  out.grads.readout.bias = dpred;

  Matrix<T> dh = Matrix<T>::Zero(h[layers].rows(), h[layers].cols());
  dh.row(0) = dpred * params.readout.weight.transpose();
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix<T> dz = dh.cwiseProduct((h[l + 1].array() > T(0)).template cast<T>().matrix());
    out.grads.conv[l].weight = ah[l].transpose() * dz;
    out.grads.conv[l].bias = dz.colwise().sum();
    if (l > 0) dh = a_hat.transpose() * (dz * params.conv[l].weight.transpose());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batched path

template <class T>
void GraphBatch<T>::resize(std::size_t batch, std::size_t gene_dim) {
  adjacency.resize(batch);
  inputs.resize(static_cast<Eigen::Index>(batch * kSubgraphSize), static_cast<Eigen::Index>(gene_dim));
}

namespace {

constexpr Eigen::Index kN = static_cast<Eigen::Index>(kSubgraphSize);

template <class T>
void check_batch(const ModelParams<T>& params, const GraphBatch<T>& batch) {
  check_params(params);
  if (batch.inputs.rows() != static_cast<Eigen::Index>(batch.size()) * kN) throw ShapeError("batch rows disagree");
  if (batch.inputs.cols() != static_cast<Eigen::Index>(params.arch.gene_dim)) throw ShapeError("batch width must equal gene_dim");
  if (!batch.inputs.allFinite()) throw NumericError("non-finite model input");
}

/// Per-graph A_hat * H for stacked node features.
template <class T>
Matrix<T> propagate(const GraphBatch<T>& batch, const Matrix<T>& h) {
  Matrix<T> out(h.rows(), h.cols());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto r = static_cast<Eigen::Index>(b) * kN;
    out.middleRows(r, kN).noalias() = batch.adjacency[b] * h.middleRows(r, kN);
  }
  return out;
}

/// Center row of A_hat * H for every graph.
template <class T>
Matrix<T> propagate_center(const GraphBatch<T>& batch, const Matrix<T>& h) {
  Matrix<T> out(static_cast<Eigen::Index>(batch.size()), h.cols());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto r = static_cast<Eigen::Index>(b) * kN;
    out.row(static_cast<Eigen::Index>(b)).noalias() = batch.adjacency[b].row(0) * h.middleRows(r, kN);
  }
  return out;
}

template <class T>
Matrix<T> dense_relu(const Matrix<T>& in, const DenseLayer<T>& layer) {
  Matrix<T> z(in.rows(), layer.weight.cols());
  z.noalias() = in * layer.weight;
  z.rowwise() += layer.bias;
  return z.cwiseMax(T(0));
}

/// Runs conv layers [0, upto) over all nodes; returns the input of layer `upto`.
template <class T>
Matrix<T> run_full_layers(const ModelParams<T>& params, const GraphBatch<T>& batch, std::size_t upto) {
  Matrix<T> h = batch.inputs;
  for (std::size_t l = 0; l < upto; ++l) h = dense_relu<T>(propagate<T>(batch, h), params.conv[l]);
  return h;
}

}  // namespace

template <class T>
Matrix<T> predict_centers(const ModelParams<T>& params, const GraphBatch<T>& batch) {
  check_batch(params, batch);
  const std::size_t layers = params.conv.size();
  const Matrix<T> h = run_full_layers(params, batch, layers - 1);
  const Matrix<T> center = dense_relu<T>(propagate_center<T>(batch, h), params.conv[layers - 1]);
  Matrix<T> pred(center.rows(), params.readout.weight.cols());
  pred.noalias() = center * params.readout.weight;
  pred.rowwise() += params.readout.bias;
  return pred;
}

template <class T>
Matrix<T> center_activations(const ModelParams<T>& params, const GraphBatch<T>& batch, std::size_t layer) {
  check_batch(params, batch);
  if (layer < 1 || layer > params.conv.size()) {
    throw InvalidLayer("layer " + std::to_string(layer) + " outside 1.." + std::to_string(params.conv.size()));
  }
  const Matrix<T> h = run_full_layers(params, batch, layer - 1);
  return dense_relu<T>(propagate_center<T>(batch, h), params.conv[layer - 1]);
}

template <class T>
T batch_loss_and_gradients(const ModelParams<T>& params, const GraphBatch<T>& batch,
                           const std::vector<std::vector<std::uint32_t>>& masks, const Matrix<T>& targets,
                           GradientSet<T>& grads) {
  check_batch(params, batch);
  const std::size_t bsz = batch.size();
  if (bsz == 0) throw ShapeError("empty batch");
  if (masks.size() != bsz || targets.rows() != static_cast<Eigen::Index>(bsz) ||
      targets.cols() != static_cast<Eigen::Index>(params.arch.gene_dim)) {
    throw ShapeError("masks / targets disagree with batch size");
  }
  for (const auto& m : masks) check_mask<T>(m, params.arch.gene_dim);

  const std::size_t layers = params.conv.size();
  std::vector<Matrix<T>> h(layers + 1);
  std::vector<Matrix<T>> ah(layers);
  h[0] = batch.inputs;
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    ah[l] = propagate<T>(batch, h[l]);
    h[l + 1] = dense_relu<T>(ah[l], params.conv[l]);
  }
  ah[layers - 1] = propagate_center<T>(batch, h[layers - 1]);
  h[layers] = dense_relu<T>(ah[layers - 1], params.conv[layers - 1]);  // B x width, centers only

  Matrix<T> pred(static_cast<Eigen::Index>(bsz), params.readout.weight.cols());
  pred.noalias() = h[layers] * params.readout.weight;
  pred.rowwise() += params.readout.bias;

  Matrix<T> dpred = Matrix<T>::Zero(pred.rows(), pred.cols());
  T loss_sum = 0;
  for (std::size_t b = 0; b < bsz; ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    const T inv_m = T(1) / static_cast<T>(masks[b].size());
    const T scale = T(2) * inv_m / static_cast<T>(bsz);
    T sq = 0;
    for (auto g : masks[b]) {
      const T r = pred(row, g) - targets(row, g);
      sq += r * r;
      dpred(row, g) += scale * r;
    }
    loss_sum += sq * inv_m;
  }
  if (grads.conv.size() != layers) grads = params.zeros_like();

  grads.readout.weight.noalias() = h[layers].transpose() * dpred;
  grads.readout.bias = dpred.colwise().sum();

  Matrix<T> dh = dpred * params.readout.weight.transpose();  // B x width
  {
    const auto& layer = params.conv[layers - 1];
    const Matrix<T> dz = dh.cwiseProduct((h[layers].array() > T(0)).template cast<T>().matrix());
    grads.conv[layers - 1].weight.noalias() = ah[layers - 1].transpose() * dz;
    grads.conv[layers - 1].bias = dz.colwise().sum();
    if (layers > 1) {
      const Matrix<T> dah = dz * layer.weight.transpose();  // B x in
      dh.resize(static_cast<Eigen::Index>(bsz) * kN, dah.cols());
      for (std::size_t b = 0; b < bsz; ++b) {
        dh.middleRows(static_cast<Eigen::Index>(b) * kN, kN).noalias() =
            batch.adjacency[b].row(0).transpose() * dah.row(static_cast<Eigen::Index>(b));
      }
    }
  }
  for (std::size_t l = layers - 1; l-- > 0;) {
    const Matrix<T> dz = dh.cwiseProduct((h[l + 1].array() > T(0)).template cast<T>().matrix());
    grads.conv[l].weight.noalias() = ah[l].transpose() * dz;
    grads.conv[l].bias = dz.colwise().sum();
    if (l > 0) {
      const Matrix<T> dah = dz * params.conv[l].weight.transpose();
      dh.resize(dah.rows(), dah.cols());
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto r = static_cast<Eigen::Index>(b) * kN;
        dh.middleRows(r, kN).noalias() = batch.adjacency[b].transpose() * dah.middleRows(r, kN);
      }
    }
  }
  return loss_sum / static_cast<T>(bsz);
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
AdamState<T> make_adam_state(const LayerTensors<T>& params) {
  AdamState<T> s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

namespace {

/// Visits matching tensors of four congruent LayerTensors.
template <class T, class Fn>
void zip4(LayerTensors<T>& p, const LayerTensors<T>& g, LayerTensors<T>& m, LayerTensors<T>& v, Fn&& fn) {
  if (p.conv.size() != g.conv.size() || p.conv.size() != m.conv.size() || p.conv.size() != v.conv.size()) {
    throw ShapeError("optimizer tensors are not congruent");
  }
  for (std::size_t l = 0; l < p.conv.size(); ++l) {
    fn(p.conv[l].weight, g.conv[l].weight, m.conv[l].weight, v.conv[l].weight);
    fn(p.conv[l].bias, g.conv[l].bias, m.conv[l].bias, v.conv[l].bias);
  }
  fn(p.readout.weight, g.readout.weight, m.readout.weight, v.readout.weight);
  fn(p.readout.bias, g.readout.bias, m.readout.bias, v.readout.bias);
}

}  // namespace

template <class T>
void adam_step(LayerTensors<T>& params, const GradientSet<T>& grads, AdamState<T>& state, const AdamConfig& cfg,
               std::uint64_t t) {
  if (t == 0) throw InvalidArgument("Adam step index starts at 1");
  if (!grads.all_finite()) throw NumericError("non-finite gradient");
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  zip4(params, grads, state.m, state.v, [&](auto& p, const auto& g, auto& m, auto& v) {
    if (p.rows() != g.rows() || p.cols() != g.cols() || m.rows() != p.rows() || m.cols() != p.cols()) {
      throw ShapeError("gradient shape differs from parameter shape");
    }
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  });
  state.t = t;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kWeightsMagic[8] = {'S', 'A', 'G', 'E', 'F', 'M', '0', '1'};

template <class V>
void put_le(std::ostream& out, V v) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(V));
}

template <class V>
V get_le(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(V)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(V))) throw CorruptCheckpoint("weights.bin truncated in " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  V v;
  std::memcpy(&v, bytes, sizeof(V));
  return v;
}

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> dims;
};

std::vector<TensorEntry> tensor_directory(const ArchitectureSpec& arch) {
  std::vector<TensorEntry> dir;
  std::uint64_t in = arch.gene_dim;
  for (std::size_t l = 0; l < arch.hidden_widths.size(); ++l) {
    const std::uint64_t out = arch.hidden_widths[l];
    dir.push_back({"conv" + std::to_string(l) + ".weight", {in, out}});
    dir.push_back({"conv" + std::to_string(l) + ".bias", {out}});
    in = out;
  }
  dir.push_back({"readout.weight", {in, arch.gene_dim}});
  dir.push_back({"readout.bias", {arch.gene_dim}});
  return dir;
}

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const CheckpointMeta& meta, const std::filesystem::path& dir) {
  check_params(params);
  if (!(params.arch == meta.arch)) throw ShapeError("checkpoint metadata architecture differs from parameters");
  std::filesystem::create_directories(dir);

  nlohmann::ordered_json j;
  j["format"] = "sagefm-checkpoint";
  j["architecture"] = {{"gene_dim", meta.arch.gene_dim}, {"hidden_widths", meta.arch.hidden_widths},
                       {"readout", "dense-center-linear"}};
  j["vocab_sha256"] = meta.vocab_sha256;
  j["normalization_scheme"] = meta.normalization_scheme;
  j["seed"] = meta.seed;
  j["sigma"] = meta.sigma;
  j["mask_fraction"] = meta.mask_fraction;
  j["split"] = {{"train", meta.split_ratios.train},
                {"validation", meta.split_ratios.validation},
                {"test", meta.split_ratios.test},
                {"seed", meta.split_seed}};
  {
    std::ofstream out(dir / "model.json", std::ios::binary);
    if (!out) throw LoadError("cannot write " + (dir / "model.json").string());
    out << j.dump(2) << '\n';
  }

  const auto directory = tensor_directory(meta.arch);
  std::ostringstream dir_bytes(std::ios::binary);
  for (const auto& e : directory) {
    put_le<std::uint32_t>(dir_bytes, static_cast<std::uint32_t>(e.name.size()));
    dir_bytes.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(dir_bytes, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_le<std::uint64_t>(dir_bytes, d);
  }
  const std::string dir_str = dir_bytes.str();

  std::ofstream out(dir / "weights.bin", std::ios::binary);
  if (!out) throw LoadError("cannot write " + (dir / "weights.bin").string());
  out.write(kWeightsMagic, sizeof(kWeightsMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(directory.size()));
  put_le<std::uint64_t>(out, dir_str.size());
  out.write(dir_str.data(), static_cast<std::streamsize>(dir_str.size()));
  params.for_each([&](const auto& t) {
    // Row-major element order.
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) put_le<float>(out, t(r, c));
    }
  });
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto json_path = dir / "model.json";
  const auto bin_path = dir / "weights.bin";
  if (!std::filesystem::exists(json_path) || !std::filesystem::exists(bin_path)) {
    throw LoadError("checkpoint directory " + dir.string() + " lacks model.json or weights.bin");
  }
  Checkpoint ck;
  try {
    std::ifstream in(json_path);
    const auto j = nlohmann::json::parse(in);
    ck.meta.arch.gene_dim = j.at("architecture").at("gene_dim").get<std::size_t>();
    ck.meta.arch.hidden_widths = j.at("architecture").at("hidden_widths").get<std::vector<std::size_t>>();
    ck.meta.vocab_sha256 = j.at("vocab_sha256").get<std::string>();
    ck.meta.normalization_scheme = j.at("normalization_scheme").get<std::string>();
    ck.meta.seed = j.at("seed").get<std::uint64_t>();
    ck.meta.sigma = j.at("sigma").get<double>();
    ck.meta.mask_fraction = j.at("mask_fraction").get<double>();
    ck.meta.split_ratios = {j.at("split").at("train").get<double>(), j.at("split").at("validation").get<double>(),
                            j.at("split").at("test").get<double>()};
    ck.meta.split_seed = j.at("split").at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(json_path.string() + ": " + e.what());
  }
  try {
    ck.meta.arch.validate();
  } catch (const ShapeError& e) {
    throw CorruptCheckpoint(std::string("invalid architecture: ") + e.what());
  }

  std::ifstream in(bin_path, std::ios::binary);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw CorruptCheckpoint(bin_path.string() + ": bad magic");
  }
  const auto expected = tensor_directory(ck.meta.arch);
  const auto count = get_le<std::uint32_t>(in, "header");
  if (count != expected.size()) throw CorruptCheckpoint("tensor count disagrees with model.json");
  get_le<std::uint64_t>(in, "header");  // directory length; entries are parsed individually
  for (const auto& e : expected) {
    const auto name_len = get_le<std::uint32_t>(in, "directory");
    if (name_len > 4096) throw CorruptCheckpoint("implausible tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CorruptCheckpoint("weights.bin truncated in directory");
    const auto ndim = get_le<std::uint32_t>(in, "directory");
    if (ndim > 8) throw CorruptCheckpoint("implausible tensor rank");
    std::vector<std::uint64_t> dims(ndim);
    for (auto& d : dims) d = get_le<std::uint64_t>(in, "directory");
    if (name != e.name || dims != e.dims) throw CorruptCheckpoint("tensor '" + name + "' disagrees with model.json");
  }

  ck.params = init_params<float>(ck.meta.arch, ck.meta.seed);
  ck.params.for_each([&](auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = get_le<float>(in, "tensor data");
    }
  });
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptCheckpoint("trailing bytes after tensor data");
  return ck;
}

void check_compatible(const CheckpointMeta& meta, const GeneVocabulary& vocab, std::string_view scheme) {
  if (meta.arch.gene_dim != vocab.size()) {
    throw IncompatibleCheckpoint("checkpoint expects " + std::to_string(meta.arch.gene_dim) + " genes, dataset has " +
                                 std::to_string(vocab.size()));
  }
  if (meta.vocab_sha256 != vocab.sha256()) throw IncompatibleCheckpoint("gene vocabulary hash differs from checkpoint");
  if (meta.normalization_scheme != scheme) {
    throw IncompatibleCheckpoint("checkpoint normalization '" + meta.normalization_scheme + "' differs from dataset '" +
                                 std::string(scheme) + "'");
  }
}

// ---------------------------------------------------------------------------
// Instantiations

#define SAGEFM_INSTANTIATE(T)                                                                                      \
  template struct LayerTensors<T>;                                                                                 \
  template struct ModelParams<T>;                                                                                  \
  template struct GraphBatch<T>;                                                                                   \
  template ModelParams<T> init_params<T>(const ArchitectureSpec&, std::uint64_t);                                  \
  template ForwardResult<T> forward<T>(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&);                 \
  template T masked_mse<T>(const RowVector<T>&, const RowVector<T>&, std::span<const std::uint32_t>);              \
  template BackwardResult<T> backward<T>(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&,                \
                                         std::span<const std::uint32_t>, const RowVector<T>&);                     \
  template T batch_loss_and_gradients<T>(const ModelParams<T>&, const GraphBatch<T>&,                              \
                                         const std::vector<std::vector<std::uint32_t>>&, const Matrix<T>&,         \
                                         GradientSet<T>&);                                                         \
  template Matrix<T> predict_centers<T>(const ModelParams<T>&, const GraphBatch<T>&);                              \
  template Matrix<T> center_activations<T>(const ModelParams<T>&, const GraphBatch<T>&, std::size_t);              \
  template AdamState<T> make_adam_state<T>(const LayerTensors<T>&);                                                \
  template void adam_step<T>(LayerTensors<T>&, const GradientSet<T>&, AdamState<T>&, const AdamConfig&,            \
                             std::uint64_t);

SAGEFM_INSTANTIATE(float)
SAGEFM_INSTANTIATE(double)
#undef SAGEFM_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace sagefm
