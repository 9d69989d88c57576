#include "doctest.h"

#include "fixtures.hpp"
#include "sagefm/errors.hpp"
#include "sagefm/gcn.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

using namespace sagefm;

namespace {

template <class T>
Matrix<T> random_adjacency(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix<double> w = Matrix<double>::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < w.cols(); ++j) w(i, j) = w(j, i) = u(rng);
  }
  const Eigen::VectorXd d = w.rowwise().sum().cwiseSqrt().cwiseInverse();
  return (d.asDiagonal() * w * d.asDiagonal()).cast<T>();
}

template <class T>
Matrix<T> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<T> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = static_cast<T>(u(rng));
  }
  return m;
}

/// Pointers to every scalar parameter, in manifest order.
template <class T>
std::vector<T*> flat(LayerTensors<T>& t) {
  std::vector<T*> out;
  t.for_each([&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  });
  return out;
}

}  // namespace

TEST_CASE("gradient check against central differences") {
  ArchitectureSpec arch{6, {4, 3}};
  std::mt19937_64 rng(2024);
  int checked = 0;
  double worst = 0;
  for (int draw = 0; draw < 12; ++draw) {
    auto params = init_params<double>(arch, 100 + static_cast<std::uint64_t>(draw));
    // Nonzero biases so the check covers them meaningfully.
    params.for_each([&](auto& m) {
      if (m.rows() == 1) m = random_matrix<double>(1, m.cols(), rng, -0.3, 0.3);
    });
    const auto nodes = static_cast<std::size_t>(3 + draw % 13);
    const auto a = random_adjacency<double>(nodes, rng);
    const auto x = random_matrix<double>(static_cast<Eigen::Index>(nodes), 6, rng, 0, 3);
    const RowVector<double> target = random_matrix<double>(1, 6, rng, 0, 3);
    std::vector<std::uint32_t> mask;
    for (std::uint32_t g = 0; g < 6; ++g) {
      if ((g + static_cast<std::uint32_t>(draw)) % 3 != 0) mask.push_back(g);
    }

    const auto analytic = backward(params, a, x, mask, target);
    CHECK(analytic.loss == doctest::Approx(masked_mse<double>(forward(params, a, x).prediction, target, mask)));
    auto grads = analytic.grads;
    auto g_ptrs = flat(grads);
    auto p_ptrs = flat(params);
    REQUIRE(g_ptrs.size() == p_ptrs.size());
    const double h = 1e-5;
    for (std::size_t k = 0; k < p_ptrs.size(); ++k) {
      const double saved = *p_ptrs[k];
      *p_ptrs[k] = saved + h;
      const double up = masked_mse<double>(forward(params, a, x).prediction, target, mask);
      *p_ptrs[k] = saved - h;
      const double down = masked_mse<double>(forward(params, a, x).prediction, target, mask);
      *p_ptrs[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(numeric - *g_ptrs[k]) / std::max({std::abs(numeric), std::abs(*g_ptrs[k]), 1e-6});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  CHECK(checked > 500);
  CHECK(worst < 1e-4);
}

TEST_CASE("forward fixtures") {
  SUBCASE("isolated node, identity weight") {
    ModelParams<double> p;
    p.arch = {2, {2}};
    p.conv.push_back({Matrix<double>::Identity(2, 2), RowVector<double>::Zero(2)});
    p.readout = {Matrix<double>::Identity(2, 2), RowVector<double>::Zero(2)};
    Matrix<double> a(1, 1);
    a << 1;
    Matrix<double> x(1, 2);
    x << -1, 2;
    const auto r = forward(p, a, x);
    CHECK(r.activations[0](0, 0) == 0.0);
    CHECK(r.activations[0](0, 1) == 2.0);
  }
  SUBCASE("two nodes, hand matrix arithmetic") {
    ModelParams<double> p;
    p.arch = {2, {2}};
    Matrix<double> w(2, 2);
    w << 1, -1, 0.5, 2;
    RowVector<double> b(2);
    b << 0.1, -0.2;
    p.conv.push_back({w, b});
    p.readout = {Matrix<double>::Identity(2, 2), RowVector<double>::Zero(2)};
    Matrix<double> a(2, 2);
    a << 0.5, 0.5, 0.5, 0.5;
    Matrix<double> x(2, 2);
    x << 1, 2, 3, 0;
    // A x = [[2, 1], [2, 1]]; (A x) W = [[2.5, 0], ...]; + b = [[2.6, -0.2], ...]; ReLU.
    const auto r = forward(p, a, x);
    CHECK(r.activations[0](0, 0) == doctest::Approx(2.6));
    CHECK(r.activations[0](0, 1) == 0.0);
    CHECK(r.activations[0](1, 0) == doctest::Approx(2.6));
    CHECK(r.prediction(0) == doctest::Approx(2.6));
  }
  SUBCASE("zero input, zero biases") {
    const auto p = init_params<double>({5, {4, 3}}, 1);
    std::mt19937_64 rng(1);
    const auto r = forward(p, random_adjacency<double>(15, rng), Matrix<double>(Matrix<double>::Zero(15, 5)));
    CHECK(r.prediction.isZero());
  }
  SUBCASE("errors") {
    const auto p = init_params<double>({5, {4}}, 1);
    CHECK_THROWS_AS(forward(p, Matrix<double>(Matrix<double>::Identity(3, 3)), Matrix<double>(Matrix<double>::Zero(3, 4))), ShapeError);
    Matrix<double> x = Matrix<double>::Zero(3, 5);
    x(1, 1) = std::nan("");
    CHECK_THROWS_AS(forward(p, Matrix<double>(Matrix<double>::Identity(3, 3)), x), NumericError);
  }
}

TEST_CASE("masked mse fixtures") {
  RowVector<double> p(3), t(3);
  p << 1, 0.5, 2;
  t << 0, 0, 2;
  const std::vector<std::uint32_t> one{0}, two{1, 2}, none{};
  CHECK(masked_mse<double>(p, t, one) == 1.0);
  CHECK(masked_mse<double>(p, t, std::vector<std::uint32_t>{2}) == 0.0);
  RowVector<double> q(2), u(2);
  q << 0.5, -0.5;
  u << 0, 0;
  CHECK(masked_mse<double>(q, u, std::vector<std::uint32_t>{0, 1}) == doctest::Approx(0.25));
  CHECK_THROWS_AS(masked_mse<double>(p, t, none), EmptyMask);
}

TEST_CASE("gradient properties") {
  ArchitectureSpec arch{4, {5, 3}};
  auto params = init_params<double>(arch, 9);
  std::mt19937_64 rng(3);
  const auto a = random_adjacency<double>(6, rng);
  const auto x = random_matrix<double>(6, 4, rng, 0, 2);
  SUBCASE("zero loss point has zero gradient") {
    const RowVector<double> target = forward(params, a, x).prediction;
    const auto r = backward(params, a, x, std::vector<std::uint32_t>{0, 2}, target);
    CHECK(r.loss == 0.0);
    for (auto* g : flat(const_cast<GradientSet<double>&>(r.grads))) CHECK(std::abs(*g) < 1e-12);
  }
  SUBCASE("doubling the mask with identical residuals halves loss and gradients") {
    // Genes 0 and 1 get residual e, genes 2 and 3 get residual 0.
    RowVector<double> pred = forward(params, a, x).prediction;
    RowVector<double> target = pred;
    target(0) -= 0.7;
    target(1) -= 0.7;
    const auto one = backward(params, a, x, std::vector<std::uint32_t>{0}, target);
    const auto with_zero = backward(params, a, x, std::vector<std::uint32_t>{0, 2}, target);
    CHECK(with_zero.loss == doctest::Approx(one.loss / 2));
    auto g1 = one.grads;
    auto g2 = with_zero.grads;
    auto f1 = flat(g1), f2 = flat(g2);
    for (std::size_t k = 0; k < f1.size(); ++k) CHECK(*f2[k] == doctest::Approx(*f1[k] / 2).epsilon(1e-12));
  }
}

TEST_CASE("batched path equals the reference path") {
  ArchitectureSpec arch{7, {6, 5, 4}};
  const auto p64 = init_params<double>(arch, 4);
  const auto p32 = p64.cast<float>();
  std::mt19937_64 rng(8);
  GraphBatch<double> batch;
  batch.resize(4, 7);
  std::vector<Matrix<double>> as, xs;
  std::vector<std::vector<std::uint32_t>> masks;
  Matrix<double> targets = random_matrix<double>(4, 7, rng, 0, 2);
  for (std::size_t b = 0; b < 4; ++b) {
    as.push_back(random_adjacency<double>(15, rng));
    xs.push_back(random_matrix<double>(15, 7, rng, 0, 3));
    batch.adjacency[b] = as.back();
    batch.inputs.middleRows(static_cast<Eigen::Index>(15 * b), 15) = xs.back();
    masks.push_back({static_cast<std::uint32_t>(b), 5});
  }
  const auto pred = predict_centers(p64, batch);
  for (std::size_t b = 0; b < 4; ++b) {
    const auto ref = forward(p64, as[b], xs[b]);
    CHECK((pred.row(static_cast<Eigen::Index>(b)) - ref.prediction).cwiseAbs().maxCoeff() < 1e-12);
    const auto h2 = center_activations(p64, batch, 2);
    CHECK((h2.row(static_cast<Eigen::Index>(b)) - ref.activations[1].row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(center_activations(p64, batch, 0), InvalidLayer);
  CHECK_THROWS_AS(center_activations(p64, batch, 4), InvalidLayer);

  // Batch gradient = mean of per-graph gradients.
  auto grads = p64.zeros_like();
  const double loss = batch_loss_and_gradients(p64, batch, masks, targets, grads);
  auto expected = p64.zeros_like();
  double expected_loss = 0;
  auto ef = flat(expected);
  for (std::size_t b = 0; b < 4; ++b) {
    const RowVector<double> t = targets.row(static_cast<Eigen::Index>(b));
    auto r = backward(p64, as[b], xs[b], masks[b], t);
    expected_loss += r.loss / 4;
    auto rf = flat(r.grads);
    for (std::size_t k = 0; k < ef.size(); ++k) *ef[k] += *rf[k] / 4;
  }
  CHECK(loss == doctest::Approx(expected_loss).epsilon(1e-12));
  auto gf = flat(grads);
  for (std::size_t k = 0; k < gf.size(); ++k) CHECK(std::abs(*gf[k] - *ef[k]) < 1e-12);

  // 32-bit path tracks the 64-bit one.
  GraphBatch<float> b32;
  b32.resize(4, 7);
  for (std::size_t b = 0; b < 4; ++b) b32.adjacency[b] = batch.adjacency[b].cast<float>();
  b32.inputs = batch.inputs.cast<float>();
  CHECK((predict_centers(p32, b32).cast<double>() - pred).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("neighbor permutation leaves the center prediction unchanged") {
  const auto p = init_params<double>({5, {6, 4}}, 12);
  std::mt19937_64 rng(13);
  const auto a = random_adjacency<double>(15, rng);
  const auto x = random_matrix<double>(15, 5, rng, 0, 2);
  std::vector<int> order(15);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin() + 1, order.end(), rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(15);
  for (int i = 0; i < 15; ++i) perm.indices()[i] = order[static_cast<std::size_t>(i)];
  const Matrix<double> pa = perm.transpose() * a * perm;
  const Matrix<double> px = perm.transpose() * x;
  CHECK(px.row(0) == x.row(0));
  const auto diff = (forward(p, pa, px).prediction - forward(p, a, x).prediction).cwiseAbs().maxCoeff();
  CHECK(diff < 1e-10);
}

TEST_CASE("initialization bounds and determinism") {
  ArchitectureSpec arch{10, {8, 6}};
  const auto a = init_params<double>(arch, 5);
  const auto b = init_params<double>(arch, 5);
  CHECK(a.conv[0].weight == b.conv[0].weight);
  CHECK(a.conv[0].weight != init_params<double>(arch, 6).conv[0].weight);
  CHECK(a.conv[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 18.0));
  CHECK(a.conv[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 14.0));
  CHECK(a.readout.weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 16.0));
  CHECK(a.conv[0].bias.isZero());
  CHECK(a.parameter_count() == 10 * 8 + 8 + 8 * 6 + 6 + 6 * 10 + 10);
  CHECK_THROWS_AS((ArchitectureSpec{0, {3}}.validate()), ShapeError);
  CHECK_THROWS_AS((ArchitectureSpec{4, {}}.validate()), ShapeError);
}

TEST_CASE("adam fixtures") {
  ModelParams<double> p;
  p.arch = {1, {1}};
  p.conv.push_back({Matrix<double>::Zero(1, 1), RowVector<double>::Zero(1)});
  p.readout = {Matrix<double>::Zero(1, 1), RowVector<double>::Zero(1)};
  auto grads = p.zeros_like();
  grads.conv[0].weight(0, 0) = 1.0;
  auto state = make_adam_state<double>(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step<double>(p, grads, state, cfg, 1);
  // m = 0.1, v = 0.001; bias-corrected 1 and 1; step = 0.1 * 1 / (1 + 1e-8).
  CHECK(p.conv[0].weight(0, 0) == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-14));
  CHECK(state.m.conv[0].weight(0, 0) == doctest::Approx(0.1));
  CHECK(state.v.conv[0].weight(0, 0) == doctest::Approx(0.001));

  // Zero gradient: parameters stay, moments decay.
  const double before = p.conv[0].weight(0, 0);
  auto zero = p.zeros_like();
  adam_step<double>(p, zero, state, cfg, 2);
  CHECK(state.m.conv[0].weight(0, 0) == doctest::Approx(0.09));
  CHECK(state.v.conv[0].weight(0, 0) == doctest::Approx(0.000999));
  // m_hat is nonzero after decay, so the parameter still moves unless m = 0.
  CHECK(p.readout.weight(0, 0) == 0.0);
  CHECK(p.conv[0].weight(0, 0) != before);

  // Fully zero moments and gradients: fixed point.
  auto fresh = make_adam_state<double>(p);
  auto copy = p;
  adam_step<double>(p, zero, fresh, cfg, 1);
  CHECK(p.conv[0].weight == copy.conv[0].weight);

  // Identical inputs, identical outputs.
  auto p1 = copy, p2 = copy;
  auto s1 = make_adam_state<double>(copy), s2 = s1;
  adam_step<double>(p1, grads, s1, cfg, 1);
  adam_step<double>(p2, grads, s2, cfg, 1);
  CHECK(p1.conv[0].weight == p2.conv[0].weight);

  CHECK_THROWS_AS(adam_step<double>(p, grads, state, cfg, 0), InvalidArgument);
  grads.conv[0].weight(0, 0) = std::nan("");
  CHECK_THROWS_AS(adam_step<double>(p, grads, state, cfg, 3), NumericError);
}

TEST_CASE("checkpoint round trip, corruption and compatibility") {
  const auto params = init_params<float>({3, {7, 5}}, 77);
  CheckpointMeta meta;
  meta.arch = params.arch;
  meta.vocab_sha256 = GeneVocabulary({"a", "b", "c"}).sha256();
  meta.normalization_scheme = std::string(kSchemeCp10kLog1p);
  meta.seed = 77;
  const auto dir = test_fixtures::temp_dir("ckpt");
  save_checkpoint(params, meta, dir);
  const auto back = load_checkpoint(dir);
  CHECK(back.meta.arch == meta.arch);
  CHECK(back.params.conv[1].weight == params.conv[1].weight);
  CHECK(back.params.readout.bias == params.readout.bias);

  std::mt19937_64 rng(1);
  const auto a = random_adjacency<float>(15, rng);
  const auto x = random_matrix<float>(15, 3, rng, 0, 2);
  CHECK(forward(back.params, a, x).prediction == forward(params, a, x).prediction);

  CHECK_NOTHROW(check_compatible(back.meta, GeneVocabulary({"a", "b", "c"}), kSchemeCp10kLog1p));
  CHECK_THROWS_AS(check_compatible(back.meta, GeneVocabulary({"b", "a", "c"}), kSchemeCp10kLog1p), IncompatibleCheckpoint);
  CHECK_THROWS_AS(check_compatible(back.meta, GeneVocabulary({"a", "b", "c"}), "raw"), IncompatibleCheckpoint);

  const auto weights = dir / "weights.bin";
  const auto size = std::filesystem::file_size(weights);
  std::filesystem::resize_file(weights, size - 4);
  CHECK_THROWS_AS(load_checkpoint(dir), CorruptCheckpoint);
  {
    std::fstream f(weights, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXXXXXX", 8);
  }
  CHECK_THROWS_AS(load_checkpoint(dir), CorruptCheckpoint);
  std::filesystem::remove_all(dir);
}
