#include "doctest.h"

#include "sagefm/errors.hpp"
#include "sagefm/stats.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

using namespace sagefm;

using namespace oracles;

TEST_CASE("pearson fixtures") {
  const std::vector<double> x{1, 2, 3}, y{2, 4, 6}, yr{3, 2, 1};
  auto c = pearson_with_p(x, y);
  CHECK(c.r == doctest::Approx(1.0));
  CHECK(c.p == 0.0);
  c = pearson_with_p(x, yr);
  CHECK(c.r == doctest::Approx(-1.0));
  CHECK(c.p == 0.0);

  const std::vector<double> x4{1, 2, 3, 4}, y4{1, 3, 2, 4};
  c = pearson_with_p(x4, y4);
  CHECK(c.r == doctest::Approx(0.8).epsilon(1e-12));
  const double t = 0.8 * std::sqrt(2.0 / 0.36);
  CHECK(t == doctest::Approx(1.8856).epsilon(1e-4));
  CHECK(std::abs(c.p - t_tail_by_integration(t, 2)) < 1e-8);
  CHECK(c.p == doctest::Approx(0.1999).epsilon(1e-3));

  CHECK_THROWS_AS(pearson_with_p(std::vector<double>{1, 2}, std::vector<double>{1, 2}), TooFewObservations);
  CHECK_THROWS_AS(pearson_with_p(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DegenerateInput);
}

TEST_CASE("pearson p matches the integrated t density on random data") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 1);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 3 + static_cast<std::size_t>(rep % 6);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = g(rng);
      y[i] = 0.5 * x[i] + g(rng);
    }
    const auto c = pearson_with_p(x, y);
    const double t = c.r * std::sqrt((n - 2.0) / (1 - c.r * c.r));
    CHECK(std::abs(c.p - t_tail_by_integration(t, static_cast<double>(n - 2))) < 1e-8);
  }
}

TEST_CASE("pearson is invariant to positive affine maps") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> x(20), y(20), xa(20);
  for (int i = 0; i < 20; ++i) {
    x[i] = g(rng);
    y[i] = x[i] + g(rng);
    xa[i] = 3.5 * x[i] - 7.0;
  }
  CHECK(std::abs(pearson_with_p(x, y).r - pearson_with_p(xa, y).r) < 1e-12);
}

TEST_CASE("r2 fixtures") {
  const std::vector<double> t{0, 1, 2};
  CHECK(r2(t, t) == 1.0);
  CHECK(r2(std::vector<double>{1, 1, 1}, t) == doctest::Approx(0.0));
  CHECK(r2(std::vector<double>{0, 0, 2}, t) == doctest::Approx(0.5));
  CHECK_THROWS_AS(r2(t, std::vector<double>{1, 1, 1}), DegenerateInput);
}

TEST_CASE("ARI fixtures and permutation invariance") {
  const std::vector<int> a{0, 0, 1, 1}, b{1, 1, 0, 0};
  CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
  CHECK(adjusted_rand_index(a, b) == doctest::Approx(1.0));

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> x(12), y(12);
    for (int i = 0; i < 12; ++i) {
      x[i] = lab(rng);
      y[i] = lab(rng);
    }
    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> xp(12);
    for (int i = 0; i < 12; ++i) xp[i] = perm[static_cast<std::size_t>(x[i])];
    CHECK(std::abs(adjusted_rand_index(x, y) - adjusted_rand_index(xp, y)) < 1e-12);
    CHECK(adjusted_rand_index(x, y) <= 1.0 + 1e-12);
  }
}

TEST_CASE("ARI matches pair counting on every labeling of 5 points with 3 labels") {
  std::vector<std::vector<int>> all;
  for (int code = 0; code < 243; ++code) {
    std::vector<int> v(5);
    int c = code;
    for (int i = 0; i < 5; ++i) {
      v[static_cast<std::size_t>(i)] = c % 3;
      c /= 3;
    }
    all.push_back(v);
  }
  double worst = 0;
  for (const auto& x : all) {
    for (const auto& y : all) worst = std::max(worst, std::abs(adjusted_rand_index(x, y) - ari_by_pairs(x, y)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("silhouette and DBI on the two-pair fixture") {
  PointMatrix p(4, 2);
  p << 0, 0, 0, 1, 10, 0, 10, 1;
  const std::vector<int> lab{0, 0, 1, 1};
  // a = 1, b = mean(10, sqrt(101)) for every point, so s = 1 - 1/b ~ 0.90025.
  const double b = 0.5 * (10.0 + std::sqrt(101.0));
  CHECK(silhouette_score(p, lab) == doctest::Approx(1.0 - 1.0 / b).epsilon(1e-12));
  CHECK(std::abs(silhouette_score(p, lab) - silhouette_brute(p, lab)) < 1e-12);
  CHECK(davies_bouldin(p, lab) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(std::abs(davies_bouldin(p, lab) - dbi_brute(p, lab)) < 1e-12);

  const auto s = clustering_scores(p, std::vector<int>{0, 0, 0, 0}, lab);
  CHECK(std::isnan(s.silhouette));
  CHECK(std::isnan(s.dbi));
  CHECK(s.ari == doctest::Approx(0.0));
}

TEST_CASE("silhouette and DBI match brute force on random instances n <= 8") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 3 + static_cast<std::size_t>(rep % 6);
    const PointMatrix p = random_points(rng, n, 1 + static_cast<std::size_t>(rep % 3));
    std::uniform_int_distribution<int> lab(0, 2);
    std::vector<int> l(n);
    for (auto& v : l) v = lab(rng);
    std::vector<int> u = l;
    std::sort(u.begin(), u.end());
    if (std::unique(u.begin(), u.end()) - u.begin() < 2) continue;
    CHECK(std::abs(silhouette_score(p, l) - silhouette_brute(p, l)) < 1e-8);
    CHECK(std::abs(davies_bouldin(p, l) - dbi_brute(p, l)) < 1e-8);
    const double s = silhouette_score(p, l);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("rank-sum fixtures") {
  const std::vector<double> a{1, 2}, b{3, 4};
  const auto r = wilcoxon_rank_sum(a, b);
  CHECK(r.u == 0.0);
  CHECK(wilcoxon_rank_sum(b, a).u + r.u == 4.0);
  const std::vector<double> same{1, 2, 3};
  CHECK(wilcoxon_rank_sum(same, same).p == doctest::Approx(1.0));
  const std::vector<double> flat{5, 5, 5};
  CHECK(wilcoxon_rank_sum(flat, flat).p == 1.0);
  CHECK_THROWS_AS(wilcoxon_rank_sum(std::vector<double>{}, b), InvalidArgument);
}

TEST_CASE("rank-sum matches pair counting and the exact null variance for n <= 8") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> val(0, 4);  // coarse values force ties
  for (int rep = 0; rep < 150; ++rep) {
    const std::size_t na = 1 + static_cast<std::size_t>(rep % 4), nb = 1 + static_cast<std::size_t>((rep / 4) % 4);
    std::vector<double> a(na), b(nb);
    for (auto& v : a) v = val(rng);
    for (auto& v : b) v = val(rng);
    const auto r = wilcoxon_rank_sum(a, b);
    CHECK(std::abs(r.u - u_by_pairs(a, b)) < 1e-12);
    const auto [mu, var] = u_null_moments(a, b);
    CHECK(std::abs(mu - static_cast<double>(na * nb) / 2.0) < 1e-9);
    double expected_p = 1.0;
    if (var > 1e-12) {
      const double dev = std::max(std::abs(r.u - mu) - 0.5, 0.0);
      expected_p = std::erfc(dev / std::sqrt(var) / std::sqrt(2.0));
    }
    CHECK(std::abs(r.p - expected_p) < 1e-8);
  }
}

TEST_CASE("BH fixtures and brute force") {
  const auto adj = bh_fdr(std::vector<double>{0.01, 0.02, 0.04});
  CHECK(adj[0] == doctest::Approx(0.03));
  CHECK(adj[1] == doctest::Approx(0.03));
  CHECK(adj[2] == doctest::Approx(0.04));
  CHECK(bh_fdr(std::vector<double>{0.3})[0] == 0.3);
  for (double v : bh_fdr(std::vector<double>{1, 1, 1})) CHECK(v == 1.0);
  CHECK_THROWS_AS(bh_fdr(std::vector<double>{0.5, 1.5}), InvalidP);
  CHECK_THROWS_AS(bh_fdr(std::vector<double>{-0.1}), InvalidP);

  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t m = 1 + static_cast<std::size_t>(rep % 8);
    std::vector<double> p(m);
    for (auto& v : p) v = rep % 3 == 0 ? std::round(u(rng) * 4) / 4 : u(rng);  // some ties
    const auto got = bh_fdr(p);
    const auto want = bh_brute(p);
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(std::abs(got[i] - want[i]) < 1e-12);
      CHECK(got[i] >= p[i]);
      CHECK(got[i] <= 1.0);
    }
  }
}

TEST_CASE("Welch t fixtures") {
  const std::vector<double> a{1, 2, 3}, b{2, 3, 4};
  const auto r = two_sample_t(a, b);
  CHECK(r.t == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(r.df == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(std::abs(r.p - t_tail_by_integration(r.t, 4.0)) < 1e-8);
  CHECK(r.p == doctest::Approx(0.2879).epsilon(1e-3));

  const auto same = two_sample_t(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == doctest::Approx(1.0));

  const auto deg = two_sample_t(std::vector<double>{0, 0}, std::vector<double>{1, 1});
  CHECK(std::isinf(deg.t));
  CHECK(deg.p == 0.0);
  const auto flat = two_sample_t(std::vector<double>{2, 2}, std::vector<double>{2, 2});
  CHECK(flat.t == 0.0);
  CHECK(flat.p == 1.0);
  CHECK_THROWS_AS(two_sample_t(std::vector<double>{1}, b), TooFewObservations);
}

TEST_CASE("Welch t matches hand formulas and the integrated density for n <= 8") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0, 1);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t na = 2 + static_cast<std::size_t>(rep % 4), nb = 2 + static_cast<std::size_t>((rep / 4) % 5);
    std::vector<double> a(na), b(nb);
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = 0.7 + 2.0 * g(rng);
    double ma = 0, mb = 0, va = 0, vb = 0;
    for (double v : a) ma += v / na;
    for (double v : b) mb += v / nb;
    for (double v : a) va += (v - ma) * (v - ma) / (na - 1.0);
    for (double v : b) vb += (v - mb) * (v - mb) / (nb - 1.0);
    const double se2 = va / na + vb / nb;
    const double t = (ma - mb) / std::sqrt(se2);
    const double df = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    const auto r = two_sample_t(a, b);
    CHECK(std::abs(r.t - t) < 1e-10);
    CHECK(std::abs(r.df - df) < 1e-10);
    CHECK(std::abs(r.p - t_tail_by_integration(t, df)) < 1e-8);
  }
}

TEST_CASE("cosine distance fixtures") {
  const std::vector<double> u{1, 0}, v{1, 1}, w{0, 1};
  CHECK(cosine_distance(v, v) == doctest::Approx(0.0));
  CHECK(cosine_distance(u, w) == doctest::Approx(1.0));
  CHECK(cosine_distance(u, v) == doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_distance(u, std::vector<double>{0, 0}), DegenerateInput);
}

TEST_CASE("average ranks share ties") {
  const auto r = average_ranks(std::vector<double>{3, 1, 3, 2});
  CHECK(r == std::vector<double>{3.5, 1, 3.5, 2});
}
