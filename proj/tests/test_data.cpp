#include "doctest.h"

#include "fixtures.hpp"
#include "sagefm/data.hpp"
#include "sagefm/errors.hpp"
#include "sagefm/textio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

using namespace sagefm;
namespace fs = std::filesystem;

TEST_CASE("cp10k log1p fixtures") {
  const auto n = normalize_cp10k_log1p(SparseCounts::from_dense({{0, 0, 10}, {1, 1, 0}, {0, 0, 0}}));
  CHECK(n.scheme == kSchemeCp10kLog1p);
  CHECK(n.values(0, 0) == 0.0f);
  CHECK(n.values(0, 2) == doctest::Approx(std::log(10001.0)).epsilon(1e-6));
  CHECK(n.values(0, 2) == doctest::Approx(9.21044).epsilon(1e-5));
  CHECK(n.values(1, 0) == doctest::Approx(8.51739).epsilon(1e-5));
  CHECK(n.values(1, 1) == n.values(1, 0));
  CHECK(n.values.row(2).isZero());
}

TEST_CASE("normalization: total-count invariance and hand oracle on random rows") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cnt(0, 30);
  std::vector<std::vector<std::int64_t>> dense(20, std::vector<std::int64_t>(7));
  for (auto& r : dense) {
    for (auto& v : r) v = cnt(rng);
  }
  auto doubled = dense;
  for (auto& r : doubled) {
    for (auto& v : r) v *= 2;
  }
  const auto a = normalize_cp10k_log1p(SparseCounts::from_dense(dense));
  const auto b = normalize_cp10k_log1p(SparseCounts::from_dense(doubled));
  for (std::size_t r = 0; r < dense.size(); ++r) {
    double total = 0;
    for (auto v : dense[r]) total += static_cast<double>(v);
    for (std::size_t c = 0; c < 7; ++c) {
      const double expected = total > 0 ? std::log1p(1e4 * static_cast<double>(dense[r][c]) / total) : 0.0;
      CHECK(a.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) == doctest::Approx(expected).epsilon(1e-6));
      CHECK(a.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) ==
            b.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
  }
}

TEST_CASE("sparse counts construction") {
  const auto m = SparseCounts::from_entries(2, 3, {{1, 2, 4}, {0, 1, 3}, {1, 2, 1}, {0, 0, 0}});
  CHECK(m.nnz() == 2);
  CHECK(m.at(1, 2) == 5);
  CHECK(m.at(0, 1) == 3);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.row_total(1) == 5);
  CHECK_THROWS_AS(SparseCounts::from_entries(2, 2, {{0, 0, -1}}), CorruptData);
  CHECK_THROWS_AS(SparseCounts::from_entries(2, 2, {{2, 0, 1}}), CorruptData);
}

TEST_CASE("native format round trip is exact") {
  auto ds = test_fixtures::lattice_dataset(4, 5, 100.0 / 3.0, 2);
  ds.samples[1].spot_xy[3].x_um = 0.1 + 0.2;
  const auto dir = test_fixtures::temp_dir("roundtrip");
  write_dataset(ds, dir);
  const auto back = load_dataset(dir);
  CHECK(back.vocab == ds.vocab);
  REQUIRE(back.samples.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(back.samples[s].sample_id == ds.samples[s].sample_id);
    CHECK(back.samples[s].tissue == ds.samples[s].tissue);
    CHECK(back.samples[s].barcodes == ds.samples[s].barcodes);
    CHECK(back.samples[s].spot_xy == ds.samples[s].spot_xy);
    CHECK(back.samples[s].spot_rowcol == ds.samples[s].spot_rowcol);
    CHECK(back.samples[s].counts == ds.samples[s].counts);
  }
  fs::remove_all(dir);
}

TEST_CASE("loader errors") {
  const auto ds = test_fixtures::lattice_dataset(3, 3, 100.0, 2);
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_dataset("/nonexistent/sagefm"), LoadError); }
  SUBCASE("matrix rows disagree with spots") {
    const auto dir = test_fixtures::temp_dir("rows");
    write_dataset(ds, dir);
    // Duplicate the last spot line of the first sample under a new barcode.
    const auto spots = dir / "samples" / ds.samples[0].sample_id / "spots.tsv";
    auto last = read_lines(spots).back();
    std::ofstream(spots, std::ios::app) << "extra" << last.substr(last.find('\t')) << "\n";
    CHECK_THROWS_AS(load_dataset(dir), CorruptData);
  }
  SUBCASE("gene order differs between samples") {
    const auto dir = test_fixtures::temp_dir("vocab");
    write_dataset(ds, dir);
    const auto sample_dir = dir / "samples" / ds.samples[1].sample_id;
    std::ofstream(sample_dir / "genes.tsv") << "B\nA\nC\n";
    CHECK_THROWS_AS(load_dataset(dir), VocabularyMismatch);
  }
}

TEST_CASE("vocabulary") {
  GeneVocabulary v({"X", "Y"});
  CHECK(v.index_of("Y") == 1);
  CHECK(!v.find("Z"));
  CHECK_THROWS_AS(v.index_of("Z"), UnknownGene);
  CHECK_THROWS_AS(GeneVocabulary({"X", "X"}), CorruptData);
  CHECK(v.sha256().size() == 64);
  CHECK(v.sha256() != GeneVocabulary({"Y", "X"}).sha256());
}

TEST_CASE("split sizes and determinism") {
  auto ids = [](std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back("s" + std::to_string(i));
    return v;
  };
  auto a = split_by_sample(ids(10), {}, 7);
  CHECK(a.train.size() == 8);
  CHECK(a.validation.size() == 1);
  CHECK(a.test.size() == 1);
  auto cohort = split_by_sample(ids(416), {}, 1);
  CHECK(cohort.train.size() == 332);
  CHECK(cohort.validation.size() == 42);
  CHECK(cohort.test.size() == 42);
  const auto b = split_by_sample(ids(10), {}, 7);
  CHECK(a.train == b.train);
  CHECK(a.validation == b.validation);
  CHECK(a.test == b.test);
  CHECK_THROWS_AS(split_by_sample(ids(2), {}, 1), TooFewSamples);
  CHECK_THROWS_AS(split_by_sample(ids(5), {0.5, 0.1, 0.1}, 1), InvalidArgument);

  // Partition property over many seeds and sizes.
  for (std::size_t n = 3; n < 30; ++n) {
    const auto s = split_by_sample(ids(n), {}, n);
    std::vector<std::string> all = s.train;
    all.insert(all.end(), s.validation.begin(), s.validation.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    auto expected = ids(n);
    std::sort(expected.begin(), expected.end());
    CHECK(all == expected);
    CHECK(!s.validation.empty());
    CHECK(!s.test.empty());
    CHECK(s.part_of(s.test.front()) == SplitPart::kTest);
  }
}
