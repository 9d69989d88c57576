#pragma once

// Small hand-built datasets shared by the unit tests.

#include "sagefm/data.hpp"
#include "sagefm/synthlab.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace test_fixtures {

/// Ideal hex lattice, one sample, three genes with nonzero counts everywhere.
inline sagefm::Dataset lattice_dataset(std::size_t rows, std::size_t cols, double pitch, std::size_t n_samples = 1) {
  sagefm::Dataset ds;
  ds.vocab = sagefm::GeneVocabulary({"A", "B", "C"});
  for (std::size_t s = 0; s < n_samples; ++s) {
    sagefm::SampleRecord rec;
    rec.sample_id = "S" + std::to_string(s + 1);
    rec.tissue = "t";
    std::vector<sagefm::SparseCounts::Entry> entries;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = rec.spot_xy.size();
        rec.spot_xy.push_back({(static_cast<double>(c) + 0.5 * static_cast<double>(r % 2)) * pitch,
                               static_cast<double>(r) * pitch});
        rec.spot_rowcol.push_back({static_cast<int>(r), static_cast<int>(2 * c + r % 2)});
        rec.barcodes.push_back("bc" + std::to_string(i));
        entries.push_back({i, 0, static_cast<std::int64_t>(1 + i % 5)});
        entries.push_back({i, 1, static_cast<std::int64_t>(2 + i % 3)});
        entries.push_back({i, 2, static_cast<std::int64_t>(1 + (i * 7) % 4)});
      }
    }
    rec.counts = sagefm::SparseCounts::from_entries(rec.spot_xy.size(), 3, entries);
    ds.samples.push_back(std::move(rec));
  }
  return ds;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("sagefm_test_" + tag + "_" + std::to_string(rng()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Tiny synthlab preset shrunk further for unit tests.
inline sagefm::SynthConfig micro_config(std::uint64_t seed = 3) {
  auto c = sagefm::tiny_preset(seed);
  c.grid_rows = 9;
  c.grid_cols = 9;
  c.n_genes = 24;
  c.couplings = sagefm::default_couplings(c.n_genes, seed);
  return c;
}

}  // namespace test_fixtures
