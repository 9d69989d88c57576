#pragma once

// Synthetic Visium-like datasets with planted tissue programs and directional
// neighbor-to-center gene couplings. The truth manifest is the oracle for the
// evaluation suites.

#include "sagefm/data.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sagefm {

struct Coupling {
  std::size_t ligand = 0;  // gene index
  std::size_t target = 0;  // gene index
  double beta = 0.0;       // sign gives the planted direction
  int sign() const { return beta > 0 ? 1 : -1; }
};

struct SynthConfig {
  std::size_t n_samples = 6;
  std::size_t grid_rows = 30;
  std::size_t grid_cols = 30;
  double pitch_um = 100.0;
  std::size_t n_genes = 600;
  std::size_t n_programs = 4;
  std::size_t n_tissues = 3;
  double noise_sd = 0.3;     // log-space noise on non-ligand genes
  double ligand_sd = 0.5;    // amplitude of the smooth ligand field
  double ligand_length = 3.0;  // field correlation length in pitches; 0 = white per-spot spread
  double tissue_sd = 0.15;   // per-tissue gene offsets
  double base_min = -1.0;    // archetype log-expression range; < 0 clips to zero counts
  double base_max = 1.5;
  double coupled_base_min = 0.5;  // floor for ligand/target archetypes
  double marker_fraction = 0.2;
  double marker_shift_min = 1.0;
  double marker_shift_max = 2.0;
  std::vector<Coupling> couplings;
  bool count_mode = false;   // Poisson draws instead of fine-grained rounding
  double count_scale = 100.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// 2 ligands x 6 targets with signs (++++++, ++----): 8 positive and 4
/// negative couplings with |beta| = magnitude, placed on random gene indices.
std::vector<Coupling> default_couplings(std::size_t n_genes, std::uint64_t seed, double magnitude = 2.0);

/// Desk preset: 6 samples, 30x30 grid, 600 genes, 4 programs, 12 couplings, noise 0.3.
SynthConfig default_preset(std::uint64_t seed = 0);
/// Same geometry with weak program markers and heavy noise.
SynthConfig high_noise_preset(std::uint64_t seed = 0);
/// Small fixture for fast tests.
SynthConfig tiny_preset(std::uint64_t seed = 0);

struct TruthManifest {
  std::uint64_t seed = 0;
  std::vector<Coupling> couplings;
  std::vector<std::string> sample_ids;
  std::vector<std::string> sample_tissues;
  /// spot_programs[s][i]: program of spot i in sample s.
  std::vector<std::vector<int>> spot_programs;

  nlohmann::json to_json(const GeneVocabulary& vocab) const;
  static TruthManifest from_json(const nlohmann::json& j);
  /// Ligand -> its planted targets, in coupling order.
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> targets_by_ligand() const;
};

struct SynthResult {
  Dataset dataset;
  TruthManifest truth;
};

/// Pure in-memory generation; deterministic per config (and seed).
SynthResult generate(const SynthConfig& config);

/// generate() then write the native layout plus truth.json into `dir`.
SynthResult generate_to(const SynthConfig& config, const std::filesystem::path& dir);

SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& c);
TruthManifest load_truth(const std::filesystem::path& path);

struct CouplingCheck {
  Coupling coupling;
  double r = 0.0;
  double p = 1.0;
  bool agrees = false;
};

struct ManifestReport {
  std::vector<CouplingCheck> checks;
  double agreement = 1.0;  // fraction of couplings whose empirical sign matches
  bool low_signal = false;  // set when the signal is too weak to trust the signs
};

/// Empirical Pearson between neighbor-mean ligand and center target over all
/// subgraph centers of every sample, compared with the planted signs.
ManifestReport verify_manifest(const Dataset& dataset, const TruthManifest& truth);

}  // namespace sagefm
