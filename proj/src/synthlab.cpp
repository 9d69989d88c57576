#include "sagefm/synthlab.hpp"

#include "sagefm/errors.hpp"
#include "sagefm/graph.hpp"
#include "sagefm/random.hpp"
#include "sagefm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace sagefm {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (n_samples == 0) throw ConfigError("n_samples must be >= 1");
  if (grid_rows == 0 || grid_cols == 0) throw ConfigError("grid must be non-empty");
  if (!(pitch_um > 0)) throw ConfigError("pitch must be positive");
  if (n_genes == 0) throw ConfigError("n_genes must be >= 1");
  if (n_programs < 2) throw ConfigError("n_programs must be >= 2");
  if (n_tissues == 0) throw ConfigError("n_tissues must be >= 1");
  if (noise_sd < 0 || ligand_sd < 0 || tissue_sd < 0 || ligand_length < 0) throw ConfigError("spreads must be nonnegative");
  if (!(base_min <= base_max)) throw ConfigError("base_min must not exceed base_max");
  if (!(coupled_base_min <= base_max)) throw ConfigError("coupled_base_min must not exceed base_max");
  if (marker_fraction < 0 || marker_fraction > 1) throw ConfigError("marker_fraction must lie in [0, 1]");
  if (!(count_scale > 0)) throw ConfigError("count_scale must be positive");
  std::set<std::size_t> targets;
  for (const auto& c : couplings) {
    if (c.ligand >= n_genes || c.target >= n_genes) throw ConfigError("coupling references a gene outside 0..n_genes-1");
    if (c.ligand == c.target) throw ConfigError("coupling ligand and target must differ");
    if (c.beta == 0.0 || !std::isfinite(c.beta)) throw ConfigError("coupling beta must be finite and nonzero");
    if (!targets.insert(c.target).second) throw ConfigError("a gene may be the target of only one coupling");
  }
  for (const auto& c : couplings) {
    if (targets.count(c.ligand)) throw ConfigError("a ligand may not also be a coupling target");
  }
}

std::vector<Coupling> default_couplings(std::size_t n_genes, std::uint64_t seed, double magnitude) {
  constexpr std::size_t kLigands = 2, kTargetsEach = 6;
  if (n_genes < kLigands * (kTargetsEach + 1)) throw ConfigError("too few genes for the default couplings");
  std::vector<std::size_t> genes(n_genes);
  std::iota(genes.begin(), genes.end(), 0);
  Rng rng(derive_seed(seed, {0xC0u}));
  std::shuffle(genes.begin(), genes.end(), rng);
  const int signs[kLigands][kTargetsEach] = {{1, 1, 1, 1, 1, 1}, {1, 1, -1, -1, -1, -1}};
  std::vector<Coupling> out;
  std::size_t next = kLigands;
  for (std::size_t l = 0; l < kLigands; ++l) {
    for (std::size_t t = 0; t < kTargetsEach; ++t) out.push_back({genes[l], genes[next++], magnitude * signs[l][t]});
  }
  return out;
}

SynthConfig default_preset(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.couplings = default_couplings(c.n_genes, seed);
  return c;
}

SynthConfig high_noise_preset(std::uint64_t seed) {
  SynthConfig c = default_preset(seed);
  c.noise_sd = 1.5;
  c.marker_fraction = 0.1;
  c.marker_shift_min = 0.5;
  c.marker_shift_max = 1.0;
  return c;
}

SynthConfig tiny_preset(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.n_samples = 5;
  c.grid_rows = 12;
  c.grid_cols = 12;
  c.n_genes = 40;
  c.n_programs = 3;
  c.couplings = default_couplings(c.n_genes, seed);
  return c;
}

namespace {

std::string gene_name(std::size_t g, const std::vector<Coupling>& couplings) {
  for (std::size_t i = 0; i < couplings.size(); ++i) {
    if (couplings[i].target == g) return "TGT" + std::to_string(i + 1);
  }
  std::vector<std::size_t> ligands;
  for (const auto& c : couplings) {
    if (std::find(ligands.begin(), ligands.end(), c.ligand) == ligands.end()) ligands.push_back(c.ligand);
  }
  for (std::size_t i = 0; i < ligands.size(); ++i) {
    if (ligands[i] == g) return "LIG" + std::to_string(i + 1);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "GENE%04zu", g);
  return buf;
}

/// 14 nearest spots of every spot (edges included), same ordering as the
/// subgraph builder: distance at nm resolution, then (array_row, array_col).
std::vector<std::array<std::uint32_t, kNeighborCount>> all_neighbors(const std::vector<SpotPosition>& xy,
                                                                     const std::vector<GridIndex>& rc) {
  const std::size_t n = xy.size();
  std::vector<std::array<std::uint32_t, kNeighborCount>> out(n);
  std::vector<std::tuple<long long, GridIndex, std::uint32_t>> cand;
  for (std::uint32_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::uint32_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = std::hypot(xy[i].x_um - xy[j].x_um, xy[i].y_um - xy[j].y_um);
      cand.emplace_back(std::llround(d * 1e3), rc[j], j);
    }
    const std::size_t k = std::min(kNeighborCount, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t t = 0; t < kNeighborCount; ++t) out[i][t] = std::get<2>(cand[std::min(t, k - 1)]);
  }
  return out;
}

}  // namespace

SynthResult generate(const SynthConfig& cfg) {
  cfg.validate();
  if (cfg.grid_rows * cfg.grid_cols < kSubgraphSize) throw ConfigError("grid must hold at least 15 spots");
  const std::size_t G = cfg.n_genes;

  std::vector<bool> is_ligand(G, false), is_target(G, false);
  for (const auto& c : cfg.couplings) {
    is_ligand[c.ligand] = true;
    is_target[c.target] = true;
  }

  // Archetypes and tissue offsets (shared across samples).
  Rng rng(derive_seed(cfg.seed, {1}));
  std::uniform_real_distribution<double> base_dist(cfg.base_min, cfg.base_max);
  std::uniform_real_distribution<double> shift_dist(cfg.marker_shift_min, cfg.marker_shift_max);
  std::normal_distribution<double> std_normal(0.0, 1.0);

  std::uniform_real_distribution<double> coupled_dist(std::max(cfg.base_min, cfg.coupled_base_min), cfg.base_max);
  std::vector<double> base(G);
  for (std::size_t g = 0; g < G; ++g) base[g] = (is_ligand[g] || is_target[g]) ? coupled_dist(rng) : base_dist(rng);
  std::vector<std::size_t> free_genes;
  for (std::size_t g = 0; g < G; ++g) {
    if (!is_ligand[g] && !is_target[g]) free_genes.push_back(g);
  }
  std::vector<std::vector<double>> program_shift(cfg.n_programs, std::vector<double>(G, 0.0));
  const auto n_markers = static_cast<std::size_t>(std::llround(cfg.marker_fraction * static_cast<double>(free_genes.size())));
  for (auto& shift : program_shift) {
    auto pool = free_genes;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < n_markers && i < pool.size(); ++i) shift[pool[i]] = shift_dist(rng);
  }
  std::vector<std::vector<double>> tissue_offset(cfg.n_tissues, std::vector<double>(G, 0.0));
  for (auto& off : tissue_offset) {
    for (auto g : free_genes) off[g] = cfg.tissue_sd * std_normal(rng);
  }

  // Lattice: rows one pitch apart, odd rows shifted by half a pitch.
  // array_col follows the Visium convention (2 * column + row parity).
  std::vector<SpotPosition> xy;
  std::vector<GridIndex> rc;
  for (std::size_t r = 0; r < cfg.grid_rows; ++r) {
    for (std::size_t c = 0; c < cfg.grid_cols; ++c) {
      const double offset = (r % 2) ? 0.5 : 0.0;
      xy.push_back({(static_cast<double>(c) + offset) * cfg.pitch_um, static_cast<double>(r) * cfg.pitch_um});
      rc.push_back({static_cast<int>(r), static_cast<int>(2 * c + (r % 2))});
    }
  }
  const std::size_t n_spots = xy.size();
  const auto neighbors = all_neighbors(xy, rc);

  SynthResult result;
  std::vector<std::string> names(G);
  for (std::size_t g = 0; g < G; ++g) names[g] = gene_name(g, cfg.couplings);
  result.dataset.vocab = GeneVocabulary(names);
  result.truth.seed = cfg.seed;
  result.truth.couplings = cfg.couplings;

  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    Rng srng(derive_seed(cfg.seed, {2, s}));
    const std::size_t tissue = s % cfg.n_tissues;

    // Program domains: Voronoi cells of one random seed point per program.
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(cfg.grid_cols) * cfg.pitch_um);
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(cfg.grid_rows) * cfg.pitch_um);
    std::vector<SpotPosition> seeds(cfg.n_programs);
    for (auto& p : seeds) p = {ux(srng), uy(srng)};
    std::vector<int> program(n_spots);
    for (std::size_t i = 0; i < n_spots; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < seeds.size(); ++p) {
        const double d = std::hypot(xy[i].x_um - seeds[p].x_um, xy[i].y_um - seeds[p].y_um);
        if (d < best) {
          best = d;
          program[i] = static_cast<int>(p);
        }
      }
    }

    // Ligand fields: unit-variance random Fourier sums, one per ligand.
    Eigen::MatrixXd field = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_spots), static_cast<Eigen::Index>(G));
    if (cfg.ligand_length > 0) {
      constexpr int kWaves = 32;
      std::normal_distribution<double> freq(0.0, 1.0 / (cfg.ligand_length * cfg.pitch_um));
      std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
      for (std::size_t g = 0; g < G; ++g) {
        if (!is_ligand[g]) continue;
        for (int w = 0; w < kWaves; ++w) {
          const double wx = freq(srng), wy = freq(srng), ph = phase(srng);
          for (std::size_t i = 0; i < n_spots; ++i) {
            field(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)) +=
                std::sqrt(2.0 / kWaves) * std::cos(wx * xy[i].x_um + wy * xy[i].y_um + ph);
          }
        }
      }
    }

    Eigen::MatrixXd logv(static_cast<Eigen::Index>(n_spots), static_cast<Eigen::Index>(G));
    for (std::size_t i = 0; i < n_spots; ++i) {
      const auto& shift = program_shift[static_cast<std::size_t>(program[i])];
      for (std::size_t g = 0; g < G; ++g) {
        const auto ii = static_cast<Eigen::Index>(i), gg = static_cast<Eigen::Index>(g);
        double v = base[g] + shift[g] + tissue_offset[tissue][g];
        if (!is_ligand[g]) {
          v += cfg.noise_sd * std_normal(srng);
        } else if (cfg.ligand_length > 0) {
          v += cfg.ligand_sd * field(ii, gg) + cfg.noise_sd * std_normal(srng);
        } else {
          v += cfg.ligand_sd * std_normal(srng);
        }
        logv(ii, gg) = v;
      }
    }
    // Couplings act on the pre-coupling ligand values through the 14-NN mean,
    // centered on the ligand archetype so the planted term has zero mean.
    Eigen::MatrixXd coupled = logv;
    for (const auto& c : cfg.couplings) {
      for (std::size_t i = 0; i < n_spots; ++i) {
        double mean = 0;
        for (auto j : neighbors[i]) mean += logv(j, static_cast<Eigen::Index>(c.ligand));
        mean /= static_cast<double>(kNeighborCount);
        coupled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c.target)) += c.beta * (mean - base[c.ligand]);
      }
    }

    std::vector<SparseCounts::Entry> entries;
    for (std::size_t i = 0; i < n_spots; ++i) {
      for (std::size_t g = 0; g < G; ++g) {
        const double v = std::max(coupled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)), 0.0);
        const double mean = std::expm1(v) * cfg.count_scale;
        std::int64_t count = 0;
        if (cfg.count_mode) {
          std::poisson_distribution<std::int64_t> pois(mean);
          count = mean > 0 ? pois(srng) : 0;
        } else {
          count = std::llround(mean);
        }
        if (count > 0) entries.push_back({i, g, count});
      }
    }

    SampleRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "S%02zu", s + 1);
    rec.sample_id = id;
    rec.tissue = "tissue" + std::to_string(tissue + 1);
    rec.spot_xy = xy;
    rec.spot_rowcol = rc;
    for (std::size_t i = 0; i < n_spots; ++i) rec.barcodes.push_back(rec.sample_id + "_" + std::to_string(i));
    rec.counts = SparseCounts::from_entries(n_spots, G, std::move(entries));
    result.truth.sample_ids.push_back(rec.sample_id);
    result.truth.sample_tissues.push_back(rec.tissue);
    result.truth.spot_programs.push_back(std::move(program));
    result.dataset.samples.push_back(std::move(rec));
  }
  return result;
}

SynthResult generate_to(const SynthConfig& config, const fs::path& dir) {
  SynthResult r = generate(config);
  write_dataset(r.dataset, dir);
  std::ofstream out(dir / "truth.json", std::ios::binary);
  if (!out) throw LoadError("cannot write " + (dir / "truth.json").string());
  json j = r.truth.to_json(r.dataset.vocab);
  j["config"] = synth_config_to_json(config);
  out << j.dump(2) << '\n';
  return r;
}

json TruthManifest::to_json(const GeneVocabulary& vocab) const {
  json j;
  j["seed"] = seed;
  j["couplings"] = json::array();
  for (const auto& c : couplings) {
    j["couplings"].push_back({{"ligand", vocab.name(c.ligand)},
                              {"target", vocab.name(c.target)},
                              {"ligand_index", c.ligand},
                              {"target_index", c.target},
                              {"beta", c.beta},
                              {"sign", c.sign()}});
  }
  j["samples"] = json::array();
  for (std::size_t s = 0; s < sample_ids.size(); ++s) {
    j["samples"].push_back({{"id", sample_ids[s]}, {"tissue", sample_tissues[s]}, {"spot_programs", spot_programs[s]}});
  }
  return j;
}

TruthManifest TruthManifest::from_json(const json& j) {
  TruthManifest t;
  try {
    t.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("couplings")) {
      t.couplings.push_back({c.at("ligand_index").get<std::size_t>(), c.at("target_index").get<std::size_t>(),
                             c.at("beta").get<double>()});
    }
    for (const auto& s : j.at("samples")) {
      t.sample_ids.push_back(s.at("id").get<std::string>());
      t.sample_tissues.push_back(s.at("tissue").get<std::string>());
      t.spot_programs.push_back(s.at("spot_programs").get<std::vector<int>>());
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("truth manifest: ") + e.what());
  }
  return t;
}

std::vector<std::pair<std::size_t, std::vector<std::size_t>>> TruthManifest::targets_by_ligand() const {
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> out;
  for (const auto& c : couplings) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == c.ligand; });
    if (it == out.end()) {
      out.push_back({c.ligand, {c.target}});
    } else {
      it->second.push_back(c.target);
    }
  }
  return out;
}

TruthManifest load_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return TruthManifest::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  const std::string preset = j.value("preset", "default");
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  if (preset == "default") {
    c = default_preset(seed);
  } else if (preset == "high-noise") {
    c = high_noise_preset(seed);
  } else if (preset == "tiny") {
    c = tiny_preset(seed);
  } else {
    throw ConfigError("unknown synth preset '" + preset + "'");
  }
  try {
    c.n_samples = j.value("n_samples", c.n_samples);
    c.grid_rows = j.value("grid_rows", c.grid_rows);
    c.grid_cols = j.value("grid_cols", c.grid_cols);
    c.pitch_um = j.value("pitch_um", c.pitch_um);
    const std::size_t old_genes = c.n_genes;
    c.n_genes = j.value("n_genes", c.n_genes);
    c.n_programs = j.value("n_programs", c.n_programs);
    c.n_tissues = j.value("n_tissues", c.n_tissues);
    c.noise_sd = j.value("noise_sd", c.noise_sd);
    c.ligand_sd = j.value("ligand_sd", c.ligand_sd);
    c.ligand_length = j.value("ligand_length", c.ligand_length);
    c.base_min = j.value("base_min", c.base_min);
    c.base_max = j.value("base_max", c.base_max);
    c.coupled_base_min = j.value("coupled_base_min", c.coupled_base_min);
    c.tissue_sd = j.value("tissue_sd", c.tissue_sd);
    c.marker_fraction = j.value("marker_fraction", c.marker_fraction);
    c.marker_shift_min = j.value("marker_shift_min", c.marker_shift_min);
    c.marker_shift_max = j.value("marker_shift_max", c.marker_shift_max);
    c.count_mode = j.value("count_mode", c.count_mode);
    c.count_scale = j.value("count_scale", c.count_scale);
    if (j.contains("couplings")) {
      c.couplings.clear();
      for (const auto& e : j.at("couplings")) {
        c.couplings.push_back({e.at("ligand").get<std::size_t>(), e.at("target").get<std::size_t>(),
                               e.at("beta").get<double>()});
      }
    } else if (c.n_genes != old_genes) {
      c.couplings = default_couplings(c.n_genes, seed);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

json synth_config_to_json(const SynthConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["n_samples"] = c.n_samples;
  j["grid_rows"] = c.grid_rows;
  j["grid_cols"] = c.grid_cols;
  j["pitch_um"] = c.pitch_um;
  j["n_genes"] = c.n_genes;
  j["n_programs"] = c.n_programs;
  j["n_tissues"] = c.n_tissues;
  j["noise_sd"] = c.noise_sd;
  j["ligand_sd"] = c.ligand_sd;
  j["ligand_length"] = c.ligand_length;
  j["base_min"] = c.base_min;
  j["base_max"] = c.base_max;
  j["coupled_base_min"] = c.coupled_base_min;
  j["tissue_sd"] = c.tissue_sd;
  j["marker_fraction"] = c.marker_fraction;
  j["marker_shift_min"] = c.marker_shift_min;
  j["marker_shift_max"] = c.marker_shift_max;
  j["count_mode"] = c.count_mode;
  j["count_scale"] = c.count_scale;
  j["couplings"] = json::array();
  for (const auto& cp : c.couplings) j["couplings"].push_back({{"ligand", cp.ligand}, {"target", cp.target}, {"beta", cp.beta}});
  return j;
}

ManifestReport verify_manifest(const Dataset& dataset, const TruthManifest& truth) {
  ManifestReport report;
  if (truth.couplings.empty()) return report;
  std::vector<PreparedSample> prepared;
  for (std::size_t s = 0; s < dataset.samples.size(); ++s) prepared.push_back(prepare_sample(dataset, s));
  std::size_t agree = 0, significant = 0;
  for (const auto& c : truth.couplings) {
    std::vector<double> x, y;
    for (const auto& ps : prepared) {
      for (const auto& sg : ps.subgraphs) {
        double mean = 0;
        for (std::size_t i = 1; i < kSubgraphSize; ++i) mean += ps.expression.values(sg.nodes[i], static_cast<Eigen::Index>(c.ligand));
        x.push_back(mean / static_cast<double>(kNeighborCount));
        y.push_back(ps.expression.values(sg.center(), static_cast<Eigen::Index>(c.target)));
      }
    }
    CouplingCheck check;
    check.coupling = c;
    try {
      const auto corr = pearson_with_p(x, y);
      check.r = corr.r;
      check.p = corr.p;
    } catch (const Error&) {
      check.r = 0.0;
      check.p = 1.0;
    }
    check.agrees = (check.r > 0) == (c.beta > 0) && check.r != 0.0;
    agree += check.agrees ? 1 : 0;
    significant += check.p < 0.05 ? 1 : 0;
    report.checks.push_back(check);
  }
  const double n = static_cast<double>(truth.couplings.size());
  report.agreement = static_cast<double>(agree) / n;
  report.low_signal = static_cast<double>(significant) / n < 0.5;
  return report;
}

}  // namespace sagefm
