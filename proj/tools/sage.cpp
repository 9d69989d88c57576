// sage: command-line front end for the pipeline.

#include "sagefm/data.hpp"
#include "sagefm/embed.hpp"
#include "sagefm/errors.hpp"
#include "sagefm/gcn.hpp"
#include "sagefm/graph.hpp"
#include "sagefm/imputation.hpp"
#include "sagefm/perturb.hpp"
#include "sagefm/pretrain.hpp"
#include "sagefm/synthlab.hpp"
#include "sagefm/textio.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sagefm;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Options shared by every subcommand, after config-file merge.
struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 1;
  std::string log_level = "info";
};

/// Flat command-line options; empty / unset ones fall back to the config file.
struct Flags {
  std::string dataset, checkpoint, out, preset, split = "test", pairs, targets, labels;
  std::string widths;
  double mask_fraction = 0.3, lr = 1e-3, sigma = 0.0, fdr = 0.05, test_fraction = 0.3;
  std::size_t epochs = 50, batch_size = 32, patience = 5, layer = 3, k = 0, k_min = 4, k_max = 10, components = 200;
  std::size_t replicates = 10;
};

class Run {
 public:
  Run(std::string command, const Globals& g, json config) : command_(std::move(command)), g_(g), config_(std::move(config)) {
    started_ = utc_now();
  }

  const json& config() const { return config_; }
  json& config() { return config_; }

  fs::path output(const fs::path& path) {
    outputs_.push_back(path.string());
    return path;
  }

  void finish(const fs::path& out_dir) {
    fs::create_directories(out_dir);
    json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seed"] = g_.seed;
    j["deterministic"] = g_.deterministic;
    j["threads"] = g_.threads;
    j["versions"] = {{"sage", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    j["started"] = started_;
    j["finished"] = utc_now();
    j["outputs"] = outputs_;
    std::ofstream f(out_dir / "run.json");
    f << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  Globals g_;
  json config_;
  std::string started_;
  std::vector<std::string> outputs_;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

/// Value from the command line when given, else config[key], else the default.
template <class T>
T pick(const CLI::App* app, const char* flag, const T& cli_value, const json& cfg, const char* key) {
  const CLI::Option* opt = app->get_option_no_throw(flag);
  if (opt && opt->count() > 0) return cli_value;
  if (cfg.contains(key)) {
    try {
      return cfg.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
  return cli_value;
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& f : split(s, ',')) out.push_back(static_cast<std::size_t>(parse_int(f)));
  return out;
}

fs::path require_path(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing --") + what);
  return p;
}

Dataset open_dataset(const std::string& path) {
  const fs::path p = require_path(path, "dataset");
  if (!fs::exists(p)) throw LoadError("dataset path does not exist: " + p.string());
  return load_dataset(p);
}

SplitAssignment read_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    const json j = json::parse(in);
    SplitAssignment s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.validation = j.at("validation").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_split(const SplitAssignment& s, const fs::path& path) {
  json j{{"seed", s.seed}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}};
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

struct Loaded {
  Dataset dataset;
  Checkpoint checkpoint;
  SplitAssignment split;
};

Loaded open_model(const std::string& dataset, const std::string& checkpoint) {
  Loaded l;
  l.dataset = open_dataset(dataset);
  const fs::path ck = require_path(checkpoint, "checkpoint");
  if (!fs::exists(ck)) throw LoadError("checkpoint path does not exist: " + ck.string());
  l.checkpoint = load_checkpoint(ck);
  check_compatible(l.checkpoint.meta, l.dataset.vocab, kSchemeCp10kLog1p);
  if (fs::exists(ck / "split.json")) {
    l.split = read_split(ck / "split.json");
  } else {
    l.split = split_by_sample(l.dataset.sample_ids(), l.checkpoint.meta.split_ratios, l.checkpoint.meta.split_seed);
  }
  return l;
}

std::vector<std::string> split_ids(const Loaded& l, const std::string& which) {
  if (which == "all") return l.dataset.sample_ids();
  return l.split.part(parse_split_part(which));
}

/// Truth labels (planted programs) for embedding rows, when truth.json exists.
std::optional<std::vector<int>> truth_labels(const std::string& dataset_dir, const Dataset& d,
                                             const std::vector<SpotKey>& keys) {
  const fs::path p = fs::path(dataset_dir) / "truth.json";
  if (!fs::exists(p)) return std::nullopt;
  const auto truth = load_truth(p);
  std::map<std::string, std::size_t> index;
  for (std::size_t s = 0; s < truth.sample_ids.size(); ++s) index[truth.sample_ids[s]] = s;
  std::vector<int> out;
  for (const auto& k : keys) {
    auto it = index.find(k.sample_id);
    if (it == index.end() || k.spot >= truth.spot_programs[it->second].size()) return std::nullopt;
    out.push_back(truth.spot_programs[it->second][k.spot]);
  }
  (void)d;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sage: spatial subgraph GCN pretraining and evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Globals g;
  Flags f;
  app.add_option("--config", g.config_path, "JSON config; command-line flags take precedence");
  app.add_option("--seed", g.seed, "Base seed");
  app.add_flag("--deterministic", g.deterministic, "Reproducible outputs (wall times recorded as 0)");
  app.add_option("--threads", g.threads, "Thread cap")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with truth.json");
  synth->add_option("--out", f.out, "Output dataset directory");
  synth->add_option("--preset", f.preset, "default | high-noise | tiny");

  auto* graphs = app.add_subcommand("build-graphs", "Build subgraphs and write the cache");
  graphs->add_option("--dataset", f.dataset);
  graphs->add_option("--out", f.out);
  graphs->add_option("--sigma", f.sigma, "Adjacency bandwidth in um (0 = lattice pitch)");

  auto* pre = app.add_subcommand("pretrain", "Masked-central-spot pretraining");
  pre->add_option("--dataset", f.dataset);
  pre->add_option("--out", f.out, "Checkpoint directory");
  pre->add_option("--epochs", f.epochs);
  pre->add_option("--batch-size", f.batch_size);
  pre->add_option("--patience", f.patience);
  pre->add_option("--lr", f.lr);
  pre->add_option("--mask-fraction", f.mask_fraction);
  pre->add_option("--sigma", f.sigma);
  pre->add_option("--widths", f.widths, "Hidden widths, e.g. 1024,512,512,512,1024");

  auto* eval = app.add_subcommand("evaluate", "Masked imputation metrics");
  auto* sweep = app.add_subcommand("sweep", "Missingness sweep and critical threshold");
  auto* embed = app.add_subcommand("embed", "Hidden-layer embeddings");
  auto* cluster = app.add_subcommand("cluster", "k-means on embeddings");
  auto* hetero = app.add_subcommand("heterogeneity", "Centroid distance preservation and neighbor ranks");
  auto* deg = app.add_subcommand("deg", "One-vs-rest differential expression per cluster");
  auto* plr = app.add_subcommand("perturb-lr", "Ligand-receptor clamping");
  auto* pds = app.add_subcommand("perturb-downstream", "Input -> target effect sizes with random baselines");
  auto* probe = app.add_subcommand("probe", "Linear probe on embeddings");
  for (auto* sc : {eval, sweep, embed, cluster, hetero, deg, plr, pds, probe}) {
    sc->add_option("--dataset", f.dataset);
    sc->add_option("--checkpoint", f.checkpoint);
    sc->add_option("--out", f.out);
    sc->add_option("--split", f.split, "train | validation | test | all");
  }
  for (auto* sc : {eval, sweep}) sc->add_option("--mask-fraction", f.mask_fraction);
  for (auto* sc : {embed, cluster, hetero, deg, probe}) sc->add_option("--layer", f.layer);
  for (auto* sc : {cluster, deg}) {
    sc->add_option("--k", f.k, "Cluster count (0: choose by silhouette)");
    sc->add_option("--k-min", f.k_min);
    sc->add_option("--k-max", f.k_max);
    sc->add_option("--components", f.components, "PCA components");
  }
  deg->add_option("--fdr", f.fdr);
  plr->add_option("--pairs", f.pairs, "pairs.tsv (ligand<TAB>receptor)");
  pds->add_option("--targets", f.targets, "targets.tsv (input<TAB>t1,t2,...)");
  pds->add_option("--replicates", f.replicates);
  probe->add_option("--labels", f.labels, "CSV sample_id,spot,label (default: truth.json programs)");
  probe->add_option("--test-fraction", f.test_fraction);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return e.get_exit_code() == 0 ? code : 2;
  }

  auto logger = spdlog::stderr_color_mt("sage");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  CLI::App* sc = app.get_subcommands().front();
  const std::string cmd = sc->get_name();
  try {
    json file_cfg = load_config(g.config_path);
    if (!app.count("--seed") && file_cfg.contains("seed")) g.seed = file_cfg.at("seed").get<std::uint64_t>();
    if (!app.count("--deterministic") && file_cfg.contains("deterministic")) {
      g.deterministic = file_cfg.at("deterministic").get<bool>();
    }
    if (!app.count("--threads") && file_cfg.contains("threads")) g.threads = file_cfg.at("threads").get<int>();
    Eigen::setNbThreads(g.threads);
    const json section = file_cfg.contains(cmd) ? file_cfg.at(cmd) : json::object();
    // Shared keys may live at the top level or inside the command section.
    json cfg = file_cfg;
    cfg.erase(cmd);
    for (auto it = section.begin(); it != section.end(); ++it) cfg[it.key()] = it.value();

    const std::string dataset = pick<std::string>(sc, "--dataset", f.dataset, cfg, "dataset");
    const std::string checkpoint = pick<std::string>(sc, "--checkpoint", f.checkpoint, cfg, "checkpoint");
    const fs::path out = pick<std::string>(sc, "--out", f.out, cfg, "out");
    const std::string split = pick<std::string>(sc, "--split", f.split, cfg, "split");

    Run run(cmd, g, json::object());
    run.config()["seed"] = g.seed;

    if (cmd == "synth") {
      json scfg = cfg.contains("synth") ? cfg.at("synth") : cfg;
      if (sc->count("--preset")) scfg["preset"] = f.preset;
      if (app.count("--seed") || !scfg.contains("seed")) scfg["seed"] = g.seed;
      const SynthConfig config = synth_config_from_json(scfg);
      const fs::path dir = require_path(out.string(), "out");
      auto result = generate_to(config, dir);
      run.config()["synth"] = synth_config_to_json(config);
      run.output(dir / "manifest.json");
      run.output(dir / "truth.json");
      const auto report = verify_manifest(result.dataset, result.truth);
      spdlog::info("planted coupling sign agreement {:.3f}{}", report.agreement, report.low_signal ? " (low signal)" : "");
      run.finish(dir);
      return 0;
    }

    if (cmd == "build-graphs") {
      const double sigma = pick<double>(sc, "--sigma", f.sigma, cfg, "sigma");
      const Dataset d = open_dataset(dataset);
      const fs::path dir = require_path(out.string(), "out");
      fs::create_directories(dir);
      std::vector<CachedSubgraph> records;
      CsvWriter csv(run.output(dir / "graphs.csv"), {"sample_id", "spots", "subgraphs", "pitch_um", "sigma"});
      for (std::size_t s = 0; s < d.samples.size(); ++s) {
        const auto ps = prepare_sample(d, s, sigma);
        for (const auto& sg : ps.subgraphs) records.push_back(to_cached(sg, static_cast<std::uint32_t>(s)));
        csv.field(ps.sample_id).field(d.samples[s].spot_count()).field(ps.subgraphs.size()).field(ps.pitch_um);
        csv.field(ps.adjacency.empty() ? (sigma > 0 ? sigma : ps.pitch_um) : ps.adjacency.front().sigma);
        csv.end_row();
      }
      write_subgraph_cache(run.output(dir / "subgraphs.bin"), records);
      run.config()["dataset"] = dataset;
      run.config()["sigma"] = sigma;
      run.finish(dir);
      return 0;
    }

    if (cmd == "pretrain") {
      TrainConfig tc;
      tc.max_epochs = pick<std::size_t>(sc, "--epochs", f.epochs, cfg, "epochs");
      tc.batch_size = pick<std::size_t>(sc, "--batch-size", f.batch_size, cfg, "batch_size");
      tc.patience = pick<std::size_t>(sc, "--patience", f.patience, cfg, "patience");
      tc.lr = pick<double>(sc, "--lr", f.lr, cfg, "lr");
      tc.mask_fraction = pick<double>(sc, "--mask-fraction", f.mask_fraction, cfg, "mask_fraction");
      tc.sigma = pick<double>(sc, "--sigma", f.sigma, cfg, "sigma");
      if (sc->count("--widths")) {
        tc.hidden_widths = parse_widths(f.widths);
      } else if (cfg.contains("widths")) {
        tc.hidden_widths = cfg.at("widths").get<std::vector<std::size_t>>();
      }
      tc.seed = g.seed;
      tc.deterministic = g.deterministic;
      const Dataset d = open_dataset(dataset);
      const fs::path dir = require_path(out.string(), "out");
      const auto split_assign = split_by_sample(d.sample_ids(), SplitRatios{}, g.seed);
      const auto result = train(d, split_assign, tc);
      save_checkpoint(result.params, result.meta, dir);
      run.output(dir / "model.json");
      run.output(dir / "weights.bin");
      write_split(split_assign, run.output(dir / "split.json"));
      write_history_csv(result.history, run.output(dir / "history.csv"));
      run.config()["dataset"] = dataset;
      run.config()["train"] = {{"epochs", tc.max_epochs}, {"batch_size", tc.batch_size}, {"patience", tc.patience},
                               {"lr", tc.lr},           {"mask_fraction", tc.mask_fraction},
                               {"sigma", tc.sigma},      {"widths", tc.hidden_widths}};
      run.config()["best_epoch"] = result.history.best_epoch;
      run.config()["val_baseline_rmse"] = result.history.val_baseline_rmse;
      run.config()["best_val_rmse"] = result.history.best_val_rmse;
      run.finish(dir);
      return 0;
    }

    // Every remaining command evaluates a trained checkpoint.
    const Loaded l = open_model(dataset, checkpoint);
    const fs::path dir = require_path(out.string(), "out");
    fs::create_directories(dir);
    run.config()["dataset"] = dataset;
    run.config()["checkpoint"] = checkpoint;
    run.config()["split"] = split;
    const double sigma = l.checkpoint.meta.sigma;
    const auto samples = prepare_samples(l.dataset, split_ids(l, split), sigma);
    const std::size_t G = l.dataset.vocab.size();
    const std::size_t layer = pick<std::size_t>(sc, "--layer", f.layer, cfg, "layer");

    if (cmd == "evaluate" || cmd == "sweep") {
      const double frac = pick<double>(sc, "--mask-fraction", f.mask_fraction, cfg, "mask_fraction");
      run.config()["mask_fraction"] = frac;
      const GcnImputer model(l.checkpoint.params);
      const auto reference = evaluate_masked(model, samples, G, frac, g.seed);
      if (cmd == "evaluate") {
        write_metrics_csv({reference}, run.output(dir / "metrics.csv"));
        CsvWriter per(run.output(dir / "metrics_per_sample.csv"), {"sample_id", "r2"});
        for (const auto& s : reference.per_sample) {
          per.field(s.sample_id).field(s.r2);
          per.end_row();
        }
      } else {
        const auto curve = missingness_sweep(model, samples, G, default_sweep_fractions(), g.seed);
        write_metrics_csv(curve.points, run.output(dir / "sweep.csv"));
        const auto crit = reference.mean_r2 > 0 ? critical_threshold(curve, reference.mean_r2) : std::nullopt;
        CsvWriter csv(run.output(dir / "critical_threshold.csv"), {"reference_r2", "critical_fraction"});
        csv.field(reference.mean_r2);
        if (crit) {
          csv.field(*crit);
        } else {
          csv.field(std::string_view("none"));
        }
        csv.end_row();
      }
      run.finish(dir);
      return 0;
    }

    if (cmd == "embed") {
      const auto e = extract_embeddings(l.checkpoint.params, samples, layer);
      write_embeddings(e, run.output(dir / "embeddings.bin"));
      run.config()["layer"] = layer;
      run.finish(dir);
      return 0;
    }

    if (cmd == "cluster" || cmd == "deg") {
      const auto e = extract_embeddings(l.checkpoint.params, samples, layer);
      const std::size_t comps = pick<std::size_t>(sc, "--components", f.components, cfg, "components");
      const PointMatrix reduced = pca_reduce(e.vectors, comps);
      std::size_t k = pick<std::size_t>(sc, "--k", f.k, cfg, "k");
      if (k == 0) {
        const auto sel = select_k_by_silhouette(reduced, pick<std::size_t>(sc, "--k-min", f.k_min, cfg, "k_min"),
                                                pick<std::size_t>(sc, "--k-max", f.k_max, cfg, "k_max"), g.seed);
        CsvWriter ks(run.output(dir / "k_selection.csv"), {"k", "silhouette"});
        for (const auto& [kk, s] : sel.silhouette_by_k) {
          ks.field(kk).field(s);
          ks.end_row();
        }
        k = sel.best_k;
      }
      const auto km = kmeans(reduced, k, g.seed);
      run.config()["k"] = k;
      run.config()["layer"] = layer;
      run.config()["components"] = comps;
      if (cmd == "cluster") {
        CsvWriter csv(run.output(dir / "clusters.csv"), {"sample_id", "spot", "cluster"});
        for (std::size_t i = 0; i < e.keys.size(); ++i) {
          csv.field(e.keys[i].sample_id).field(static_cast<long long>(e.keys[i].spot)).field(km.labels[i]);
          csv.end_row();
        }
        const auto truth = truth_labels(dataset, l.dataset, e.keys);
        CsvWriter scores(run.output(dir / "cluster_scores.csv"), {"k", "inertia", "silhouette", "dbi", "ari_vs_truth"});
        const auto cs = clustering_scores(reduced, km.labels, truth ? std::span<const int>(*truth) : std::span<const int>(km.labels));
        scores.field(k).field(km.inertia).field(cs.silhouette).field(cs.dbi);
        if (truth) {
          scores.field(cs.ari);
        } else {
          scores.field(std::string_view("NA"));
        }
        scores.end_row();
      } else {
        const double fdr = pick<double>(sc, "--fdr", f.fdr, cfg, "fdr");
        const auto raw = center_expression(samples);
        const auto result = deg_one_vs_rest(raw.vectors, km.labels, fdr);
        for (const auto& t : result.tables) {
          CsvWriter csv(run.output(dir / ("deg_cluster_" + std::to_string(t.cluster) + ".csv")),
                        {"gene", "direction", "u", "p", "p_adj", "significant"});
          for (const auto& e2 : t.entries) {
            csv.field(l.dataset.vocab.name(e2.gene)).field(e2.direction).field(e2.u).field(e2.p).field(e2.p_adj);
            csv.field(e2.significant ? 1 : 0);
            csv.end_row();
          }
        }
        run.config()["fdr"] = fdr;
        run.config()["genes_excluded"] = result.genes_excluded;
      }
      run.finish(dir);
      return 0;
    }

    if (cmd == "heterogeneity") {
      const auto e = extract_embeddings(l.checkpoint.params, samples, layer);
      const auto raw = center_expression(samples);
      std::map<std::string, std::string> tissue_of;
      std::vector<std::string> sample_labels, tissue_labels;
      for (const auto& ps : samples) tissue_of[ps.sample_id] = ps.tissue;
      for (const auto& k : e.keys) {
        sample_labels.push_back(k.sample_id);
        tissue_labels.push_back(tissue_of[k.sample_id]);
      }
      CsvWriter dist(run.output(dir / "centroid_dist.csv"), {"level", "source", "a", "b", "raw", "normalized"});
      CsvWriter pres(run.output(dir / "preservation.csv"), {"level", "a", "b", "abs_error"});
      CsvWriter ranks(run.output(dir / "neighbor_ranks.csv"), {"source", "sample_id", "mean_rank", "peers"});
      for (const auto* level : {"sample", "tissue"}) {
        const auto& labels = std::string(level) == "sample" ? sample_labels : tissue_labels;
        const auto cand = centroid_distance_analysis(e.vectors, labels);
        const auto ref = centroid_distance_analysis(raw.vectors, labels);
        for (const auto* m : {&ref, &cand}) {
          for (std::size_t a = 0; a < m->labels.size(); ++a) {
            for (std::size_t b = a + 1; b < m->labels.size(); ++b) {
              dist.field(std::string_view(level)).field(std::string_view(m == &ref ? "expression" : "embedding"));
              dist.field(m->labels[a]).field(m->labels[b]);
              dist.field(m->raw(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
              dist.field(m->normalized(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
              dist.end_row();
            }
          }
        }
        const auto err = matrix_preservation_error(cand, ref);
        std::size_t idx = 0;
        for (std::size_t a = 0; a < ref.labels.size(); ++a) {
          for (std::size_t b = a + 1; b < ref.labels.size(); ++b) {
            pres.field(std::string_view(level)).field(ref.labels[a]).field(ref.labels[b]).field(err.errors[idx++]);
            pres.end_row();
          }
        }
        if (std::string(level) == "sample") {
          for (const auto* m : {&ref, &cand}) {
            try {
              const auto nr = neighborhood_rank(*m, tissue_of);
              for (const auto& r : nr.per_sample) {
                ranks.field(std::string_view(m == &ref ? "expression" : "embedding")).field(r.sample_id);
                ranks.field(r.mean_rank).field(r.peers);
                ranks.end_row();
              }
            } catch (const NoComparableTissues& ex) {
              spdlog::warn("neighbor ranks skipped: {}", ex.what());
            }
          }
        }
      }
      run.config()["layer"] = layer;
      run.finish(dir);
      return 0;
    }

    if (cmd == "probe") {
      const auto e = extract_embeddings(l.checkpoint.params, samples, layer);
      std::vector<int> labels;
      const std::string labels_path = pick<std::string>(sc, "--labels", f.labels, cfg, "labels");
      if (!labels_path.empty()) {
        std::map<std::pair<std::string, std::uint32_t>, int> lab;
        const auto lines = read_lines(labels_path);
        for (std::size_t i = 1; i < lines.size(); ++i) {
          if (lines[i].empty()) continue;
          const auto fld = sagefm::split(lines[i], ',');
          if (fld.size() != 3) throw CorruptData(labels_path + ": expected sample_id,spot,label");
          lab[{fld[0], static_cast<std::uint32_t>(parse_int(fld[1]))}] = static_cast<int>(parse_int(fld[2]));
        }
        for (const auto& k : e.keys) {
          auto it = lab.find({k.sample_id, k.spot});
          if (it == lab.end()) throw LabelMismatch("no label for " + k.sample_id + ":" + std::to_string(k.spot));
          labels.push_back(it->second);
        }
      } else {
        auto truth = truth_labels(dataset, l.dataset, e.keys);
        if (!truth) throw ConfigError("no --labels given and no truth.json next to the dataset");
        labels = std::move(*truth);
      }
      const double tf = pick<double>(sc, "--test-fraction", f.test_fraction, cfg, "test_fraction");
      const auto [tr, te] = probe_split(labels.size(), tf, g.seed);
      const auto res = linear_probe(e.vectors, labels, tr, te);
      CsvWriter csv(run.output(dir / "probe.csv"), {"layer", "n_train", "n_test", "accuracy", "macro_f1"});
      csv.field(layer).field(tr.size()).field(te.size()).field(res.accuracy).field(res.macro_f1);
      csv.end_row();
      run.config()["layer"] = layer;
      run.config()["test_fraction"] = tf;
      run.finish(dir);
      return 0;
    }

    // Perturbations always contrast the validation and test splits.
    const auto val = prepare_samples(l.dataset, l.split.validation, sigma);
    const auto test = prepare_samples(l.dataset, l.split.test, sigma);

    if (cmd == "perturb-lr") {
      const fs::path pairs_path = require_path(pick<std::string>(sc, "--pairs", f.pairs, cfg, "pairs"), "pairs");
      const auto pairs = read_pairs_tsv(pairs_path);
      const auto rep = ligand_receptor_experiment(l.checkpoint.params, l.dataset.vocab, pairs, val, test);
      CsvWriter ref(run.output(dir / "reference_calls.csv"),
                    {"ligand", "receptor", "r_val", "p_val", "r_test", "p_test", "verdict", "reason"});
      for (const auto& c : rep.reference) {
        ref.field(c.pair.ligand).field(c.pair.receptor).field(c.val.r).field(c.val.p).field(c.test.r).field(c.test.p);
        ref.field(to_string(c.verdict)).field(c.reason);
        ref.end_row();
      }
      CsvWriter out_csv(run.output(dir / "perturb_lr.csv"),
                        {"ligand", "receptor", "split", "condition", "clamp_value", "n_up", "n_down", "n_unchanged",
                         "n_total", "effect", "model_verdict", "reference_verdict"});
      for (std::size_t i = 0; i < rep.results.size(); ++i) {
        const auto& r = rep.results[i];
        for (const auto& o : r.outcomes) {
          out_csv.field(r.pair.ligand).field(r.pair.receptor).field(o.split).field(o.condition);
          out_csv.field(static_cast<double>(o.condition == "max-clamp" ? r.clamp.max : r.clamp.min));
          out_csv.field(o.tally.n_up).field(o.tally.n_down).field(o.tally.n_unchanged).field(o.tally.n_total);
          out_csv.field(o.tally.effect()).field(to_string(r.model_verdict)).field(to_string(rep.reference[i].verdict));
          out_csv.end_row();
        }
      }
      run.config()["pairs"] = pairs_path.string();
      run.config()["agreement"] = {{"compared", rep.compared}, {"agreeing", rep.agreeing}};
      run.finish(dir);
      return 0;
    }

    if (cmd == "perturb-downstream") {
      const fs::path tpath = require_path(pick<std::string>(sc, "--targets", f.targets, cfg, "targets"), "targets");
      const std::size_t n_rep = pick<std::size_t>(sc, "--replicates", f.replicates, cfg, "replicates");
      const auto sets = read_targets_tsv(tpath);
      CsvWriter ds(run.output(dir / "perturb_downstream.csv"),
                   {"input", "target", "clamp_min", "clamp_max", "effect_val", "effect_test"});
      CsvWriter bs(run.output(dir / "baseline_replicates.csv"),
                   {"input", "replicate", "seed", "targets", "mean_effect_val", "mean_effect_test"});
      CsvWriter cmp(run.output(dir / "effect_comparison.csv"),
                    {"input", "split", "scope", "replicate", "t", "df", "p", "target_higher"});
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < n_rep; ++i) seeds.push_back(derive_seed(g.seed, {0xb5, i}));
      for (const auto& set : sets) {
        const auto res = downstream_experiment(l.checkpoint.params, l.dataset.vocab, set, val, test);
        for (std::size_t t = 0; t < set.targets.size(); ++t) {
          ds.field(set.input).field(set.targets[t]).field(static_cast<double>(res.clamp.min));
          ds.field(static_cast<double>(res.clamp.max)).field(res.effect_val[t]).field(res.effect_test[t]);
          ds.end_row();
        }
        const auto reps = baseline_replicates(l.checkpoint.params, l.dataset.vocab, set.input, set.targets.size(),
                                              set.targets, seeds, val, test);
        std::vector<std::vector<double>> rv, rt;
        for (std::size_t i = 0; i < reps.size(); ++i) {
          std::string joined;
          for (const auto& t : reps[i].result.targets) joined += (joined.empty() ? "" : ";") + t;
          bs.field(set.input).field(i).field(std::to_string(reps[i].seed)).field(joined);
          bs.field(reps[i].result.mean_val).field(reps[i].result.mean_test);
          bs.end_row();
          rv.push_back(reps[i].result.effect_val);
          rt.push_back(reps[i].result.effect_test);
        }
        for (int s = 0; s < 2; ++s) {
          const auto& te = s == 0 ? res.effect_val : res.effect_test;
          if (te.size() < 2) {
            spdlog::warn("{}: fewer than two targets; effect comparison skipped", set.input);
            continue;
          }
          const auto c = effect_comparison(te, s == 0 ? rv : rt);
          const std::string_view split_name = s == 0 ? "validation" : "test";
          cmp.field(set.input).field(split_name).field(std::string_view("pooled")).field(std::string_view(""));
          cmp.field(c.pooled.t).field(c.pooled.df).field(c.pooled.p).field(c.pooled_target_higher ? 1 : 0);
          cmp.end_row();
          for (const auto& r : c.replicates) {
            if (!r.test) continue;
            cmp.field(set.input).field(split_name).field(std::string_view("replicate")).field(r.replicate);
            cmp.field(r.test->t).field(r.test->df).field(r.test->p).field(r.target_higher ? 1 : 0);
            cmp.end_row();
          }
        }
      }
      run.config()["targets"] = tpath.string();
      run.config()["replicates"] = n_rep;
      run.finish(dir);
      return 0;
    }
    throw ConfigError("unhandled command " + cmd);
  } catch (const sagefm::Error& e) {
    std::cerr << "sage " << cmd << ": " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "sage " << cmd << ": configuration error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "sage " << cmd << ": " << e.what() << '\n';
    return 1;
  }
}
