#include "doctest.h"

#include "fixtures.hpp"
#include "sagefm/data.hpp"
#include "sagefm/synthlab.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int sage(const std::string& args) {
  const std::string cmd = std::string(SAGE_BIN) + " --log-level off " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Full tiny pipeline into `root`; returns every CSV written, relative to root.
std::vector<fs::path> run_pipeline(const fs::path& root) {
  const auto data = root / "data";
  const auto ck = root / "ck";
  const std::string common = "--deterministic --seed 7 ";
  REQUIRE(sage(common + "synth --preset tiny --out " + q(data)) == 0);
  REQUIRE(sage(common + "build-graphs --dataset " + q(data) + " --out " + q(root / "graphs")) == 0);
  REQUIRE(sage(common + "pretrain --dataset " + q(data) + " --out " + q(ck) +
               " --widths 16,8 --epochs 3 --batch-size 16 --lr 0.003") == 0);

  const auto ds = sagefm::load_dataset(data);
  const auto truth = sagefm::load_truth(data / "truth.json");
  {
    std::ofstream pairs(root / "pairs.tsv");
    for (const auto& c : truth.couplings) pairs << ds.vocab.name(c.ligand) << '\t' << ds.vocab.name(c.target) << '\n';
    std::ofstream targets(root / "targets.tsv");
    for (const auto& [lig, tg] : truth.targets_by_ligand()) {
      targets << ds.vocab.name(lig) << '\t';
      for (std::size_t i = 0; i < tg.size(); ++i) targets << (i ? "," : "") << ds.vocab.name(tg[i]);
      targets << '\n';
    }
  }

  auto sub = [&](const std::string& cmd, const std::string& extra) {
    const auto out = root / cmd;
    REQUIRE(sage(common + cmd + " --dataset " + q(data) + " --checkpoint " + q(ck) + " --out " + q(out) + " " + extra) ==
            0);
  };
  sub("evaluate", "");
  sub("sweep", "");
  sub("embed", "--layer 2");
  sub("cluster", "--layer 2 --components 8 --k-min 2 --k-max 4 --split all");
  sub("deg", "--layer 2 --components 8 --k 3 --split all");
  sub("heterogeneity", "--layer 2 --split all");
  sub("probe", "--layer 2 --split all");
  sub("perturb-lr", "--pairs " + q(root / "pairs.tsv"));
  sub("perturb-downstream", "--targets " + q(root / "targets.tsv") + " --replicates 3");

  std::vector<fs::path> csvs;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().extension() == ".csv") csvs.push_back(fs::relative(e.path(), root));
  }
  std::sort(csvs.begin(), csvs.end());
  return csvs;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(sage("") == 2);
  CHECK(sage("no-such-command") == 2);
  CHECK(sage("pretrain --epochs notanumber") == 2);
  CHECK(sage("--version") == 0);
  CHECK(sage("--help") == 0);
}

TEST_CASE("domain errors exit 1") {
  const auto dir = test_fixtures::temp_dir("cli_err");
  CHECK(sage("evaluate --dataset " + q(dir / "missing") + " --checkpoint " + q(dir / "ck") + " --out " + q(dir / "o")) ==
        1);
  CHECK(sage("synth --preset nope --out " + q(dir / "d")) == 1);
  CHECK(sage("synth") == 1);  // no --out
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK(sage("--config " + q(dir / "bad.json") + " synth --out " + q(dir / "d2")) == 1);
  fs::remove_all(dir);
}

TEST_CASE("config file values apply and flags override them") {
  const auto dir = test_fixtures::temp_dir("cli_cfg");
  std::ofstream(dir / "c.json") << R"({"seed": 5, "synth": {"preset": "tiny", "n_samples": 3}})";
  REQUIRE(sage("--config " + q(dir / "c.json") + " synth --out " + q(dir / "a")) == 0);
  CHECK(sagefm::load_dataset(dir / "a").samples.size() == 3);
  CHECK(sagefm::load_truth(dir / "a" / "truth.json").seed == 5);
  REQUIRE(sage("--config " + q(dir / "c.json") + " --seed 9 synth --out " + q(dir / "b")) == 0);
  CHECK(sagefm::load_truth(dir / "b" / "truth.json").seed == 9);

  const auto run = nlohmann::json::parse(slurp(dir / "a" / "run.json"));
  for (const char* key : {"command", "config", "seed", "versions", "started", "finished", "outputs"}) {
    CHECK(run.contains(key));
  }
  CHECK(run["command"] == "synth");
  CHECK(run["seed"] == 5);
  fs::remove_all(dir);
}

TEST_CASE("deterministic pipeline reruns give byte-identical CSVs") {
  const auto a = test_fixtures::temp_dir("cli_a");
  const auto b = test_fixtures::temp_dir("cli_b");
  const auto files_a = run_pipeline(a);
  const auto files_b = run_pipeline(b);
  REQUIRE(files_a == files_b);
  CHECK(files_a.size() >= 12);
  for (const auto& rel : files_a) {
    INFO(rel.string());
    const auto x = slurp(a / rel);
    CHECK(!x.empty());
    CHECK(x == slurp(b / rel));
  }
  CHECK(slurp(a / "ck" / "weights.bin") == slurp(b / "ck" / "weights.bin"));
  fs::remove_all(a);
  fs::remove_all(b);
}
