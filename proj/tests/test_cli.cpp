#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mrcn/config.hpp"

using namespace mrcn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("mrcn_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MRCN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small-but-real training setup so CLI round trips stay fast.
fs::path tiny_config(const fs::path& dir) {
  const fs::path path = dir / "tiny.cfg";
  std::ofstream out(path);
  out << "synth.num_identities = 6\n"
      << "synth.samples_per_identity = 4\n"
      << "batch_p = 2\n"
      << "batch_k = 2\n"
      << "epochs = 2\n"
      << "iterations_per_epoch = 2\n"
      << "holdout_fraction = 0.5\n";
  return path;
}

}  // namespace

TEST_CASE("config parsing: precedence, lists and unknown keys") {
  RunConfig cfg;
  apply_config_line(cfg, "lambda2", "0.8");
  CHECK(cfg.loss.lambda2 == doctest::Approx(0.8));
  apply_config_line(cfg, "loss_branches", "v, n, v+");
  CHECK(cfg.loss_branches.size() == 3);
  apply_config_line(cfg, "lambda2_values", "0.4,0.8");
  CHECK(cfg.lambda2_values == std::vector<double>{0.4, 0.8});
  CHECK_THROWS_AS(apply_config_line(cfg, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_config_line(cfg, "lambda2", "abc"), ConfigError);
  CHECK_THROWS_AS(apply_config_line(cfg, "use_mrm", "maybe"), ConfigError);

  const fs::path dir = temp_dir("cfg");
  {
    std::ofstream out(dir / "a.cfg");
    out << "# comment\nseed = 9\nalpha = 0.25\n";
  }
  RunConfig from_file;
  apply_config_file(from_file, (dir / "a.cfg").string());
  CHECK(from_file.seed == 9);
  CHECK(from_file.loss.alpha == doctest::Approx(0.25));
  CHECK_THROWS_AS(apply_config_file(from_file, (dir / "missing.cfg").string()), ConfigError);

  RunConfig defaults;
  CHECK(defaults.loss.alpha == doctest::Approx(0.2));
  CHECK(defaults.loss.lambda1 == doctest::Approx(1.0));
  CHECK(defaults.loss.lambda2 == doctest::Approx(1.2));
  CHECK(defaults.batch_p == 4);
  CHECK(defaults.batch_k == 4);
  CHECK(defaults.momentum == doctest::Approx(0.9));
}

TEST_CASE("synth-data is byte-identical under one seed") {
  const fs::path a = temp_dir("synth_a");
  const fs::path b = temp_dir("synth_b");
  REQUIRE(run_cli("synth-data --seed 7 --out " + a.string()) == 0);
  REQUIRE(run_cli("synth-data --seed 7 --out " + b.string()) == 0);
  CHECK(file_bytes(a / "dataset.bin") == file_bytes(b / "dataset.bin"));
  CHECK(fs::exists(a / "manifest.json"));

  const fs::path c = temp_dir("synth_c");
  REQUIRE(run_cli("synth-data --seed 8 --out " + c.string()) == 0);
  CHECK(file_bytes(a / "dataset.bin") != file_bytes(c / "dataset.bin"));
}

TEST_CASE("usage errors exit with the usage code") {
  CHECK(run_cli("") == 2);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("train --bogus-flag") == 2);
  CHECK(run_cli("eval") == 2);  // missing required --checkpoint
  const fs::path dir = temp_dir("badcfg");
  {
    std::ofstream out(dir / "bad.cfg");
    out << "unknown_key = 1\n";
  }
  CHECK(run_cli("train --config " + (dir / "bad.cfg").string()) == 2);
}

TEST_CASE("train, eval and diagnose round trip") {
  const fs::path dir = temp_dir("train");
  const fs::path cfg = tiny_config(dir);
  const fs::path train_out = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --seed 3 --out " + train_out.string()) == 0);
  CHECK(fs::exists(train_out / "manifest.json"));
  CHECK(fs::exists(train_out / "metrics.jsonl"));
  const fs::path ckpt = train_out / "checkpoint_epoch_2.json";
  REQUIRE(fs::exists(ckpt));

  const fs::path eval_out = dir / "eval";
  REQUIRE(run_cli("eval --config " + cfg.string() + " --seed 3 --out " + eval_out.string() +
                  " --checkpoint " + ckpt.string()) == 0);
  CHECK(fs::exists(eval_out / "report.json"));
  CHECK(fs::exists(eval_out / "report.txt"));
  CHECK(fs::exists(eval_out / "embeddings.bin"));

  const fs::path diag_out = dir / "diag";
  REQUIRE(run_cli("diagnose --config " + cfg.string() + " --seed 3 --out " + diag_out.string() +
                  " --checkpoint " + ckpt.string()) == 0);
  CHECK(fs::exists(diag_out / "diagnostics.json"));
}

TEST_CASE("ablate emits the five-row component table") {
  const fs::path dir = temp_dir("ablate");
  const fs::path cfg = tiny_config(dir);
  const fs::path out = dir / "run";
  REQUIRE(run_cli("ablate --config " + cfg.string() + " --seed 4 --out " + out.string()) == 0);

  std::ifstream jsonl(out / "ablation.jsonl");
  REQUIRE(jsonl.good());
  std::string line;
  std::size_t rows = 0;
  bool has_baseline = false, has_wo_cqc = false;
  while (std::getline(jsonl, line)) {
    if (line.empty()) continue;
    ++rows;
    if (line.find("baseline") != std::string::npos) has_baseline = true;
    if (line.find("w/o CQC") != std::string::npos) has_wo_cqc = true;
    CHECK(line.find("rank1") != std::string::npos);
    CHECK(line.find("map") != std::string::npos);
  }
  CHECK(rows == 5);
  CHECK(has_baseline);
  CHECK(has_wo_cqc);
  CHECK(fs::exists(out / "ablation.tsv"));
}

TEST_CASE("sweep-lambda2 writes one record per value") {
  const fs::path dir = temp_dir("sweep");
  const fs::path cfg = tiny_config(dir);
  const fs::path out = dir / "run";
  REQUIRE(run_cli("sweep-lambda2 --config " + cfg.string() + " --seed 5 --out " + out.string() +
                  " --values 0.4,1.2") == 0);
  std::ifstream jsonl(out / "sweep.jsonl");
  REQUIRE(jsonl.good());
  std::string line;
  std::size_t rows = 0;
  while (std::getline(jsonl, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("train manifests capture the resolved config") {
  const fs::path dir = temp_dir("manifest");
  const fs::path cfg = tiny_config(dir);
  const fs::path out = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --seed 11 --lambda2 0.6 --no-mcm --out " +
                  out.string()) == 0);
  const std::string manifest = file_bytes(out / "manifest.json");
  CHECK(manifest.find("\"seed\": 11") != std::string::npos);
  CHECK(manifest.find("\"lambda2\": 0.6") != std::string::npos);
  CHECK(manifest.find("\"use_mcm\": false") != std::string::npos);
}
