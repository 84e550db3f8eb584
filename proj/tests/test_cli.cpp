#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutualhold/cli.hpp"
#include "test_helpers.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"mutualhold"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return mutualhold::cli::run(static_cast<int>(argv.size()), argv.data());
}

struct CaptureStream {
  explicit CaptureStream(std::ostream& stream) : stream_(stream), old_(stream.rdbuf(buffer_.rdbuf())) {}
  ~CaptureStream() { stream_.rdbuf(old_); }
  std::string text() const { return buffer_.str(); }

 private:
  std::ostream& stream_;
  std::stringstream buffer_;
  std::streambuf* old_;
};

}  // namespace

TEST_CASE("solve-threshold prints the root and residual", "[cli]") {
  CaptureStream capture(std::cout);
  const int code = run_cli({"solve-threshold", "--b", "-1,1", "--weights", "0.5,0.5"});
  CHECK(code == 0);
  const auto text = capture.text();
  CHECK(text.find("c=0.33333333333333331") != std::string::npos);
  CHECK(text.find("residual=") != std::string::npos);
  CHECK(text.find("method=exact_piecewise") != std::string::npos);
}

TEST_CASE("solve-threshold validates its inputs", "[cli]") {
  CaptureStream err(std::cerr);
  CHECK(run_cli({"solve-threshold", "--b", "1,2", "--weights", "0.9,0.9"}) == 2);
  CHECK(run_cli({"solve-threshold"}) == 2);
  CHECK(run_cli({"solve-threshold", "--b", "abc"}) == 2);
}

TEST_CASE("unknown flags and subcommands exit with the config code", "[cli]") {
  CaptureStream err(std::cerr);
  CaptureStream out(std::cout);
  CHECK(run_cli({"solve-threshold", "--b", "1", "--no-such-flag"}) == 2);
  CHECK(run_cli({"frobnicate"}) == 2);
}

TEST_CASE("onestep-figures writes the density and summary tables", "[cli]") {
  const auto dir = oracle::test_dir("cli_onestep");
  CaptureStream out(std::cout);
  const int code = run_cli({"onestep-figures", "--theta", "1", "--mbar", "-0.5", "--sigbar", "1",
                            "--delta", "1", "--n", "20000", "--seed", "42", "--out", dir.string()});
  REQUIRE(code == 0);
  CHECK(fs::exists(dir / "densities.csv"));
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK(fs::exists(dir / "run_manifest.json"));

  std::ifstream summary(dir / "summary.csv");
  std::string header;
  std::getline(summary, header);
  CHECK(header ==
        "samples,threshold,mean_provisions,mean_equilibrium,var_provisions,var_equilibrium,"
        "paired_mean_gap,paired_gap_se");

  std::ifstream manifest_in(dir / "run_manifest.json");
  const auto manifest = nlohmann::json::parse(manifest_in);
  CHECK(manifest.at("subcommand") == "onestep-figures");
  CHECK(manifest.at("config").at("onestep").at("samples") == 20000);
  CHECK(manifest.at("outputs").size() == 2);
}

TEST_CASE("missing seed is reported by name", "[cli]") {
  const auto dir = oracle::test_dir("cli_noseed");
  const auto cfg_path = dir / "run.json";
  std::ofstream(cfg_path) << R"({"model": {"kind":"ou","drift_bound":5.0},
    "sim": {"particles":4,"steps":4,"horizon":1.0},
    "nash": {"replications":120}})";
  CaptureStream err(std::cerr);
  const int code = run_cli({"nash-gap", "--config", cfg_path.string(), "--out", dir.string()});
  CHECK(code == 2);
  CHECK(err.text().find("seed") != std::string::npos);
}

TEST_CASE("malformed config exits with the config code", "[cli]") {
  const auto dir = oracle::test_dir("cli_badjson");
  const auto cfg_path = dir / "broken.json";
  std::ofstream(cfg_path) << "{ not json";
  CaptureStream err(std::cerr);
  CHECK(run_cli({"simulate-mfg", "--config", cfg_path.string()}) == 2);
}

TEST_CASE("numerical blowups exit with the numeric code", "[cli]") {
  const auto dir = oracle::test_dir("cli_blowup");
  CaptureStream err(std::cerr);
  const int code = run_cli({"simulate-provisions", "--model", "constant", "--b0", "1e308",
                            "--sigma0", "1", "--init", "gaussian", "--init-mean", "0",
                            "--init-var", "1", "--particles", "4", "--steps", "8", "--horizon",
                            "8", "--seed", "1", "--out", dir.string()});
  CHECK(code == 3);
}

TEST_CASE("equilibrium-fields emits the per-atom table", "[cli]") {
  const auto dir = oracle::test_dir("cli_fields");
  CaptureStream out(std::cout);
  const int code = run_cli({"equilibrium-fields", "--model", "ou", "--theta", "1", "--mbar", "0",
                            "--sigbar", "1", "--atoms", "1,-1", "--out", dir.string()});
  REQUIRE(code == 0);
  std::ifstream in(dir / "fields.csv");
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "atom,weight,b,B,Sigma,holding");
  // Atom 1 has drift -1 (not held), atom -1 has drift 1 (held).
  CHECK(row1.find(",-1,") != std::string::npos);
  CHECK(row1.back() == '0');
  CHECK(row2.back() == '1');
}

TEST_CASE("identical configurations produce byte-identical artifacts", "[cli]") {
  const auto dir_a = oracle::test_dir("cli_repro_a");
  const auto dir_b = oracle::test_dir("cli_repro_b");
  const auto dir_c = oracle::test_dir("cli_repro_c");
  CaptureStream out(std::cout);
  auto run_into = [&](const fs::path& dir, const char* threads) {
    return run_cli({"simulate-mfg", "--theta", "1", "--mbar", "-0.5", "--sigbar", "1", "--particles",
                    "2000", "--steps", "20", "--horizon", "1", "--seed", "11", "--threads", threads,
                    "--grid-min", "-4", "--grid-max", "4", "--grid-points", "101", "--bandwidth",
                    "0.25", "--out", dir.string()});
  };
  REQUIRE(run_into(dir_a, "1") == 0);
  REQUIRE(run_into(dir_b, "1") == 0);
  REQUIRE(run_into(dir_c, "4") == 0);
  for (const char* name : {"summary.csv", "thresholds.csv", "kde.csv"}) {
    const auto a = oracle::slurp(dir_a / name);
    REQUIRE_FALSE(a.empty());
    CHECK(a == oracle::slurp(dir_b / name));
    CHECK(a == oracle::slurp(dir_c / name));
  }
}

TEST_CASE("run identifiers prefix every artifact", "[cli]") {
  const auto dir = oracle::test_dir("cli_runid");
  CaptureStream out(std::cout);
  const int code = run_cli({"simulate-provisions", "--theta", "1", "--mbar", "0", "--sigbar", "1",
                            "--particles", "50", "--steps", "5", "--horizon", "1", "--seed", "3",
                            "--run-id", "demo", "--out", dir.string()});
  REQUIRE(code == 0);
  CHECK(fs::exists(dir / "demo_summary.csv"));
  CHECK(fs::exists(dir / "demo_kde.csv"));
  CHECK(fs::exists(dir / "demo_run_manifest.json"));
}

TEST_CASE("nash-gap emits the declared csv schema", "[cli]") {
  const auto dir = oracle::test_dir("cli_nash");
  CaptureStream out(std::cout);
  const int code =
      run_cli({"nash-gap", "--theta", "1", "--mbar", "-0.5", "--sigbar", "1", "--drift-bound", "8",
               "--steps", "8", "--horizon", "1", "--seed", "21", "--replications", "150",
               "--n-list", "4,8", "--deviations", "never_hold,null", "--out", dir.string()});
  REQUIRE(code == 0);
  std::ifstream in(dir / "nash_gap.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "N,deviation_name,J_base,J_dev,gain,se_gain,eps_hat,n_replications,seed");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 4);  // two sizes x two deviations
}

TEST_CASE("nplayer runs emit the per-step strategy trace", "[cli]") {
  const auto dir = oracle::test_dir("cli_nplayer");
  CaptureStream out(std::cout);
  const int code = run_cli({"simulate-nplayer", "--theta", "1", "--mbar", "-0.5", "--sigbar", "1",
                            "--particles", "16", "--steps", "6", "--horizon", "1", "--seed", "2",
                            "--out", dir.string()});
  REQUIRE(code == 0);
  std::ifstream in(dir / "strategy.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,player,holding");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 16 * 6);
  CHECK(fs::exists(dir / "thresholds.csv"));
}

TEST_CASE("empirical initial laws load from flags", "[cli]") {
  const auto dir = oracle::test_dir("cli_empirical_init");
  CaptureStream out(std::cout);
  const int code = run_cli({"simulate-provisions", "--model", "constant", "--b0", "0", "--sigma0",
                            "1", "--init", "empirical", "--atoms", "1.5,1.5,1.5", "--particles",
                            "64", "--steps", "2", "--horizon", "1", "--seed", "4", "--out",
                            dir.string()});
  REQUIRE(code == 0);
  std::ifstream in(dir / "summary.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  // All mass at 1.5: the initial row reads t=0, mean 1.5, variance 0.
  CHECK(first.rfind("0,1.5,0,", 0) == 0);
}

TEST_CASE("flags override config-file values", "[cli]") {
  const auto dir = oracle::test_dir("cli_override");
  const auto cfg_path = dir / "run.json";
  std::ofstream(cfg_path) << R"({"model": {"kind":"ou","theta":1.0,"mbar":-0.5,"sigbar":1.0},
    "initial": {"kind":"invariant"},
    "sim": {"particles":100,"steps":5,"horizon":1.0,"seed":1}})";
  CaptureStream out(std::cout);
  const int code = run_cli({"simulate-provisions", "--config", cfg_path.string(), "--seed", "42",
                            "--out", dir.string()});
  REQUIRE(code == 0);
  std::ifstream manifest_in(dir / "run_manifest.json");
  const auto manifest = nlohmann::json::parse(manifest_in);
  CHECK(manifest.at("config").at("sim").at("seed") == 42);
  CHECK(manifest.at("config").at("sim").at("particles") == 100);
}

TEST_CASE("convergence-diag emits distances between successive sizes", "[cli]") {
  const auto dir = oracle::test_dir("cli_conv");
  CaptureStream out(std::cout);
  const int code = run_cli({"convergence-diag", "--theta", "1", "--mbar", "-0.5", "--sigbar", "1",
                            "--steps", "10", "--horizon", "1", "--seed", "5", "--n-list",
                            "100,200,400", "--out", dir.string()});
  REQUIRE(code == 0);
  std::ifstream in(dir / "w2.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "n_lo,n_hi,w2");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}
