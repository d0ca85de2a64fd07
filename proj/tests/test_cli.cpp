#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

#include "support/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI with `args` (already shell-quoted) from `cwd`.
RunResult run_cli(const fs::path& cwd, const std::string& args, const std::string& env = "") {
  const fs::path out = cwd / ".stdout";
  const fs::path err = cwd / ".stderr";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" BIOSEP_CLI_PATH "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = oracle::read_file(out);
  r.err = oracle::read_file(err);
  fs::remove(out);
  fs::remove(err);
  return r;
}

json read_json(const fs::path& p) { return json::parse(oracle::read_file(p)); }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), dir).string()] = oracle::read_file(entry.path());
  }
  return files;
}

}  // namespace

TEST(CliSynth, WritesFixtureAndSidecar) {
  oracle::TempDir dir("cli");
  const auto r = run_cli(dir.path(), "synth --rr-mean 0.8 --jitter-cv 0.3 --duration 10 --out demo");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (const char* f : {"mixture.wav", "heart.wav", "lung.wav", "params.json"}) {
    EXPECT_TRUE(fs::exists(dir / "demo" / f)) << f;
  }
  const json p = read_json(dir / "demo" / "params.json");
  EXPECT_DOUBLE_EQ(p["heart"]["rr_mean_s"].get<double>(), 0.8);
  EXPECT_DOUBLE_EQ(p["heart"]["rr_jitter_cv"].get<double>(), 0.3);
  EXPECT_DOUBLE_EQ(p["duration_s"].get<double>(), 10.0);
  EXPECT_EQ(p["sample_rate_hz"], 4000);
}

TEST(CliSynth, RerunIsByteIdentical) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --seed 5 --duration 3 --out a").exit_code, 0);
  ASSERT_EQ(run_cli(dir.path(), "synth --seed 5 --duration 3 --out b").exit_code, 0);
  EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
}

TEST(CliSynth, UsageErrors) {
  oracle::TempDir dir("cli");
  EXPECT_EQ(run_cli(dir.path(), "synth --duration -1 --out x").exit_code, 2);
  EXPECT_EQ(run_cli(dir.path(), "synth --rr-mean 0.1 --out x").exit_code, 2);
  EXPECT_EQ(run_cli(dir.path(), "synth --no-heart --no-lung --out x").exit_code, 2);
  EXPECT_EQ(run_cli(dir.path(), "").exit_code, 2);
  EXPECT_EQ(run_cli(dir.path(), "frobnicate").exit_code, 2);
}

TEST(CliSeparate, WritesSourcesAndManifest) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --jitter-cv 0.3 --out demo").exit_code, 0);
  const auto r = run_cli(dir.path(), "separate demo/mixture.wav --rank 4 --seed 7 --out demo --save-model");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (const char* f : {"mixture.heart.wav", "mixture.lung.wav", "mixture.residual.wav", "mixture.manifest.json",
                        "mixture.model.json"}) {
    EXPECT_TRUE(fs::exists(dir / "demo" / f)) << f;
  }
  const json m = read_json(dir / "demo" / "mixture.manifest.json");
  EXPECT_EQ(m["config"]["nmf"]["rank"], 4);
  EXPECT_EQ(m["config"]["seed"], 7);
  EXPECT_EQ(m["sample_rate_hz"], 4000);
  EXPECT_EQ(m["components"].size(), 4u);
  const auto trace = m["nmf"]["divergence_trace"].get<std::vector<double>>();
  ASSERT_GE(trace.size(), 2u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] * (1.0 + 1e-12));
  std::size_t assigned = 0;
  for (const char* g : {"heart", "lung", "residual"}) assigned += m["groups"][g].size();
  EXPECT_EQ(assigned, 4u);
}

TEST(CliSeparate, ConfigFileAndFlagPrecedence) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --duration 3 --out demo").exit_code, 0);
  std::ofstream(dir / "cfg.json") << R"({"nmf": {"rank": 3, "max_iters": 50}, "seed": 11})";
  ASSERT_EQ(run_cli(dir.path(), "separate demo/mixture.wav --config cfg.json --rank 5 --out o").exit_code, 0);
  const json m = read_json(dir / "o" / "mixture.manifest.json");
  EXPECT_EQ(m["config"]["nmf"]["rank"], 5);
  EXPECT_EQ(m["config"]["nmf"]["max_iters"], 50);
  EXPECT_EQ(m["config"]["seed"], 11);

  std::ofstream(dir / "bad.json") << R"({"nmf": {"rnak": 3}})";
  const auto r = run_cli(dir.path(), "separate demo/mixture.wav --config bad.json --out o");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("InvalidConfig"), std::string::npos) << r.err;
}

TEST(CliSeparate, MissingInputIsRuntimeError) {
  oracle::TempDir dir("cli");
  const auto r = run_cli(dir.path(), "separate nope.wav --out o");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("FileNotFound"), std::string::npos) << r.err;
}

TEST(CliSeparate, CorruptInputIsRuntimeError) {
  oracle::TempDir dir("cli");
  std::ofstream(dir / "junk.wav") << "definitely not RIFF";
  const auto r = run_cli(dir.path(), "separate junk.wav --out o");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("UnsupportedFormat"), std::string::npos) << r.err;
}

TEST(CliAnalyze, IrregularRhythmFixtureIsAtrialFibrillation) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --rr-mean 0.8 --jitter-cv 0.3 --out demo").exit_code, 0);
  const auto r = run_cli(dir.path(), "analyze demo/mixture.wav --backend mock --out rep");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const json heart = read_json(dir / "rep" / "mixture.heart.report.json");
  EXPECT_EQ(heart["prediction"], "atrial fibrillation");
  EXPECT_EQ(heart["backend"], "mock");
  EXPECT_EQ(heart["source"], "heart");
  EXPECT_TRUE(fs::exists(dir / "rep" / "mixture.heart.features.csv"));
  const json features = read_json(dir / "rep" / "mixture.heart.features.json");
  EXPECT_GT(features["rr_cv"].get<double>(), 0.15);
  EXPECT_NE(r.out.find("heart: atrial fibrillation"), std::string::npos) << r.out;
}

TEST(CliAnalyze, WheezeFixtureIsWheezing) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --no-heart --lung-center 200 --lung-bandwidth 100 --out wz").exit_code, 0);
  const auto r = run_cli(dir.path(), "analyze wz/mixture.wav --out rep");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "rep" / "mixture.lung.report.json")["prediction"], "wheezing");
}

TEST(CliAnalyze, SeparatedInputsUseFileLabels) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --jitter-cv 0.3 --out demo").exit_code, 0);
  ASSERT_EQ(run_cli(dir.path(), "separate demo/mixture.wav --out sep").exit_code, 0);
  const auto r = run_cli(dir.path(), "analyze sep/mixture.heart.wav --separated --out rep");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "rep" / "mixture.heart.report.json")["prediction"], "atrial fibrillation");
  EXPECT_FALSE(fs::exists(dir / "rep" / "mixture.lung.report.json"));
  EXPECT_EQ(run_cli(dir.path(), "analyze demo/mixture.wav --separated --out rep").exit_code, 2);
}

TEST(CliAnalyze, UnreachableRemoteBackend) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --duration 3 --out demo").exit_code, 0);
  const auto r = run_cli(dir.path(),
                         "analyze demo/mixture.wav --backend remote --llm-url http://127.0.0.1:1/v1/complete "
                         "--timeout 2 --out rep");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("BackendUnreachable"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli(dir.path(), "analyze demo/mixture.wav --backend remote --out rep").exit_code, 2);
}

TEST(CliPlotData, WritesCsvAndSvg) {
  oracle::TempDir dir("cli");
  ASSERT_EQ(run_cli(dir.path(), "synth --duration 3 --out demo").exit_code, 0);
  ASSERT_EQ(run_cli(dir.path(), "separate demo/mixture.wav --out sep").exit_code, 0);
  const auto r = run_cli(dir.path(), "plot-data demo/mixture.wav --separated-dir sep --out plots");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (const char* f : {"mixture.waveform.csv", "mixture.spectrogram.csv", "mixture.svg", "mixture.figure.svg",
                        "mixture.heart.waveform.csv", "mixture.lung.spectrogram.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "plots" / f)) << f;
  }
  const std::string wave = oracle::read_file(dir / "plots" / "mixture.waveform.csv");
  EXPECT_EQ(wave.rfind("time_s,amplitude\n", 0), 0u);
  EXPECT_EQ(std::count(wave.begin(), wave.end(), '\n'), 1 + 3 * 4000);
  EXPECT_EQ(run_cli(dir.path(), "plot-data missing.wav --out plots").exit_code, 1);
}

TEST(CliDeterminism, FullPipelineBytesStable) {
  oracle::TempDir first("cli");
  oracle::TempDir second("cli");
  const std::string env = "SOURCE_DATE_EPOCH=1700000000";
  for (const oracle::TempDir* dir : {&first, &second}) {
    ASSERT_EQ(run_cli(dir->path(), "synth --jitter-cv 0.3 --out run", env).exit_code, 0);
    ASSERT_EQ(run_cli(dir->path(), "separate run/mixture.wav --save-model --out run", env).exit_code, 0);
    ASSERT_EQ(run_cli(dir->path(), "analyze run/mixture.wav --out run/rep", env).exit_code, 0);
    ASSERT_EQ(run_cli(dir->path(), "plot-data run/mixture.wav --separated-dir run --out run/plots", env).exit_code, 0);
  }
  const auto a = snapshot(first / "run");
  const auto b = snapshot(second / "run");
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, bytes] : a) EXPECT_TRUE(bytes == b.at(name)) << name;
  EXPECT_NE(a.at("mixture.manifest.json").find("2023-11-14T22:13:20Z"), std::string::npos);
}
