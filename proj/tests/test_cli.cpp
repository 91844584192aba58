#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "sysrisk/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

fs::path workdir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "sysrisk_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

Run run(const std::string& args, const std::string& env = {}) {
  const fs::path err = workdir() / "stderr.txt";
  const std::string cmd = (env.empty() ? "" : env + " ") + std::string(SYSRISK_CLI_PATH) + " " + args + " 2>" +
                          err.string();
  Run r{};
  FILE* pipe = popen(cmd.c_str(), "r");
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = sysrisk::io::read_text(err);
  return r;
}

fs::path write(const std::string& name, const std::string& text) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << text;
  return p;
}

std::string small_study_config() {
  return R"({"kind": "corr_X", "values": [0.0, 0.3], "beta": 0.9, "N": 1500, "seed": 4,
             "grid_step": 0.25, "epsilon": 1e-4})";
}

}  // namespace

TEST(Cli, ClearExample) {
  const auto r = run("clear --config " + std::string(SYSRISK_CONFIG_DIR) + "/clear_example.json --x 0.1,1.0");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_NEAR(j["p"][0].get<double>(), 0.7, 1e-12);
  EXPECT_NEAR(j["p"][1].get<double>(), 0.8, 1e-12);
  EXPECT_NEAR(j["aggregate"].get<double>(), 0.175, 1e-12);
  EXPECT_EQ(j["defaulting_set"], json::array({1}));
  const auto p = run("clear --config " + std::string(SYSRISK_CONFIG_DIR) + "/clear_example.json --x 0.1,1.0 --engine picard");
  EXPECT_NEAR(json::parse(p.out)["p"][0].get<double>(), 0.7, 1e-12);
}

TEST(Cli, RiskFromCsv) {
  const auto f = write("samples.csv", "value\n-1\n0\n1\n2\n");
  const auto es = run("risk --samples " + f.string() + " --kind ES --alpha 0.5");
  ASSERT_EQ(es.code, 0) << es.err;
  EXPECT_DOUBLE_EQ(std::stod(es.out), 0.5);
  const auto var = run("risk --samples " + f.string() + " --kind VaR --alpha 0.25");
  EXPECT_DOUBLE_EQ(std::stod(var.out), 0.0);
}

TEST(Cli, ErrorsAreMachineReadable) {
  const auto unknown = run("clear --bogus 1");
  EXPECT_NE(unknown.code, 0);
  EXPECT_EQ(json::parse(unknown.err)["error"]["kind"], "usage_error");
  const auto bad = write("bad.json", "{ not json");
  const auto malformed = run("simulate --config " + bad.string());
  EXPECT_NE(malformed.code, 0);
  EXPECT_EQ(json::parse(malformed.err)["error"]["kind"], "validation_error");
  const auto missing = run("simulate --config /nonexistent/config.json");
  EXPECT_NE(missing.code, 0);
  EXPECT_EQ(json::parse(missing.err)["error"]["kind"], "io_error");
  const auto no_sub = run("");
  EXPECT_NE(no_sub.code, 0);
}

TEST(Cli, SimulateWritesScenarioCsv) {
  const auto cfg = write("market.json", R"({"base": {"d": 2}, "N": 20, "seed": 3})");
  const fs::path out = workdir() / "sim";
  const auto r = run("simulate --config " + cfg.string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = sysrisk::io::read_text(out / "X_T.csv");
  EXPECT_NE(text.find("scenario,asset_1,asset_2\n"), std::string::npos);
  EXPECT_EQ(json::parse(r.out)["seed"], 3);
}

TEST(Cli, StudyIsDeterministicAndHonoursSeedOverrides) {
  const auto cfg = write("study.json", small_study_config());
  const fs::path a = workdir() / "study_a";
  const fs::path b = workdir() / "study_b";
  ASSERT_EQ(run("study --config " + cfg.string() + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("study --config " + cfg.string() + " --out " + b.string()).code, 0);
  for (const auto& e : fs::directory_iterator(a))
    EXPECT_EQ(sysrisk::io::read_text(e.path()), sysrisk::io::read_text(b / e.path().filename()))
        << e.path().filename();
  EXPECT_TRUE(fs::exists(a / "boundary_rho_X=0.3.csv"));

  const fs::path c = workdir() / "study_c";
  ASSERT_EQ(run("study --config " + cfg.string() + " --seed 11 --out " + c.string()).code, 0);
  EXPECT_EQ(json::parse(sysrisk::io::read_text(c / "manifest.json"))["config"]["seed"], 11);
  const fs::path e = workdir() / "study_e";
  ASSERT_EQ(run("study --config " + cfg.string() + " --seed 11 --out " + e.string(), "SYSRISK_SEED=12").code, 0);
  EXPECT_EQ(json::parse(sysrisk::io::read_text(e / "manifest.json"))["config"]["seed"], 12);
}
