#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mmch/field_io.hpp"
#include "mmch/grid.hpp"

namespace fs = std::filesystem;
using namespace mmch;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mmch_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Result run(const std::string& args, const fs::path& dir) {
  const auto log = dir / "stdout.txt";
  const std::string cmd = std::string(MMCH_BIN) + " " + args + " > " + log.string() + " 2> " +
                          (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string config(const std::string& name) { return std::string(MMCH_CONFIGS) + "/" + name; }

}  // namespace

TEST(Cli, W2PrintsScientificDistance) {
  const auto dir = scratch("w2");
  const auto g = GridSpec::line(1000, -2.0, 4.0);
  std::vector<double> a(g.size(), 0.0), b(g.size(), 0.0);
  // unit-mass boxes on [-0.5, 0.5) and [-0.2, 0.8), 75 cells apart
  for (int k = 375; k < 625; ++k) a[k] = 1.0;
  for (int k = 450; k < 700; ++k) b[k] = 1.0;
  write_field((dir / "a.fld").string(), ScalarField(g, a));
  write_field((dir / "b.fld").string(), ScalarField(g, b));
  auto r = run("w2 " + (dir / "a.fld").string() + " " + (dir / "b.fld").string(), dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "3.000000e-1\n");
  r = run("w2 " + (dir / "a.fld").string() + " " + (dir / "a.fld").string(), dir);
  EXPECT_EQ(r.out, "0.000000e0\n");
  r = run("w2 " + (dir / "a.fld").string() + " " + (dir / "missing.fld").string(), dir);
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("codes");
  EXPECT_EQ(run("run", dir).code, 64);
  EXPECT_EQ(run("frobnicate", dir).code, 64);
  std::ofstream(dir / "bad.toml") << "shape = \"interval(0, 1)\"\nbogus = 3\n";
  EXPECT_EQ(run("run --config " + (dir / "bad.toml").string() + " --out " + dir.string(), dir).code, 2);
  std::ofstream(dir / "coarse.toml") << "shape = \"interval(0, 1)\"\nn = 32\neps = 0.01\n";
  EXPECT_EQ(run("initdata --config " + (dir / "coarse.toml").string() + " --out " + dir.string(), dir).code, 2);
  EXPECT_NE(slurp(dir / "stderr.txt").find("eps too small for grid"), std::string::npos);
}

TEST(Cli, InitdataReportsUnitMass) {
  const auto dir = scratch("init");
  const auto r = run("initdata --config " + config("interval_1d.toml") + " --out " + dir.string(), dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("mass=", 0), 0u);
  const auto u = read_scalar((dir / "u0.fld").string());
  EXPECT_NEAR(integrate(u), 1.0, 1e-12);
}

TEST(Cli, ConstantRunHasZeroLedgerAndIsDeterministic) {
  const auto a = scratch("const_a"), b = scratch("const_b");
  ASSERT_EQ(run("run --config " + config("constant_1d.toml") + " --out " + a.string(), a).code, 0);
  ASSERT_EQ(run("run --config " + config("constant_1d.toml") + " --out " + b.string(), b).code, 0);
  const auto ledger = slurp(a / "ledger.csv");
  EXPECT_EQ(ledger, slurp(b / "ledger.csv"));
  EXPECT_EQ(slurp(a / "u_00010.fld"), slurp(b / "u_00010.fld"));
  std::istringstream is(ledger);
  std::string line;
  std::getline(is, line);
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 10);
  const auto u = read_scalar((a / "u_00010.fld").string());
  for (double x : u.values()) EXPECT_EQ(x, 1.0);
}

TEST(Cli, DiagnoseWritesCsvs) {
  const auto dir = scratch("diag");
  std::ofstream(dir / "short.toml") << "shape = \"intervals(-0.3, 0.5, 0.3, 0.5)\"\nn = 256\neps = 0.06\n"
                                       "h = 1e-3\nn_steps = 3\n";
  ASSERT_EQ(run("run --config " + (dir / "short.toml").string() + " --out " + dir.string(), dir).code, 0);
  ASSERT_EQ(run("diagnose " + dir.string(), dir).code, 0);
  const auto d = slurp(dir / "diagnostics.csv");
  EXPECT_EQ(d.substr(0, d.find('\n')),
            "n,t,E,sigma_tv,gap,perimeter,perimeter_tv,equipartition_l2,equipartition_cross,stress_gap_max,"
            "weak_form_max,hele_shaw_max");
  EXPECT_TRUE(fs::exists(dir / "curves.csv"));
  EXPECT_NE(slurp(dir / "trajectory.csv").find("holder_modulus"), std::string::npos);
}
