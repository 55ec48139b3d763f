// mmch: batch front-end for JKO Cahn-Hilliard runs and their diagnostics.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mmch/config.hpp"
#include "mmch/diagnostics.hpp"
#include "mmch/energy.hpp"
#include "mmch/error.hpp"
#include "mmch/field_io.hpp"
#include "mmch/jko.hpp"
#include "mmch/test_fields.hpp"
#include "mmch/transport.hpp"

namespace fs = std::filesystem;
using namespace mmch;

namespace {

enum Exit : int {
  kOk = 0,
  kParameter = 2,
  kDomain = 3,
  kConvergence = 4,
  kIo = 5,
  kSweepGap = 6,
  kUsage = 64,
  kInternal = 70,
};

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0   success\n"
    "  2   invalid configuration or parameter (e.g. \"eps too small for grid\")\n"
    "  3   malformed input data (FLD1 file, non-density field)\n"
    "  4   inner solver failure or dissipation ledger violation (names the step)\n"
    "  5   file system error\n"
    "  6   sweep gap E - sigma*TV not strictly decreasing in eps\n"
    "  64  command-line usage error\n"
    "  70  internal error";

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SweepGapError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> reg;
  std::optional<std::string> profile;
};

RunConfig load(const Overrides& o) {
  if (o.config.empty()) throw ParameterError("--config is required");
  auto c = load_run_config(o.config);
  if (o.out) c.out = *o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.reg) {
    if (!(*o.reg >= 0.0)) throw ParameterError("--reg must be nonnegative");
    c.jko.ot_reg = *o.reg;
  }
  if (o.profile) c.profile = parse_profile_scale(*o.profile);
  return c;
}

int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("JKO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ParameterError("JKO_THREADS must be a positive integer");
    n = std::min<long>(n, v);
  }
  return n;
}

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// 1.000000e-1 style: six decimals, exponent without sign padding.
std::string sci(double x) {
  if (x == 0.0) return "0.000000e0";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6e", x);
  std::string s = buf;
  const auto e = s.find('e');
  const int ex = std::stoi(s.substr(e + 1));
  return s.substr(0, e) + "e" + std::to_string(ex);
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << s;
  if (!os) throw IoError("write failed: " + p.string());
}

std::string step_name(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu.fld", prefix, n);
  return buf;
}

std::string ledger_header() { return "n,t,E,cost,M2,entropy,inner_iters,stationarity\n"; }

std::string ledger_line(const LedgerRow& r) {
  return std::to_string(r.n) + "," + g17(r.t) + "," + g17(r.E) + "," + g17(r.cost) + "," + g17(r.M2) + "," +
         g17(r.entropy) + "," + std::to_string(r.inner_iters) + "," + g17(r.stationarity) + "\n";
}

void write_trajectory(const fs::path& dir, const RunConfig& c, const Trajectory& tr) {
  ensure_dir(dir);
  write_text(dir / "config.toml", to_toml(c));
  for (std::size_t n = 0; n < tr.iterates.size(); ++n) write_field((dir / step_name("u", n)).string(), tr.iterates[n]);
  for (std::size_t n = 0; n < tr.fluxes.size(); ++n) write_field((dir / step_name("j", n + 1)).string(), tr.fluxes[n]);
  std::string ledger = ledger_header();
  for (const auto& r : tr.ledger) ledger += ledger_line(r);
  write_text(dir / "ledger.csv", ledger);
  std::string summary = "E0,M2_0,moment_constant,ledger_worst_excess\n";
  summary += g17(tr.E0) + "," + g17(tr.M2_0) + "," + g17(tr.moment_constant) + "," +
             g17(tr.steps() ? ledger_worst_excess(tr) : 0.0) + "\n";
  write_text(dir / "summary.csv", summary);
}

int cmd_initdata(const Overrides& o) {
  const auto c = load(o);
  const auto wp = initial_density(c);
  const fs::path dir = c.out;
  ensure_dir(dir);
  write_field((dir / "u0.fld").string(), wp.u);
  std::printf("mass=%.17g E=%.17g M2=%.17g a=%.17g\n", integrate(wp.u), energy(wp.u, c.jko.eps),
              second_moment(wp.u), wp.a);
  return kOk;
}

int cmd_run(const Overrides& o) {
  const auto c = load(o);
  const auto wp = initial_density(c);
  const auto tr = run_trajectory(wp.u, c.jko, [](const LedgerRow& r) {
    std::fprintf(stderr, "step %d E=%.10g cost=%.3e iters=%d\n", r.n, r.E, r.cost, r.inner_iters);
  });
  write_trajectory(c.out, c, tr);
  return kOk;
}

int cmd_sweep(const Overrides& o) {
  const auto c = load(o);
  if (c.initial != InitialKind::WellPrepared) throw ParameterError("sweep needs well-prepared data");
  if (c.eps_list.empty()) throw ParameterError("sweep needs 'eps_list'");
  const fs::path dir = c.out;
  ensure_dir(dir);
  auto sc = c.sweep_config(worker_threads());
  std::mutex io;
  sc.on_trajectory = [&](const SweepRow& row, const Trajectory& tr) {
    RunConfig rc = c;
    rc.jko = tr.cfg;
    rc.n = row.n;
    rc.eps_list.clear();
    const std::lock_guard<std::mutex> lock(io);
    write_trajectory(dir / ("eps_" + g17(row.eps)), rc, tr);
  };
  const auto rep = eps_sweep(c.parsed_shape(), c.eps_list, sc);
  write_text(dir / "sweep.csv", rep.csv());
  if (!rep.gap_monotone()) throw SweepGapError("gap E - sigma*TV does not shrink across the sweep");
  return kOk;
}

std::vector<fs::path> numbered(const fs::path& dir, const char* prefix) {
  std::vector<fs::path> out;
  for (std::size_t n = 0;; ++n) {
    const auto p = dir / step_name(prefix, n);
    if (!fs::exists(p)) {
      if (n == 0 && std::string(prefix) == "j") continue;  // fluxes start at 1
      break;
    }
    out.push_back(p);
  }
  return out;
}

int cmd_diagnose(const std::string& dir_arg, const Overrides& o) {
  const fs::path dir = dir_arg;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  Overrides oo = o;
  oo.config = (dir / "config.toml").string();
  if (!fs::exists(oo.config)) throw IoError("missing " + oo.config);
  oo.out.reset();
  const auto c = load(oo);
  const fs::path out = o.out ? fs::path(*o.out) : dir;
  ensure_dir(out);

  Trajectory tr;
  tr.cfg = c.jko;
  for (const auto& p : numbered(dir, "u")) tr.iterates.push_back(read_scalar(p.string()));
  for (const auto& p : numbered(dir, "j")) tr.fluxes.push_back(read_vector(p.string()));
  if (tr.iterates.empty()) throw DomainError("no iterates in " + dir.string());
  if (tr.fluxes.size() + 1 != tr.iterates.size()) throw DomainError("iterate and flux counts disagree");
  const auto& g = c.jko.grid;
  for (const auto& u : tr.iterates) {
    if (!(u.grid() == g)) throw DomainError("iterate grid differs from config.toml");
  }
  const double eps = c.jko.eps, h = c.jko.h;
  tr.E0 = energy(tr.iterates[0], eps);
  for (std::size_t n = 1; n < tr.iterates.size(); ++n) {
    LedgerRow r;
    r.n = static_cast<int>(n);
    r.t = n * h;
    r.E = energy(tr.iterates[n], eps);
    tr.ledger.push_back(r);
  }

  const double lo = g.origin[0] + 0.25 * g.length[0], hi = g.origin[0] + 0.75 * g.length[0];
  const Region region{lo, hi, g.dim == 2 ? g.origin[1] + 0.25 * g.length[1] : 0.0,
                      g.dim == 2 ? g.origin[1] + 0.75 * g.length[1] : 0.0};
  const double wlo = 0.05 * g.length[0], whi = 0.13 * g.length[0];
  std::vector<VectorField> xis;
  for (const auto& b : xi_basket(g.dim, region, wlo, whi, c.seed)) xis.push_back(b.sample(g));
  const auto streams = g.dim == 2 ? stream_basket(region, wlo, whi, c.seed + 1) : std::vector<StreamBump>{};

  std::string diag =
      "n,t,E,sigma_tv,gap,perimeter,perimeter_tv,equipartition_l2,equipartition_cross,stress_gap_max,"
      "weak_form_max,hele_shaw_max\n";
  std::string curves_csv = "n,curve,vertex,x,y\n";
  for (std::size_t n = 0; n < tr.iterates.size(); ++n) {
    const auto& u = tr.iterates[n];
    const double E = energy(u, eps), stv = phase_indicator_tv(u);
    const auto curves = extract_interface(u);
    const auto eq = equipartition_deficit(u, eps);
    double stress = 0.0, weak = 0.0, hs = std::nan("");
    for (const auto& xi : xis) stress = std::max(stress, stress_limit_gap(u, eps, xi));
    if (n > 0) {
      for (const auto& xi : xis) weak = std::max(weak, std::abs(weak_form_residual(u, tr.fluxes[n - 1], eps, xi)));
      if (g.dim == 2) {
        hs = 0.0;
        for (const auto& sb : streams) {
          hs = std::max(hs, hele_shaw_residual(curves, tr.fluxes[n - 1], AnalyticField::from(sb)));
        }
      }
    }
    diag += std::to_string(n) + "," + g17(n * h) + "," + g17(E) + "," + g17(stv) + "," + g17(E - stv) + "," +
            g17(perimeter(curves)) + "," + g17(perimeter_tv(u)) + "," + g17(eq.deficit_l2) + "," +
            g17(eq.deficit_cross) + "," + g17(stress) + "," + (n > 0 ? g17(weak) : std::string("nan")) + "," +
            g17(hs) + "\n";
    for (std::size_t k = 0; k < curves.size(); ++k) {
      for (std::size_t v = 0; v < curves[k].vertices.size(); ++v) {
        const auto p = curves[k].vertices[v];
        curves_csv += std::to_string(n) + "," + std::to_string(k) + "," + std::to_string(v) + "," + g17(p[0]) +
                      "," + g17(g.dim == 2 ? p[1] : 0.0) + "\n";
      }
    }
  }
  write_text(out / "diagnostics.csv", diag);
  write_text(out / "curves.csv", curves_csv);

  std::string traj = "quantity,value\n";
  traj += "E0," + g17(tr.E0) + "\n";
  if (tr.steps() >= 2) traj += "holder_modulus," + g17(holder_modulus(tr)) + "\n";
  if (tr.steps() >= 1) {
    const double T = tr.steps() * h;
    double worst = 0.0, bound = 0.0;
    for (const auto& z : zeta_basket(g.dim, region, wlo, whi, T, c.seed + 2)) {
      worst = std::max(worst, continuity_residual(tr, z));
      bound = std::max(bound, 1.5 * z.hess_sup() * h * tr.E0);
    }
    traj += "continuity_residual_max," + g17(worst) + "\n";
    traj += "continuity_bound," + g17(bound) + "\n";
  }
  write_text(out / "trajectory.csv", traj);
  return kOk;
}

int cmd_w2(const std::string& a, const std::string& b, const Overrides& o) {
  const auto u = read_scalar(a), v = read_scalar(b);
  if (!(u.grid() == v.grid())) throw DomainError("fields live on different grids");
  require_density(u, 1e-9);
  require_density(v, 1e-9);
  const auto r = w2(u, v, o.reg.value_or(0.0));
  std::printf("%s\n", sci(r.distance).c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"JKO Cahn-Hilliard toolkit with mobility m(u) = u"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&](CLI::App* sub, bool config) {
    if (config) sub->add_option("--config", o.config, "flat TOML run configuration")->required();
    sub->add_option("--out", o.out, "output directory (overrides 'out')");
    sub->add_option("--seed", o.seed, "seed for the test-function baskets (overrides 'seed')");
    sub->add_option("--reg", o.reg, "entropic regularization (overrides 'ot_reg'; 0 selects 2 dx^2)");
    sub->add_option("--profile-scale", o.profile, "well-prepared profile scaling")
        ->check(CLI::IsMember({"paper", "sqrt2"}));
  };
  auto* initdata = app.add_subcommand("initdata", "write well-prepared initial data u0.fld");
  add_common(initdata, true);
  auto* run = app.add_subcommand("run", "run a trajectory: u_*.fld, j_*.fld, ledger.csv");
  add_common(run, true);
  auto* sweep = app.add_subcommand("sweep", "epsilon sweep: sweep.csv and one directory per eps");
  add_common(sweep, true);
  std::string dir;
  auto* diagnose = app.add_subcommand("diagnose", "diagnostics CSVs for a trajectory directory");
  diagnose->add_option("dir", dir, "trajectory directory written by 'run'")->required();
  add_common(diagnose, false);
  std::string fa, fb;
  auto* w2cmd = app.add_subcommand("w2", "Wasserstein-2 distance between two scalar FLD1 fields");
  w2cmd->add_option("a", fa)->required();
  w2cmd->add_option("b", fb)->required();
  add_common(w2cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*initdata) return cmd_initdata(o);
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    if (*diagnose) return cmd_diagnose(dir, o);
    if (*w2cmd) return cmd_w2(fa, fb, o);
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kParameter;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDomain;
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConvergence;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const SweepGapError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kSweepGap;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kUsage;
}
