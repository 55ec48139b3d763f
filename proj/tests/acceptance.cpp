// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmch/config.hpp"
#include "mmch/diagnostics.hpp"
#include "mmch/energy.hpp"
#include "mmch/grid.hpp"
#include "mmch/initdata.hpp"
#include "mmch/jko.hpp"
#include "mmch/test_fields.hpp"
#include "mmch/transport.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mmch;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("%s  %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

/// Runs `body`; an exception counts as a failure of criterion `id`.
void criterion(int id, const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [ok, detail] = body();
    report(id, name, ok, detail);
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::string config_path(const std::string& name) { return std::string(MMCH_CONFIGS) + "/" + name; }

struct ShippedRun {
  std::string name;
  RunConfig cfg;
  Trajectory tr;
  double seconds = 0.0;
};

ScalarField normalized(const GridSpec& g, std::vector<double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m *= g.cell_volume();
  for (double& x : v) x /= m;
  return {g, std::move(v)};
}

ScalarField gaussian_1d(const GridSpec& g, double c, double s) {
  std::vector<double> v(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double x = g.point(k)[0];
    v[k] = std::exp(-(x - c) * (x - c) / (2 * s * s)) + 1e-3;
  }
  return normalized(g, v);
}

double composite_simpson(const std::function<double(double)>& f, double a, double b, int m) {
  const double h = (b - a) / m;
  double s = f(a) + f(b);
  for (int k = 1; k < m; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

int main() {
  std::vector<ShippedRun> shipped;
  for (const char* name : {"constant_1d.toml", "interval_1d.toml", "two_bump_1d.toml", "disk_2d.toml"}) {
    ShippedRun r;
    r.name = name;
    r.cfg = load_run_config(config_path(name));
    const auto t0 = Clock::now();
    try {
      r.tr = run_trajectory(initial_density(r.cfg).u, r.cfg.jko);
    } catch (const std::exception& e) {
      std::printf("run %s failed: %s\n", name, e.what());
    }
    r.seconds = seconds_since(t0);
    std::printf("# %s: %zu steps in %.1f s\n", name, r.tr.steps(), r.seconds);
    std::fflush(stdout);
    shipped.push_back(std::move(r));
  }

  criterion(1, "dissipation ledger", [&] {
    bool ok = true;
    std::string d;
    for (const auto& r : shipped) {
      const bool complete = static_cast<int>(r.tr.steps()) == r.cfg.jko.n_steps;
      const double excess = complete ? ledger_worst_excess(r.tr) : INFINITY;
      const double tol = 1e-7 * std::max(1.0, r.tr.E0);
      const double limit = r.cfg.dim == 1 ? 10.0 : 600.0;
      ok = ok && complete && excess <= tol && r.seconds < limit;
      d += fmt("%s excess=%.2e tol=%.0e t=%.1fs; ", r.name.c_str(), excess, tol, r.seconds);
    }
    return std::pair{ok, d};
  });

  criterion(2, "mass and positivity", [&] {
    double worst_mass = 0.0, worst_min = INFINITY;
    for (const auto& r : shipped) {
      for (const auto& u : r.tr.iterates) {
        worst_mass = std::max(worst_mass, std::abs(integrate(u) - 1.0));
        for (double x : u.values()) worst_min = std::min(worst_min, x);
      }
    }
    return std::pair{worst_mass <= 1e-9 && worst_min >= 0.0,
                     fmt("max |mass-1|=%.2e, min value=%.3e", worst_mass, worst_min)};
  });

  criterion(3, "exact 1D transport", [&] {
    const auto t0 = Clock::now();
    const auto g = GridSpec::line(1000, -2.0, 4.0);
    const auto u = gaussian_1d(g, 0.1, 0.2);
    const double self = w2_exact_1d(u, u).distance;
    std::vector<double> a(g.size(), 0.0), b(g.size(), 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double x = g.point(k)[0];
      a[k] = std::abs(x) < 0.5 ? 1.0 : 0.0;
      b[k] = std::abs(x - 0.3) < 0.5 ? 1.0 : 0.0;
    }
    const double shift = w2_exact_1d(normalized(g, a), normalized(g, b)).distance;

    const auto g2 = GridSpec::line(1024, 0.0, 2.0);
    std::vector<double> ua(g2.size()), ub(g2.size(), 0.5);
    for (std::size_t k = 0; k < g2.size(); ++k) ua[k] = g2.point(k)[0] < 1.0 ? 1.0 : 0.0;
    const double dil = w2_exact_1d(ScalarField(g2, ua), ScalarField(g2, ub)).distance;
    const int n = 64;
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double x = (i + 0.5) / n, y = 2.0 * (j + 0.5) / n;
        cost[i][j] = (x - y) * (x - y);
      }
    }
    const double lp = std::sqrt(oracle::assignment_cost(cost) / n);

    const auto g3 = GridSpec::line(128, 0.0, 1.0);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    auto random_density = [&] {
      std::vector<double> v(g3.size());
      for (auto& x : v) x = U(rng) * U(rng);
      return normalized(g3, v);
    };
    double worst_tri = -INFINITY;
    for (int t = 0; t < 100; ++t) {
      const auto p = random_density(), q = random_density(), r = random_density();
      worst_tri = std::max(worst_tri, w2_exact_1d(p, r).distance -
                                          w2_exact_1d(p, q).distance - w2_exact_1d(q, r).distance);
    }
    const double secs = seconds_since(t0);
    const bool ok = self == 0.0 && std::abs(shift - 0.3) <= 1e-6 && std::abs(dil - 1.0 / std::sqrt(3.0)) <= 1e-4 &&
                    std::abs(dil - lp) <= 1e-4 && worst_tri <= 1e-12 && secs < 5.0;
    return std::pair{ok, fmt("self=%.1e shift=%.9f dilation=%.6f lp=%.6f 1/sqrt3=%.6f triangle=%.1e t=%.2fs", self,
                             shift, dil, lp, 1.0 / std::sqrt(3.0), worst_tri, secs)};
  });

  criterion(4, "debiased Sinkhorn", [&] {
    const auto t0 = Clock::now();
    const int n = 128;
    const auto g2 = GridSpec::square(n, 0.0, 1.0);
    const auto g1 = GridSpec::line(n, 0.0, 1.0);
    const double pairs[5][8] = {
        {0.4, 0.08, 0.5, 0.12, 0.55, 0.1, 0.45, 0.07}, {0.5, 0.1, 0.5, 0.1, 0.5, 0.1, 0.5, 0.1},
        {0.3, 0.06, 0.6, 0.09, 0.7, 0.06, 0.4, 0.09},  {0.5, 0.15, 0.5, 0.05, 0.5, 0.05, 0.5, 0.15},
        {0.35, 0.1, 0.35, 0.1, 0.62, 0.12, 0.58, 0.08}};
    double worst = 0.0;
    std::string d;
    for (const auto& p : pairs) {
      const auto a0 = gaussian_1d(g1, p[0], p[1]), a1 = gaussian_1d(g1, p[2], p[3]);
      const auto b0 = gaussian_1d(g1, p[4], p[5]), b1 = gaussian_1d(g1, p[6], p[7]);
      std::vector<double> u(g2.size()), v(g2.size());
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          u[g2.index(i, j)] = a0[i] * a1[j];
          v[g2.index(i, j)] = b0[i] * b1[j];
        }
      }
      const double exact = std::sqrt(w2_exact_1d(a0, b0).distance2 + w2_exact_1d(a1, b1).distance2);
      const auto res = sinkhorn(ScalarField(g2, u), ScalarField(g2, v), 2.0 * g2.dx() * g2.dx());
      const double rel = exact > 0 ? std::abs(res.distance - exact) / exact : std::abs(res.distance);
      // identical pair: the debiased distance itself must vanish to 1% of a cell
      const double err = exact > 0 ? rel : res.distance / (0.01 * g2.dx());
      worst = std::max(worst, err);
      d += fmt("%.4f/%.4f ", res.distance, exact);
    }
    const double secs = seconds_since(t0);
    return std::pair{worst <= 0.01 && secs < 120.0, fmt("worst rel=%.2e t=%.1fs [%s]", worst, secs, d.c_str())};
  });

  criterion(5, "well-prepared energy", [&] {
    const auto t0 = Clock::now();
    const double sigma = composite_simpson([](double s) { return std::sqrt(2.0 * w_eval(s)); }, 0.0, 1.0, 20000);
    const double sigma_ok = std::abs(sigma - std::numbers::sqrt2 / 12.0);
    const auto g1 = GridSpec::line(4096, -1.5, 3.0);
    const double e1 = energy(well_prepared(Shape::interval(0.0, 1.0), 0.01, g1).u, 0.01);
    const auto g2 = GridSpec::square(512, -1.5, 3.0);
    const double e2 =
        energy(well_prepared(Shape::disk(0.0, 0.0, 1.0 / std::sqrt(std::numbers::pi)), 0.02, g2).u, 0.02);
    const double t1 = 2.0 * sigma, t2 = 2.0 * std::sqrt(std::numbers::pi) * sigma;
    const double r1 = std::abs(e1 - t1) / t1, r2 = std::abs(e2 - t2) / t2;
    const double secs = seconds_since(t0);
    return std::pair{sigma_ok <= 1e-10 && r1 <= 0.02 && r2 <= 0.05 && secs < 60.0,
                     fmt("sigma err=%.1e; 1D E=%.6f target=%.6f rel=%.2e; 2D E=%.6f target=%.6f rel=%.2e; t=%.1fs",
                         sigma_ok, e1, t1, r1, e2, t2, r2, secs)};
  });

  criterion(6, "Euler-Lagrange consistency", [&] {
    JKOConfig cfg;
    cfg.grid = GridSpec::line(8192, -1.5, 3.0);
    cfg.eps = 0.04;
    cfg.h = 1e-3;
    auto u = well_prepared(parse_shape("intervals(-0.3,0.5,0.3,0.5)"), cfg.eps, cfg.grid).u;
    const auto basket = xi_basket(1, {-1.0, 1.0, 0.0, 0.0}, 0.15, 0.4);
    double worst = 0.0, slowest = 0.0;
    for (int step = 0; step < 5; ++step) {
      const auto t0 = Clock::now();
      auto s = jko_step(u, cfg);
      for (const auto& b : basket) {
        worst = std::max(worst, std::abs(weak_form_residual(s.u, s.flux, cfg.eps, b.sample(cfg.grid))));
      }
      slowest = std::max(slowest, seconds_since(t0));
      u = std::move(s.u);
    }
    // first variation against d/dt E((id + t xi)_# u) of an analytic profile
    const double eps = 0.05, w = 1.5 * eps * 2.0 * std::numbers::sqrt2;
    const auto g = GridSpec::line(4096, -1.5, 3.0);
    auto prof = [&](double x) { return 0.5 * (std::tanh((x + 0.5) / w) - std::tanh((x - 0.5) / w)); };
    auto xi = [](double x) { return 0.8 * std::exp(-(x - 0.45) * (x - 0.45) / (2 * 0.2 * 0.2)); };
    auto dxi = [&](double x) { return -(x - 0.45) / (0.2 * 0.2) * xi(x); };
    auto pushed = [&](double t) {
      return ScalarField::sample(g, [&](double y) {
        double x = y;
        for (int it = 0; it < 50; ++it) x -= (x + t * xi(x) - y) / (1.0 + t * dxi(x));
        return prof(x) / (1.0 + t * dxi(x));
      });
    };
    const double t = 1e-4;
    const double fd = (energy(pushed(t), eps) - energy(pushed(-t), eps)) / (2 * t);
    std::vector<double> xv(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) xv[k] = xi(g.point(k)[0]);
    const double fv = energy_first_variation(pushed(0.0), eps, VectorField(g, xv));
    const double rel = std::abs(fv - fd) / std::abs(fd);
    return std::pair{worst <= 10 * cfg.inner_tol && rel <= 1e-3 && slowest < 30.0,
                     fmt("max residual=%.2e (limit %.0e) over 5 steps, slowest step %.1fs; first variation rel=%.2e",
                         worst, 10 * cfg.inner_tol, slowest, rel)};
  });

  criterion(7, "Hoelder-1/2 modulus", [&] {
    const auto& r = shipped[1];
    const double m = holder_modulus(r.tr), bound = std::sqrt(r.tr.E0) * 1.05;
    return std::pair{m <= bound, fmt("modulus=%.3e bound=%.3e (%s)", m, bound, r.name.c_str())};
  });

  criterion(8, "refined dissipation", [&] {
    bool ok = true;
    std::string d;
    for (const auto& r : shipped) {
      const auto t0 = Clock::now();
      const auto rd = refined_dissipation(r.tr, r.cfg.jko, r.cfg.dim == 1 ? 4 : 2);
      double cost = 0.0;
      for (const auto& row : r.tr.ledger) cost += row.cost;
      const double drop = r.tr.E0 - (r.tr.steps() ? r.tr.ledger.back().E : r.tr.E0);
      ok = ok && rd.total <= drop + 1e-6 && rd.total >= cost - 1e-6;
      d += fmt("%s %.4e<=%.4e<=%.4e (%.0fs); ", r.name.c_str(), cost, rd.total, drop, seconds_since(t0));
    }
    return std::pair{ok, d};
  });

  criterion(9, "equipartition", [&] {
    const std::vector<double> eps{0.04, 0.02, 0.01};
    SweepConfig sc;
    sc.box_origin = -1.5;
    sc.box_length = 3.0;
    sc.base.h = 1e-3;
    sc.base.n_steps = 20;
    const auto r1 = eps_sweep(Shape::interval(0.0, 1.0), eps, sc);
    sc.base.n_steps = 0;
    const auto r2 = eps_sweep(Shape::disk(0.0, 0.0, 1.0 / std::sqrt(std::numbers::pi)), eps, sc);
    bool mono = true;
    for (std::size_t k = 1; k < eps.size(); ++k) {
      mono = mono && r1.rows[k].equipartition_l2 < r1.rows[k - 1].equipartition_l2 &&
             r2.rows[k].equipartition_l2 < r2.rows[k - 1].equipartition_l2;
    }
    const auto& fine = r2.rows.back();
    const bool small = fine.equipartition_l2 <= 1e-3 * fine.final_energy;
    return std::pair{mono && small,
                     fmt("1D final iterates %.3e %.3e %.3e; 2D well-prepared %.3e %.3e %.3e; finest/E=%.2e",
                         r1.rows[0].equipartition_l2, r1.rows[1].equipartition_l2, r1.rows[2].equipartition_l2,
                         r2.rows[0].equipartition_l2, r2.rows[1].equipartition_l2, r2.rows[2].equipartition_l2,
                         fine.equipartition_l2 / fine.final_energy)};
  });

  criterion(10, "sharp-interface energy gap", [&] {
    const auto c = load_run_config(config_path("sweep_disk_2d.toml"));
    const auto rep = eps_sweep(c.parsed_shape(), c.eps_list, c.sweep_config(1));
    bool shrinks = true;
    std::string d;
    for (std::size_t k = 0; k < rep.rows.size(); ++k) {
      d += fmt("eps=%.2f n=%d gap=%.3e", rep.rows[k].eps, rep.rows[k].n, rep.rows[k].final_gap);
      if (k) {
        const double ratio = rep.rows[k - 1].final_gap / rep.rows[k].final_gap;
        shrinks = shrinks && ratio >= 1.5;
        d += fmt(" (x%.2f)", ratio);
      }
      d += "; ";
    }
    // Modica-Mortola bound on every iterate of every run made here
    double worst = -INFINITY;
    for (const auto& r : shipped) {
      for (const auto& u : r.tr.iterates) worst = std::max(worst, phase_indicator_tv(u) - energy(u, r.cfg.jko.eps));
    }
    for (const auto& row : rep.rows) worst = std::max(worst, row.final_sigma_tv - row.final_energy);
    d += fmt("max(sigma TV - E)=%.2e", worst);
    return std::pair{shrinks && worst <= 1e-9, d};
  });

  criterion(11, "Hele-Shaw residual", [&] {
    const auto g = GridSpec::square(256, -1.5, 3.0);
    const auto u = well_prepared(Shape::disk(0.0, 0.0, 1.0 / std::sqrt(std::numbers::pi)), 0.06, g).u;
    const auto curves = extract_interface(u);
    const auto zero_j = VectorField::zero(g);
    const double rot = hele_shaw_residual(curves, zero_j, AnalyticField::from(RotationField{{0.0, 0.0}, 0.4}));
    const AnalyticField zero{[](Point) { return Point{0.0, 0.0}; },
                             [](Point) { return std::array<std::array<double, 2>, 2>{}; }};
    const double z = hele_shaw_residual(curves, zero_j, zero);
    InterfaceCurve ell;
    ell.closed = true;
    const int m = 64;
    for (int k = 0; k <= m; ++k) {
      const double t = 2 * std::numbers::pi * (k % m) / m;
      ell.vertices.push_back({0.1 + 0.7 * std::cos(t), -0.05 + 0.45 * std::sin(t)});
    }
    for (int k = 0; k < m; ++k) {
      const auto p = ell.vertices[k], q = ell.vertices[k + 1];
      const double l = std::hypot(q[0] - p[0], q[1] - p[1]);
      ell.normals.push_back({(q[1] - p[1]) / l, -(q[0] - p[0]) / l});
    }
    double worst = 0.0;
    for (const auto& sb : stream_basket({-0.8, 0.8, -0.5, 0.5}, 0.15, 0.4)) {
      const double ref = oracle::tangential_divergence(ell.vertices, sb);
      const double got = hele_shaw_boundary_term({ell}, AnalyticField::from(sb));
      worst = std::max(worst, std::abs(got - ref) / std::max(std::abs(ref), 1e-3));
    }
    return std::pair{rot <= 1e-6 && z <= 1e-6 && worst <= 1e-4,
                     fmt("rotation=%.2e zero=%.2e polygon rel=%.2e", rot, z, worst)};
  });

  // shared by 12 and 13: two-bump merger at h0 / 2^k
  const auto merger = load_run_config(config_path("two_bump_1d.toml"));
  const double T = merger.jko.h * merger.jko.n_steps;
  const auto u0 = initial_density(merger).u;
  std::vector<Trajectory> levels;
  for (int k = 0; k < 5; ++k) {
    JKOConfig cfg = merger.jko;
    cfg.h = merger.jko.h / (1 << k);
    cfg.n_steps = merger.jko.n_steps << k;
    try {
      levels.push_back(run_trajectory(u0, cfg));
    } catch (const std::exception& e) {
      std::printf("# refinement level %d failed: %s\n", k, e.what());
      break;
    }
  }

  criterion(12, "continuity residual", [&] {
    if (levels.size() < 4) throw std::runtime_error("missing refinement levels");
    const auto basket = zeta_basket(1, {-0.8, 0.8, 0.0, 0.0}, 0.15, 0.4, T);
    std::vector<double> res;
    bool bounded = true;
    for (std::size_t k = 0; k < 4; ++k) {
      double mx = 0.0;
      for (const auto& z : basket) {
        const double r = continuity_residual(levels[k], z);
        bounded = bounded && r <= 1.5 * z.hess_sup() * levels[k].cfg.h * levels[k].E0;
        mx = std::max(mx, r);
      }
      res.push_back(mx);
    }
    bool halves = true;
    std::string d = fmt("basket max %.3e", res[0]);
    for (std::size_t k = 1; k < res.size(); ++k) {
      const double ratio = res[k] / res[k - 1];
      halves = halves && ratio >= 0.4 && ratio <= 0.6;
      d += fmt(" -> %.3e (%.3f)", res[k], ratio);
    }
    return std::pair{bounded && halves, d + (bounded ? "; within 1.5|D2 zeta| h E0" : "; bound violated")};
  });

  criterion(13, "time-refinement consistency", [&] {
    if (levels.size() < 5) throw std::runtime_error("missing refinement levels");
    std::vector<double> diff;
    for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
      diff.push_back(w2_exact_1d(levels[k].iterates.back(), levels[k + 1].iterates.back()).distance);
    }
    bool ok = true;
    std::string d = fmt("W2 diffs %.3e", diff[0]);
    for (std::size_t k = 1; k < diff.size(); ++k) {
      const double ratio = diff[k] / diff[k - 1];
      ok = ok && ratio >= 0.3 && ratio <= 0.8;
      d += fmt(" -> %.3e (%.3f)", diff[k], ratio);
    }
    return std::pair{ok, d};
  });

  criterion(14, "determinism", [&] {
    const auto root = fs::temp_directory_path() / "mmch_acceptance_determinism";
    fs::remove_all(root);
    bool ok = true;
    std::string d;
    for (const char* name : {"constant_1d.toml", "two_bump_1d.toml"}) {
      std::vector<std::map<std::string, std::string>> csvs;
      for (int rep = 0; rep < 2; ++rep) {
        const auto out = root / (std::string(name) + "_" + std::to_string(rep));
        const int code = shell(std::string(MMCH_BIN) + " run --config " + config_path(name) + " --out " +
                               out.string() + " --seed 7 > /dev/null 2>&1");
        if (code != 0) throw std::runtime_error(fmt("run %s exited %d", name, code));
        std::map<std::string, std::string> files;
        for (const auto& e : fs::directory_iterator(out)) {
          if (e.path().extension() == ".csv") files[e.path().filename().string()] = slurp(e.path());
        }
        csvs.push_back(std::move(files));
      }
      const bool same = !csvs[0].empty() && csvs[0] == csvs[1];
      ok = ok && same;
      d += fmt("%s %zu CSVs %s; ", name, csvs[0].size(), same ? "identical" : "differ");
    }
    fs::remove_all(root);
    return std::pair{ok, d};
  });

  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
