#pragma once

// Minimizing-movement (JKO) steps for E_eps with the quadratic Wasserstein
// penalty, trajectories, De Giorgi interpolants and the dissipation ledger.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "mmch/energy.hpp"
#include "mmch/error.hpp"
#include "mmch/grid.hpp"
#include "mmch/lbfgs.hpp"
#include "mmch/transport.hpp"

namespace mmch {

enum class TransportMode { Auto, Exact1D, Entropic };
enum class InnerSolver { Auto, MassNewton, FlowNewton, Lbfgs };

struct JKOConfig {
  GridSpec grid;
  double h = 1e-3;
  double eps = 0.05;
  int inner_max_iter = 500;
  double inner_tol = 1e-7;
  double ot_reg = 0.0;     // 0 selects 2 dx^2
  int n_steps = 10;
  TransportMode transport = TransportMode::Auto;
  InnerSolver solver = InnerSolver::Auto;
  double ledger_tol = 0.0;  // 0 selects 1e-7 max(1, E0)
  SinkhornOptions sinkhorn{};

  void validate() const {
    grid.check(3);
    if (!(h > 0.0) || !std::isfinite(h)) throw ParameterError("h must be positive");
    require_eps(eps);
    if (!(inner_tol > 0.0)) throw ParameterError("inner_tol must be positive");
    if (inner_max_iter < 1) throw ParameterError("inner_max_iter must be positive");
    if (n_steps < 0) throw ParameterError("n_steps must be nonnegative");
    if (ot_reg < 0.0) throw ParameterError("ot_reg must be nonnegative");
  }
  [[nodiscard]] bool exact() const {
    if (transport == TransportMode::Exact1D) {
      if (grid.dim != 1) throw ParameterError("exact transport is 1D only");
      return true;
    }
    return transport == TransportMode::Auto && grid.dim == 1;
  }
  [[nodiscard]] double reg() const { return ot_reg > 0.0 ? ot_reg : 2.0 * grid.dx(0) * grid.dx(0); }
  [[nodiscard]] double ledger_tolerance(double e0) const {
    return ledger_tol > 0.0 ? ledger_tol : 1e-7 * std::max(1.0, e0);
  }
};

/// sqrt(int u (g - gbar)^2) with gbar = int u g: the first-order optimality
/// residual on the set of probability densities. Vacuum cells (u below
/// kVacuum * max u) with g >= gbar satisfy the complementarity condition of a
/// density that vanishes there and are not counted.
inline constexpr double kVacuum = 1e-10;

inline double stationarity(std::span<const double> u, std::span<const double> g, const GridSpec& grid) {
  const double vol = grid.cell_volume();
  double gbar = 0.0, mass = 0.0, umax = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    gbar += u[k] * g[k];
    mass += u[k];
    umax = std::max(umax, u[k]);
  }
  gbar /= mass;
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (u[k] <= kVacuum * umax && g[k] >= gbar) continue;
    s += u[k] * (g[k] - gbar) * (g[k] - gbar);
  }
  return std::sqrt(s * vol);
}

/// u -> E(u) + D(u_prev, u) / (2 tau), where D is W2^2 (exact 1D) or the
/// debiased entropic divergence.
class StepObjective {
 public:
  StepObjective(const ScalarField& prev, double tau, const JKOConfig& cfg, double reg)
      : prev_(prev), tau_(tau), eps_(cfg.eps), exact_(cfg.exact()) {
    if (!exact_) sink_.emplace(prev, reg, cfg.sinkhorn);
  }

  struct Value {
    double F = 0.0, E = 0.0, D = 0.0;
    std::vector<double> g;  // L2 derivative of F
    bool transport_ok = true;
    int transport_iters = 0;
  };

  Value eval(std::span<const double> u) {
    const auto& grid = prev_.grid();
    Value v;
    v.g.resize(u.size());
    v.E = energy_parts(u, grid, eps_, v.g).total();
    const double inv = 1.0 / grid.cell_volume();
    for (double& x : v.g) x *= inv;
    std::vector<double> pot;
    if (exact_) {
      auto r = w2_exact_1d(prev_, ScalarField(grid, std::vector<double>(u.begin(), u.end())));
      v.D = r.distance2;
      pot = std::move(r.potential);
    } else {
      auto r = sink_->evaluate(u);
      v.D = r.divergence;
      v.transport_ok = r.converged;
      v.transport_iters = r.iterations;
      pot = std::move(r.potential);
    }
    for (std::size_t k = 0; k < u.size(); ++k) v.g[k] += pot[k] / (2.0 * tau_);
    v.F = v.E + v.D / (2.0 * tau_);
    ++evaluations_;
    return v;
  }

  /// Transport plan from prev to u (re-evaluates for entropic plans).
  TransportPlan plan(const ScalarField& u) {
    if (exact_) return w2_exact_1d(prev_, u).plan;
    sink_->evaluate(u.values());
    return sink_->plan();
  }

  [[nodiscard]] int evaluations() const { return evaluations_; }
  [[nodiscard]] double tau() const { return tau_; }
  [[nodiscard]] bool exact() const { return exact_; }

 private:
  const ScalarField& prev_;
  double tau_;
  double eps_;
  bool exact_;
  std::optional<DebiasedSinkhorn> sink_;
  int evaluations_ = 0;
};

struct InnerResult {
  std::vector<double> u;
  StepObjective::Value value;
  int iterations = 0;
  double stationarity = 0.0;
  bool converged = false;
  std::string reason;
};

namespace detail {

// Symmetric banded Cholesky, bandwidth p. a[k][q] = A(k, k+q).
class BandedCholesky {
 public:
  bool factor(const std::vector<std::array<double, 3>>& a, int p) {
    const int m = static_cast<int>(a.size());
    p_ = p;
    l_.assign(m, {0.0, 0.0, 0.0});
    auto A = [&](int i, int j) {
      if (i > j) std::swap(i, j);
      return j - i <= p ? a[i][j - i] : 0.0;
    };
    auto L = [&](int i, int j) -> double& { return l_[i][i - j]; };
    for (int k = 0; k < m; ++k) {
      for (int j = std::max(0, k - p); j < k; ++j) {
        double s = A(k, j);
        for (int r = std::max(0, k - p); r < j; ++r) s -= L(k, r) * L(j, r);
        L(k, j) = s / L(j, j);
      }
      double s = A(k, k);
      for (int r = std::max(0, k - p); r < k; ++r) s -= L(k, r) * L(k, r);
      if (!(s > 0.0) || !std::isfinite(s)) return false;
      L(k, k) = std::sqrt(s);
    }
    return true;
  }
  std::vector<double> solve(std::vector<double> b) const {
    const int m = static_cast<int>(b.size());
    for (int k = 0; k < m; ++k) {
      for (int r = std::max(0, k - p_); r < k; ++r) b[k] -= l_[k][k - r] * b[r];
      b[k] /= l_[k][0];
    }
    for (int k = m - 1; k >= 0; --k) {
      for (int r = k + 1; r <= std::min(m - 1, k + p_); ++r) b[k] -= l_[r][r - k] * b[r];
      b[k] /= l_[k][0];
    }
    return b;
  }

 private:
  int p_ = 2;
  std::vector<std::array<double, 3>> l_;
};

}  // namespace detail

/// Gauss-Newton in cumulative-mass coordinates c_k = sum_{i<=k} u_i dx for
/// 1D exact transport. In these variables the transport term is the L2
/// distance between quantile functions, the Hessian is pentadiagonal and mass
/// is fixed exactly.
inline InnerResult solve_mass_newton(StepObjective& obj, const ScalarField& start, const JKOConfig& cfg) {
  const auto& grid = start.grid();
  const int n = grid.n[0];
  const int m = n - 1;
  const double dx = grid.dx(0);
  const double tau = obj.tau();
  const double eps = cfg.eps;

  InnerResult res;
  res.u = start.vec();
  res.value = obj.eval(res.u);
  res.stationarity = stationarity(res.u, res.value.g, grid);

  std::vector<std::array<double, 3>> A(m);
  std::vector<double> d(n), e(n), rhs(m), du(n), trial(n);
  detail::BandedCholesky chol;

  for (int it = 0; it < cfg.inner_max_iter; ++it) {
    if (res.stationarity <= cfg.inner_tol) {
      res.converged = true;
      break;
    }
    const auto& u = res.u;
    const auto& g = res.value.g;
    for (int k = 0; k < m; ++k) rhs[k] = -(g[k] - g[k + 1]);

    bool ok = false;
    for (int convexify = 0; convexify < 2 && !ok; ++convexify) {
      std::fill(d.begin(), d.end(), 2.0 * eps / dx);
      std::fill(e.begin(), e.end(), -eps / dx);
      for (int i = 0; i < n; ++i) {
        const int ip = i + 1 == n ? 0 : i + 1;
        double daa = 0.0, dbb = 0.0, dab = 0.0;
        for (int q = 0; q < 3; ++q) {
          const double t = detail::kGl3X[q];
          double w2 = w_second(u[i] + t * (u[ip] - u[i]));
          if (convexify) w2 = std::max(w2, 0.0);
          w2 *= detail::kGl3W[q] * dx / eps;
          daa += w2 * (1.0 - t) * (1.0 - t);
          dbb += w2 * t * t;
          dab += w2 * t * (1.0 - t);
        }
        d[i] += daa;
        d[ip] += dbb;
        if (ip != 0) e[i] += dab;
      }
      const double inv2 = 1.0 / (dx * dx);
      for (int k = 0; k < m; ++k) {
        A[k][0] = (d[k] - 2.0 * e[k] + d[k + 1]) * inv2;
        A[k][1] = k + 1 < m ? (e[k] - d[k + 1] + e[k + 1]) * inv2 : 0.0;
        A[k][2] = k + 2 < m ? -e[k + 1] * inv2 : 0.0;
        const double uk = std::max(u[k], 1e-300), uk1 = std::max(u[k + 1], 1e-300);
        A[k][0] += (2.0 * dx / 3.0) * (1.0 / uk + 1.0 / uk1) / (2.0 * tau);
        if (k + 1 < m) A[k][1] += (dx / 3.0) / uk1 / (2.0 * tau);
      }
      ok = chol.factor(A, 2);
    }
    if (!ok) {
      res.reason = "singular Newton system";
      break;
    }
    const auto dc = chol.solve(rhs);
    double slope = 0.0;
    for (int k = 0; k < m; ++k) slope -= rhs[k] * dc[k];
    for (int i = 0; i < n; ++i) {
      const double cur = i < m ? dc[i] : 0.0;
      const double prv = i > 0 ? dc[i - 1] : 0.0;
      du[i] = (cur - prv) / dx;
    }

    double step = 1.0;
    bool accepted = false;
    const double fscale = std::max(1.0, std::abs(res.value.F));
    for (int bt = 0; bt < 60; ++bt) {
      double mass = 0.0;
      for (int i = 0; i < n; ++i) {
        trial[i] = std::max(u[i] + step * du[i], 0.1 * u[i]);
        mass += trial[i];
      }
      mass *= dx;
      for (double& x : trial) x /= mass;
      auto val = obj.eval(trial);
      if (std::isfinite(val.F)) {
        if (val.F <= res.value.F + 1e-4 * step * slope) {
          accepted = true;
        } else if (val.F <= res.value.F + 1e-14 * fscale && std::abs(step * slope) <= 1e-13 * fscale) {
          // objective change is at round-off: accept only if stationarity improves
          accepted = stationarity(trial, val.g, grid) < res.stationarity;
        }
      }
      if (accepted) {
        res.u = trial;
        res.value = std::move(val);
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.reason = "line search failed";
      break;
    }
    res.iterations = it + 1;
    res.stationarity = stationarity(res.u, res.value.g, grid);
  }
  if (res.stationarity <= cfg.inner_tol) res.converged = true;
  if (!res.converged && res.reason.empty()) res.reason = "iteration limit";
  return res;
}

/// Newton with the transport Hessian replaced by its small-displacement model
/// L_u^{-1} / tau, L_u = -div(u grad). Each direction solves
///   (I + tau L_u A) du = -tau L_u g,   A = eps(-Lap) + W''(u)/eps,
/// so du is a discrete divergence (mass is exact) and vanishes in vacuum.
inline InnerResult solve_flow_newton(StepObjective& obj, const ScalarField& start, const JKOConfig& cfg) {
  using Sparse = Eigen::SparseMatrix<double>;
  const auto& grid = start.grid();
  const int n = static_cast<int>(start.size());
  const double tau = obj.tau();
  const double eps = cfg.eps;
  const double fscale_tol = obj.exact() ? 1e-14 : 1e-12;

  InnerResult res;
  res.u = start.vec();
  res.value = obj.eval(res.u);
  res.stationarity = stationarity(res.u, res.value.g, grid);

  std::vector<Eigen::Triplet<double>> tl, ta;
  std::vector<double> trial(n);
  Eigen::SparseLU<Sparse, Eigen::COLAMDOrdering<int>> lu;
  bool analyzed = false;
  Sparse I(n, n);
  I.setIdentity();

  for (int it = 0; it < cfg.inner_max_iter; ++it) {
    if (res.stationarity <= cfg.inner_tol) {
      res.converged = true;
      break;
    }
    const auto& u = res.u;
    const auto& g = res.value.g;
    tl.clear();
    ta.clear();
    for (int a = 0; a < grid.dim; ++a) {
      const double inv2 = 1.0 / (grid.dx(a) * grid.dx(a));
      for (int k = 0; k < n; ++k) {
        const int kp = static_cast<int>(grid.shifted(k, a, 1));
        if (grid.cell(k)[a] + 1 < grid.n[a]) {
          // transport cost is Euclidean on the box: no flux through the seam
          const double c = 0.5 * (u[k] + u[kp]) * inv2;
          tl.emplace_back(k, k, c);
          tl.emplace_back(kp, kp, c);
          tl.emplace_back(k, kp, -c);
          tl.emplace_back(kp, k, -c);
        }
        const double e = eps * inv2;
        ta.emplace_back(k, k, e);
        ta.emplace_back(kp, kp, e);
        ta.emplace_back(k, kp, -e);
        ta.emplace_back(kp, k, -e);
      }
    }
    Sparse L(n, n);
    L.setFromTriplets(tl.begin(), tl.end());
    Eigen::Map<const Eigen::VectorXd> gv(g.data(), n);
    const Eigen::VectorXd rhs = -tau * (L * gv);

    Eigen::VectorXd du;
    double slope = 0.0;
    bool ok = false;
    for (int convexify = 0; convexify < 2 && !ok; ++convexify) {
      auto tri = ta;
      for (int k = 0; k < n; ++k) {
        double w2 = w_second(u[k]);
        if (convexify) w2 = std::max(w2, 0.0);
        tri.emplace_back(k, k, w2 / eps);
      }
      Sparse A(n, n);
      A.setFromTriplets(tri.begin(), tri.end());
      Sparse M = I + tau * (L * A);
      M.makeCompressed();
      if (!analyzed) {
        lu.analyzePattern(M);
        analyzed = true;
      }
      lu.factorize(M);
      if (lu.info() != Eigen::Success) continue;
      du = lu.solve(rhs);
      if (lu.info() != Eigen::Success || !du.allFinite()) continue;
      slope = gv.dot(du) * grid.cell_volume();
      ok = slope < 0.0;
    }
    if (!ok) {
      res.reason = "no descent direction";
      break;
    }

    double step = 1.0;
    bool accepted = false;
    const double fscale = std::max(1.0, std::abs(res.value.F));
    for (int bt = 0; bt < 60; ++bt) {
      double mass = 0.0;
      for (int k = 0; k < n; ++k) {
        trial[k] = std::max(u[k] + step * du[k], 0.1 * u[k]);
        mass += trial[k];
      }
      mass *= grid.cell_volume();
      for (double& x : trial) x /= mass;
      auto val = obj.eval(trial);
      if (std::isfinite(val.F)) {
        if (val.F <= res.value.F + 1e-4 * step * slope) {
          accepted = true;
        } else if (val.F <= res.value.F + fscale_tol * fscale && std::abs(step * slope) <= 10.0 * fscale_tol * fscale) {
          // objective change is at round-off: accept only if stationarity improves
          accepted = stationarity(trial, val.g, grid) < res.stationarity;
        }
      }
      if (accepted) {
        res.u = trial;
        res.value = std::move(val);
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.reason = "line search failed";
      break;
    }
    res.iterations = it + 1;
    res.stationarity = stationarity(res.u, res.value.g, grid);
  }
  if (res.stationarity <= cfg.inner_tol) res.converged = true;
  if (!res.converged && res.reason.empty()) res.reason = "iteration limit";
  return res;
}

/// L-BFGS on z with u = z^2 / int z^2: nonnegativity and unit mass hold by
/// construction.
inline InnerResult solve_lbfgs(StepObjective& obj, const ScalarField& start, const JKOConfig& cfg) {
  const auto& grid = start.grid();
  const double vol = grid.cell_volume();
  const std::size_t n = start.size();
  std::vector<double> z(n);
  for (std::size_t k = 0; k < n; ++k) z[k] = std::sqrt(std::max(start[k], 0.0));

  std::vector<double> u(n);
  StepObjective::Value last;
  std::vector<double> last_u;
  auto to_u = [&](const std::vector<double>& zz) {
    double Z = 0.0;
    for (double x : zz) Z += x * x;
    Z *= vol;
    for (std::size_t k = 0; k < n; ++k) u[k] = zz[k] * zz[k] / Z;
    return Z;
  };
  auto fg = [&](const std::vector<double>& zz, std::vector<double>& grad) {
    const double Z = to_u(zz);
    auto val = obj.eval(u);
    double gbar = 0.0;
    for (std::size_t k = 0; k < n; ++k) gbar += u[k] * val.g[k];
    gbar *= vol;
    for (std::size_t k = 0; k < n; ++k) grad[k] = 2.0 * zz[k] * vol / Z * (val.g[k] - gbar);
    last = std::move(val);
    last_u = u;
    return last.F;
  };
  // the stopping measure is evaluated right after fg on the same point
  auto measure = [&](const std::vector<double>& zz, double, const std::vector<double>&) {
    to_u(zz);
    if (last_u != u) {
      std::vector<double> tmp(n);
      fg(zz, tmp);
    }
    const double r = stationarity(last_u, last.g, grid);
    return r;
  };
  LbfgsOptions opt;
  opt.max_iter = cfg.inner_max_iter;
  if (!obj.exact()) opt.flat_tol = 1e-12;
  auto r = lbfgs_minimize(fg, z, measure, cfg.inner_tol, opt);

  InnerResult res;
  to_u(r.x);
  if (last_u != u) {
    std::vector<double> tmp(n);
    fg(r.x, tmp);
  }
  res.u = last_u;
  res.value = last;
  res.iterations = r.iterations;
  res.stationarity = stationarity(res.u, res.value.g, grid);
  res.converged = res.stationarity <= cfg.inner_tol;
  res.reason = r.reason;
  return res;
}

struct StepResult {
  ScalarField u;
  TransportPlan plan;
  VectorField flux;
  double energy = 0.0;
  double dist2 = 0.0;
  double objective = 0.0;
  double stationarity = 0.0;
  int inner_iters = 0;
  double reg = 0.0;
  int retries = 0;
};

/// One minimizing-movement step of size tau (defaults to cfg.h).
/// Throws ConvergenceError when the inner solve misses inner_tol or the
/// energy inequality E(u) + D/(2 tau) <= E(u_prev) + ledger_tol fails.
inline StepResult jko_step(const ScalarField& u_prev, const JKOConfig& cfg, double tau = 0.0,
                           double ledger_tol = 0.0) {
  cfg.validate();
  detail::require_same_grid(u_prev.grid(), cfg.grid);
  require_density(u_prev, 1e-9);
  if (tau <= 0.0) tau = cfg.h;
  const double e_prev = energy(u_prev, cfg.eps);
  if (ledger_tol <= 0.0) ledger_tol = cfg.ledger_tolerance(e_prev);

  const int attempts = cfg.exact() ? 1 : 2;
  std::string why;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    const double reg = cfg.reg() * (attempt == 0 ? 1.0 : 0.5);
    StepObjective obj(u_prev, tau, cfg, reg);
    InnerSolver solver = cfg.solver;
    if (solver == InnerSolver::Auto) solver = obj.exact() ? InnerSolver::MassNewton : InnerSolver::FlowNewton;
    if (solver == InnerSolver::MassNewton && !obj.exact()) {
      throw ParameterError("the mass-coordinate Newton solver needs exact 1D transport");
    }
    InnerResult in;
    if (solver == InnerSolver::MassNewton) {
      in = solve_mass_newton(obj, u_prev, cfg);
    } else if (solver == InnerSolver::FlowNewton) {
      in = solve_flow_newton(obj, u_prev, cfg);
    } else {
      in = solve_lbfgs(obj, u_prev, cfg);
    }
    if (!in.converged) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "inner solver stopped at stationarity %.3e > %.3e (%s)",
                    in.stationarity, cfg.inner_tol, in.reason.c_str());
      throw ConvergenceError(buf);
    }
    const double lhs = in.value.E + in.value.D / (2.0 * tau);
    if (!in.value.transport_ok || lhs > e_prev + ledger_tol) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "energy inequality violated: %.12e > %.12e", lhs, e_prev + ledger_tol);
      why = buf;
      continue;
    }
    StepResult s;
    s.u = ScalarField(u_prev.grid(), std::move(in.u));
    s.plan = obj.plan(s.u);
    s.flux = flux_from_plan(s.plan, s.u, tau);
    s.energy = in.value.E;
    s.dist2 = in.value.D;
    s.objective = lhs;
    s.stationarity = in.stationarity;
    s.inner_iters = in.iterations;
    s.reg = reg;
    s.retries = attempt;
    return s;
  }
  throw ConvergenceError("step rejected: " + why);
}

/// Minimizer of v -> E(v) + d^2(u_n, v) / (2 tau).
inline StepResult de_giorgi_step(const ScalarField& u_n, double tau, const JKOConfig& cfg) {
  if (!(tau > 0.0) || tau > cfg.h * (1.0 + 1e-12)) throw ParameterError("tau must lie in (0, h]");
  return jko_step(u_n, cfg, tau);
}

inline ScalarField de_giorgi_interpolant(const ScalarField& u_n, double tau, const JKOConfig& cfg) {
  return de_giorgi_step(u_n, tau, cfg).u;
}

struct LedgerRow {
  int n = 0;
  double t = 0.0;
  double E = 0.0;
  double cost = 0.0;  // d^2 / (2h)
  double M2 = 0.0;
  double entropy = 0.0;
  int inner_iters = 0;
  double stationarity = 0.0;
};

struct Trajectory {
  JKOConfig cfg;
  std::vector<ScalarField> iterates;  // u_0 .. u_N
  std::vector<VectorField> fluxes;    // j_1 .. j_N
  std::vector<double> dist2;          // d^2(u_n, u_{n-1}), n = 1..N
  std::vector<LedgerRow> ledger;      // n = 1..N
  double E0 = 0.0;
  double M2_0 = 0.0;
  double moment_constant = 1.0;  // smallest C >= 1 with M2_n <= C e^{C t_n} M2_0

  [[nodiscard]] std::size_t steps() const { return ledger.size(); }
};

/// Smallest C >= 1 with ratio <= C exp(C t) for every (t, ratio).
inline double gronwall_constant(const std::vector<std::pair<double, double>>& samples) {
  double best = 1.0;
  for (const auto& [t, ratio] : samples) {
    auto f = [&](double c) { return c * std::exp(c * t) - ratio; };
    if (f(best) >= 0.0) continue;
    double lo = best, hi = best * 2.0;
    while (f(hi) < 0.0) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) < 0.0 ? lo : hi) = mid;
    }
    best = hi;
  }
  return best;
}

/// Runs cfg.n_steps steps. The per-step energy inequality is enforced in
/// jko_step; a violation surfaces as ConvergenceError naming the step.
inline Trajectory run_trajectory(const ScalarField& u0, const JKOConfig& cfg,
                                 const std::function<void(const LedgerRow&)>& on_step = nullptr) {
  cfg.validate();
  require_density(u0, 1e-9);
  Trajectory tr;
  tr.cfg = cfg;
  tr.E0 = energy(u0, cfg.eps);
  tr.M2_0 = second_moment(u0);
  tr.iterates.push_back(u0);
  const double ltol = cfg.ledger_tolerance(tr.E0);
  std::vector<std::pair<double, double>> samples;
  for (int n = 1; n <= cfg.n_steps; ++n) {
    StepResult s;
    try {
      s = jko_step(tr.iterates.back(), cfg, cfg.h, ltol);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError("step " + std::to_string(n) + ": " + e.what());
    }
    LedgerRow row;
    row.n = n;
    row.t = n * cfg.h;
    row.E = s.energy;
    row.cost = s.dist2 / (2.0 * cfg.h);
    row.M2 = second_moment(s.u);
    row.entropy = entropy(s.u);
    row.inner_iters = s.inner_iters;
    row.stationarity = s.stationarity;
    if (tr.M2_0 > 0.0) samples.emplace_back(row.t, row.M2 / tr.M2_0);
    tr.ledger.push_back(row);
    tr.dist2.push_back(s.dist2);
    tr.fluxes.push_back(std::move(s.flux));
    tr.iterates.push_back(std::move(s.u));
    if (on_step) on_step(row);
  }
  tr.moment_constant = gronwall_constant(samples);
  return tr;
}

/// Largest violation of E_n + cost_n <= E_{n-1} (negative when all hold).
inline double ledger_worst_excess(const Trajectory& tr) {
  double worst = -std::numeric_limits<double>::infinity();
  double prev = tr.E0;
  for (const auto& r : tr.ledger) {
    worst = std::max(worst, r.E + r.cost - prev);
    prev = r.E;
  }
  return worst;
}

struct RefinedDissipation {
  double total = 0.0;
  double piecewise = 0.0;   // 1/2 int int |j_h|^2 / u_h
  double de_giorgi = 0.0;   // 1/2 int int |j~_h|^2 / u~_h
};

/// 1/2 int |j_h|^2/u_h + 1/2 int |j~_h|^2/u~_h, with the De Giorgi part
/// sampled at tau_k = k h / n_tau, k = 1..n_tau (right endpoints; tau = h
/// reuses the step itself).
inline RefinedDissipation refined_dissipation(const Trajectory& tr, const JKOConfig& cfg, int n_tau = 4) {
  if (n_tau < 1) throw ParameterError("n_tau must be positive");
  RefinedDissipation r;
  const double h = cfg.h;
  for (std::size_t n = 1; n < tr.iterates.size(); ++n) {
    const double own = dissipation_density(tr.iterates[n], tr.fluxes[n - 1]);
    r.piecewise += 0.5 * h * own;
    double dg = 0.5 * (h / n_tau) * own;
    for (int k = 1; k < n_tau; ++k) {
      const double tau = k * h / n_tau;
      const auto s = de_giorgi_step(tr.iterates[n - 1], tau, cfg);
      dg += 0.5 * (h / n_tau) * dissipation_density(s.u, s.flux);
    }
    r.de_giorgi += dg;
  }
  r.total = r.piecewise + r.de_giorgi;
  return r;
}

}  // namespace mmch
