#pragma once

// Quadratic optimal transport between grid densities.
//
// Exact 1D: each density is read as piecewise constant on its cells (or as
// atoms at the cell centers) and W2^2 = int_0^1 |U^-1(m) - V^-1(m)|^2 dm is
// integrated exactly over the merged quantile breakpoints.
//
// Entropic: log-domain Sinkhorn with the separable Gaussian kernel of the
// tensor grid; debiased divergence
//   S(a, b) = OT(a, b) - OT(a, a)/2 - OT(b, b)/2.
//
// Plans store first marginal = earlier density, second = later density.
// Fluxes use the physical sign: (u1 - u0)/h + div j ~ 0.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "mmch/error.hpp"
#include "mmch/grid.hpp"

namespace mmch {

enum class PlanKind { Exact1D, Entropic };

struct TransportPlan {
  PlanKind kind = PlanKind::Exact1D;
  GridSpec grid;
  std::vector<double> first;   // density values of the first marginal
  std::vector<double> second;  // density values of the second marginal
  /// Conditional mean of x given y, per cell of the second marginal and per
  /// component. For exact1d this is the cell average of the Monge map t(y).
  std::vector<double> bary;
  /// Reference point the displacement is measured from: the cell-averaged y
  /// for exact1d, the debiasing self-barycenter for entropic plans.
  std::vector<double> anchor;
  // entropic only
  std::vector<double> f, g;
  double reg = 0.0;
};

struct W2Result {
  double distance = 0.0;   // sqrt(max(distance2, 0))
  double distance2 = 0.0;  // W2^2, or the debiased divergence for entropic plans
  TransportPlan plan;
  int iterations = 0;
  bool converged = true;
  /// L2 derivative of distance2 with respect to the second marginal
  /// (defined up to an additive constant).
  std::vector<double> potential;
};

enum class MassModel { PiecewiseConstant, Atomic };

namespace detail {

inline std::vector<double> normalized_masses(const ScalarField& u, double mass_tol) {
  const double vol = u.grid().cell_volume();
  std::vector<double> m(u.size());
  double total = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (u[k] < 0.0) throw DomainError("transport input has negative values");
    m[k] = u[k] * vol;
    total += m[k];
  }
  if (!(std::abs(total - 1.0) <= mass_tol)) throw DomainError("transport input is not a probability density");
  for (double& x : m) x /= total;
  return m;
}

inline std::vector<double> cumulative(const std::vector<double>& m) {
  std::vector<double> c(m.size() + 1, 0.0);
  for (std::size_t k = 0; k < m.size(); ++k) c[k + 1] = c[k] + m[k];
  const double last = c.back();
  for (double& x : c) x /= last;
  c.back() = 1.0;
  return c;
}

}  // namespace detail

/// Exact 1D W2 between u (first marginal) and v (second marginal).
inline W2Result w2_exact_1d(const ScalarField& u, const ScalarField& v,
                            MassModel model = MassModel::PiecewiseConstant, double mass_tol = 1e-9) {
  const auto& gu = u.grid();
  const auto& gv = v.grid();
  if (gu.dim != 1 || gv.dim != 1) throw DomainError("w2_exact_1d needs 1D fields");
  const auto mu = detail::normalized_masses(u, mass_tol);
  const auto mv = detail::normalized_masses(v, mass_tol);
  const auto cu = detail::cumulative(mu);
  const auto cv = detail::cumulative(mv);
  const int nu = gu.n[0], nv = gv.n[0];
  const double dxu = gu.dx(0), dxv = gv.dx(0);
  const double ou = gu.origin[0], ov = gv.origin[0];

  W2Result res;
  res.plan.kind = PlanKind::Exact1D;
  res.plan.grid = gv;
  res.plan.first = u.vec();
  res.plan.second = v.vec();
  res.plan.bary.assign(nv, 0.0);
  res.plan.anchor.resize(nv);
  for (int j = 0; j < nv; ++j) res.plan.anchor[j] = gv.coord(0, j);
  res.potential.assign(nv, 0.0);

  // quantile of u at mass level m inside cell a
  auto xq = [&](int a, double m) {
    if (model == MassModel::Atomic) return gu.coord(0, a);
    const double ma = cu[a + 1] - cu[a];
    if (!(ma > 0.0)) return ou + a * dxu;
    return ou + (a + std::clamp((m - cu[a]) / ma, 0.0, 1.0)) * dxu;
  };
  auto yq = [&](int b, double m) {
    if (model == MassModel::Atomic) return gv.coord(0, b);
    const double mb = cv[b + 1] - cv[b];
    if (!(mb > 0.0)) return ov + b * dxv;
    return ov + (b + std::clamp((m - cv[b]) / mb, 0.0, 1.0)) * dxv;
  };

  double w = 0.0;
  int a = 0, b = 0;
  double m = 0.0;
  double x_last = ou;
  // running Kantorovich potential psi(y), psi' = 2 (y - t(y)), psi(ov) = 0
  double y_run = ov, psi_run = 0.0;
  std::vector<double> psi_int(nv, 0.0), t_int(nv, 0.0);
  auto advance_y = [&](int cell, double y1, double x0, double x1) {
    // t(y) linear from x0 at y_run to x1 at y1
    const double y0 = y_run;
    const double len = y1 - y0;
    if (len <= 0.0) return;
    const double ym = 0.5 * (y0 + y1), xm = 0.5 * (x0 + x1);
    const double psi_m = psi_run + (ym - y0) * ((y0 - x0) + (ym - xm));
    const double psi_1 = psi_run + len * ((y0 - x0) + (y1 - x1));
    psi_int[cell] += len / 6.0 * (psi_run + 4.0 * psi_m + psi_1);
    t_int[cell] += len * xm;
    psi_run = psi_1;
    y_run = y1;
  };

  while (a < nu && b < nv) {
    if (!(cu[a + 1] > m)) {
      ++a;
      continue;
    }
    if (!(cv[b + 1] > m)) {
      // empty (or exhausted) v cell: the map is constant across it
      if (model == MassModel::PiecewiseConstant) {
        const double xc = xq(a, m);
        advance_y(b, ov + (b + 1) * dxv, xc, xc);
      }
      ++b;
      continue;
    }
    const double m1 = std::min(cu[a + 1], cv[b + 1]);
    const double x0 = xq(a, m), x1 = xq(a, m1);
    const double y0 = yq(b, m), y1 = yq(b, m1);
    x_last = x1;
    const double d0 = x0 - y0, d1 = x1 - y1;
    const double len = m1 - m;
    if (model == MassModel::Atomic) {
      w += len * d0 * d0;
    } else {
      w += len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
      advance_y(b, y1, x0, x1);
    }
    m = m1;
    if (cu[a + 1] <= m) ++a;
    if (cv[b + 1] <= m) {
      if (model == MassModel::PiecewiseConstant) advance_y(b, ov + (b + 1) * dxv, x1, x1);
      ++b;
    }
  }
  if (model == MassModel::PiecewiseConstant) {
    for (; b < nv; ++b) advance_y(b, ov + (b + 1) * dxv, x_last, x_last);
    for (int j = 0; j < nv; ++j) {
      res.plan.bary[j] = t_int[j] / dxv;
      res.potential[j] = psi_int[j] / dxv;
    }
  } else {
    for (int j = 0; j < nv; ++j) res.plan.bary[j] = res.plan.anchor[j];
  }
  res.distance2 = std::max(w, 0.0);
  res.distance = std::sqrt(res.distance2);
  return res;
}

// ---------------------------------------------------------------------------
// Entropic transport on a tensor grid.

/// Log-sum-exp against the Gaussian kernel exp(-|x_i - y_j|^2 / reg) on one
/// grid: out_i = log sum_j exp(in_j - |x_i - y_j|^2 / reg). Terms more than
/// `cut` below the row maximum are skipped.
class GridKernel {
 public:
  GridKernel() = default;
  GridKernel(const GridSpec& g, double reg, double cut = 40.0) : g_(g), reg_(reg), cut_(cut) {
    if (!(reg > 0.0)) throw ParameterError("entropic regularization must be positive");
    for (int a = 0; a < g.dim; ++a) {
      const double s = g.dx(a) * g.dx(a) / reg;
      c_[a].resize(g.n[a]);
      for (int k = 0; k < g.n[a]; ++k) c_[a][k] = s * k * k;
    }
  }

  [[nodiscard]] double reg() const { return reg_; }
  [[nodiscard]] const GridSpec& grid() const { return g_; }
  /// Disables the scaling-domain fast path (log-sum-exp only).
  void set_scaled_path(bool on) { scaled_ = on; }

  void apply(std::span<const double> in, std::span<double> out) const {
    if (scaled_ && apply_scaled(in, out)) return;
    if (g_.dim == 1) {
      pass(in.data(), out.data(), g_.n[0], c_[0]);
      return;
    }
    const int n0 = g_.n[0], n1 = g_.n[1];
    tmp_.resize(in.size());
    tr_.resize(in.size());
    for (int r = 0; r < n0; ++r) {
      pass(in.data() + static_cast<std::size_t>(r) * n1, tmp_.data() + static_cast<std::size_t>(r) * n1,
           n1, c_[1]);
    }
    transpose(tmp_.data(), tr_.data(), n0, n1);
    for (int r = 0; r < n1; ++r) {
      pass(tr_.data() + static_cast<std::size_t>(r) * n0, tmp_.data() + static_cast<std::size_t>(r) * n0,
           n0, c_[0]);
    }
    transpose(tmp_.data(), out.data(), n1, n0);
  }

 private:
  static void transpose(const double* a, double* b, int rows, int cols) {
    constexpr int B = 32;
    for (int r0 = 0; r0 < rows; r0 += B) {
      for (int c0 = 0; c0 < cols; c0 += B) {
        const int r1 = std::min(rows, r0 + B), c1 = std::min(cols, c0 + B);
        for (int r = r0; r < r1; ++r) {
          for (int c = c0; c < c1; ++c) b[static_cast<std::size_t>(c) * rows + r] = a[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }

  // When the finite inputs span less than kScaledRange, exp(in - max) neither
  // underflows nor loses the dominant terms, and the kernel is applied as a
  // truncated separable convolution in the scaling domain.
  static constexpr double kScaledRange = 600.0;
  bool scaled_ = true;

  bool apply_scaled(std::span<const double> in, std::span<double> out) const {
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    double hi = ninf, lo = std::numeric_limits<double>::infinity();
    for (double x : in) {
      if (x == ninf) continue;
      hi = std::max(hi, x);
      lo = std::min(lo, x);
    }
    if (hi == ninf || hi - lo > kScaledRange) return false;
    const double budget = hi - lo + cut_;
    for (int a = 0; a < g_.dim; ++a) {
      const double s = c_[a].size() > 1 ? c_[a][1] : 1.0;
      const int r = std::min(g_.n[a] - 1, static_cast<int>(std::sqrt(budget / s)) + 1);
      taps_[a].resize(r + 1);
      for (int k = 0; k <= r; ++k) taps_[a][k] = std::exp(-c_[a][k]);
    }
    sv_.resize(in.size());
    for (std::size_t k = 0; k < in.size(); ++k) sv_[k] = in[k] == ninf ? 0.0 : std::exp(in[k] - hi);
    if (g_.dim == 1) {
      conv(sv_.data(), out.data(), g_.n[0], 1, taps_[0]);
    } else {
      const int n0 = g_.n[0], n1 = g_.n[1];
      tmp_.resize(in.size());
      for (int r = 0; r < n0; ++r) {
        conv(sv_.data() + static_cast<std::size_t>(r) * n1, tmp_.data() + static_cast<std::size_t>(r) * n1, n1, 1,
             taps_[1]);
      }
      conv_columns(tmp_.data(), out.data(), n0, n1, taps_[0]);
    }
    for (double& x : out) x = x > 0.0 ? hi + std::log(x) : ninf;
    return true;
  }

  static void conv(const double* in, double* out, int n, int, const std::vector<double>& t) {
    const int r = static_cast<int>(t.size()) - 1;
    for (int i = 0; i < n; ++i) {
      double acc = t[0] * in[i];
      const int kmax = std::min(r, std::max(i, n - 1 - i));
      for (int k = 1; k <= kmax; ++k) {
        if (i - k >= 0) acc += t[k] * in[i - k];
        if (i + k < n) acc += t[k] * in[i + k];
      }
      out[i] = acc;
    }
  }

  // out(r, c) = sum_k t(|k|) in(r + k, c), rows of length n1 processed together
  static void conv_columns(const double* in, double* out, int n0, int n1, const std::vector<double>& t) {
    const int r = static_cast<int>(t.size()) - 1;
    for (int i = 0; i < n0; ++i) {
      double* o = out + static_cast<std::size_t>(i) * n1;
      const double* c = in + static_cast<std::size_t>(i) * n1;
      for (int q = 0; q < n1; ++q) o[q] = t[0] * c[q];
      for (int k = 1; k <= r; ++k) {
        if (i - k >= 0) {
          const double* p = in + static_cast<std::size_t>(i - k) * n1;
          for (int q = 0; q < n1; ++q) o[q] += t[k] * p[q];
        }
        if (i + k < n0) {
          const double* p = in + static_cast<std::size_t>(i + k) * n1;
          for (int q = 0; q < n1; ++q) o[q] += t[k] * p[q];
        }
      }
    }
  }

  // Exact row maxima m_i = max_j in_j - s (i - j)^2 by the lower envelope of
  // parabolas (Felzenszwalb-Huttenlocher); -inf entries are skipped.
  static void row_max(const double* in, double* m, int n, double s, std::vector<int>& v,
                      std::vector<double>& z) {
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    v.resize(n);
    z.resize(n + 1);
    int k = -1;
    auto f = [&](int q) { return -in[q] + s * q * q; };
    for (int q = 0; q < n; ++q) {
      if (in[q] == ninf) continue;
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -std::numeric_limits<double>::infinity();
        z[1] = std::numeric_limits<double>::infinity();
        continue;
      }
      double x;
      while (true) {
        const int p = v[k];
        x = (f(q) - f(p)) / (2.0 * s * (q - p));
        if (x <= z[k] && k > 0) {
          --k;
        } else {
          break;
        }
      }
      if (x <= z[k]) {
        v[k] = q;  // k == 0: q dominates everywhere
        z[k + 1] = std::numeric_limits<double>::infinity();
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = x;
      z[k + 1] = std::numeric_limits<double>::infinity();
    }
    if (k < 0) {
      for (int i = 0; i < n; ++i) m[i] = ninf;
      return;
    }
    int j = 0;
    for (int i = 0; i < n; ++i) {
      while (z[j + 1] < i) ++j;
      const int p = v[j];
      m[i] = in[p] - s * (i - p) * (i - p);
    }
  }

  void pass(const double* in, double* out, int n, const std::vector<double>& c) const {
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    constexpr int B = 8;
    const double s = c.size() > 1 ? c[1] : 1.0;
    const int nb = (n + B - 1) / B;
    bmax_.assign(nb, ninf);
    for (int j = 0; j < n; ++j) bmax_[j / B] = std::max(bmax_[j / B], in[j]);
    mrow_.resize(n);
    row_max(in, mrow_.data(), n, s, env_v_, env_z_);
    for (int i = 0; i < n; ++i) {
      const double m = mrow_[i];
      if (m == ninf) {
        out[i] = ninf;
        continue;
      }
      // a block contributes only if its max minus the smallest cost to it
      // clears the cut below the row maximum
      const double floor = m - cut_;
      double acc = 0.0;
      for (int b = 0; b < nb; ++b) {
        const int j0 = b * B, j1 = std::min(n, j0 + B) - 1;
        const int d = i < j0 ? j0 - i : (i > j1 ? i - j1 : 0);
        if (bmax_[b] - c[d] <= floor) continue;
        for (int j = j0; j <= j1; ++j) {
          const double t = in[j] - c[std::abs(i - j)];
          if (t > floor) acc += std::exp(t - m);
        }
      }
      out[i] = m + std::log(acc);
    }
  }

  GridSpec g_;
  double reg_ = 1.0;
  double cut_ = 40.0;
  std::vector<double> c_[2];
  mutable std::vector<double> tmp_, tr_, bmax_, mrow_, env_z_, sv_;
  mutable std::vector<double> taps_[2];
  mutable std::vector<int> env_v_;
};

struct SinkhornOptions {
  int max_iter = 20000;
  double tol = 1e-9;        // marginal L1 error
  bool anneal = true;       // reg-scaling warm-up for cold starts
  double anneal_factor = 0.5;
  double relax = 1.0;       // over-relaxation of the cold-start final stage, in [1, 2)
};

struct SinkhornState {
  std::vector<double> f, g;  // potentials for (a, b)
  int iterations = 0;
  bool converged = false;
  double error = 0.0;
  double value = 0.0;  // OT_reg(a, b)
};

namespace detail {

inline std::vector<double> log_masses(std::span<const double> m) {
  std::vector<double> out(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    out[k] = m[k] > 0.0 ? std::log(m[k]) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

// f <- -reg * LSE_j(log b_j + g_j / reg - C_ij / reg)
inline void c_transform(const GridKernel& k, std::span<const double> logb, std::span<const double> g,
                        std::span<double> out, std::vector<double>& buf) {
  const double reg = k.reg();
  buf.resize(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) buf[j] = logb[j] + g[j] / reg;
  k.apply(buf, out);
  for (double& x : out) x = std::isfinite(x) ? -reg * x : 0.0;
}

inline double marginal_error(std::span<const double> b, std::span<const double> g_old,
                             std::span<const double> g_new, double reg) {
  double e = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b[j] <= 0.0) continue;
    const double t = std::min((g_old[j] - g_new[j]) / reg, 50.0);
    e += b[j] * std::abs(std::expm1(t));
  }
  return e;
}

}  // namespace detail

/// OT_reg between mass vectors a and b on the kernel's grid, warm-started from
/// `st` when its potentials are sized correctly.
inline void sinkhorn_solve(const GridKernel& kernel, std::span<const double> a, std::span<const double> b,
                           SinkhornState& st, const SinkhornOptions& opt) {
  if (!(opt.relax >= 1.0 && opt.relax < 2.0)) throw ParameterError("Sinkhorn relaxation must lie in [1, 2)");
  const std::size_t n = a.size();
  const bool warm = st.f.size() == n && st.g.size() == n;
  if (!warm) {
    st.f.assign(n, 0.0);
    st.g.assign(n, 0.0);
  }
  const auto la = detail::log_masses(a);
  const auto lb = detail::log_masses(b);
  std::vector<double> buf, fnew(n), gnew(n);
  st.iterations = 0;
  st.converged = false;

  auto run = [&](const GridKernel& k, int max_iter, double tol, double w) {
    double first = -1.0;
    for (int it = 0; it < max_iter; ++it) {
      detail::c_transform(k, lb, st.g, fnew, buf);
      for (std::size_t i = 0; i < n; ++i) st.f[i] = w * fnew[i] + (1.0 - w) * st.f[i];
      detail::c_transform(k, la, st.f, gnew, buf);
      st.error = detail::marginal_error(b, st.g, gnew, k.reg());
      for (std::size_t j = 0; j < n; ++j) st.g[j] = w * gnew[j] + (1.0 - w) * st.g[j];
      ++st.iterations;
      if (st.error <= tol) return true;
      if (first < 0.0) first = st.error;
      if (!(st.error < 1e3 * first)) w = 1.0;  // relaxation diverging
    }
    return false;
  };

  if (opt.anneal && !warm) {
    const auto& gr = kernel.grid();
    double diam2 = 0.0;
    for (int d = 0; d < gr.dim; ++d) diam2 += gr.length[d] * gr.length[d];
    for (double r = diam2; r > kernel.reg() / opt.anneal_factor; r *= opt.anneal_factor) {
      GridKernel coarse(gr, r);
      run(coarse, 200, 1e-3, 1.0);
    }
  }
  st.converged = run(kernel, opt.max_iter, opt.tol, warm ? 1.0 : opt.relax);
  double v = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (a[k] > 0.0) v += a[k] * st.f[k];
    if (b[k] > 0.0) v += b[k] * st.g[k];
  }
  st.value = v;
}

/// Symmetric OT_reg(a, a) potential via averaged fixed-point updates.
inline void sinkhorn_self(const GridKernel& kernel, std::span<const double> a, SinkhornState& st,
                          const SinkhornOptions& opt) {
  const std::size_t n = a.size();
  const bool warm = st.f.size() == n;
  if (!warm) st.f.assign(n, 0.0);
  const auto la = detail::log_masses(a);
  std::vector<double> buf, t(n);
  st.iterations = 0;
  st.converged = false;
  auto run = [&](const GridKernel& k, int max_iter, double tol) {
    for (int it = 0; it < max_iter; ++it) {
      detail::c_transform(k, la, st.f, t, buf);
      st.error = detail::marginal_error(a, st.f, t, k.reg());
      for (std::size_t i = 0; i < n; ++i) st.f[i] = 0.5 * (st.f[i] + t[i]);
      ++st.iterations;
      if (st.error <= tol) return true;
    }
    return false;
  };
  if (opt.anneal && !warm) {
    const auto& gr = kernel.grid();
    double diam2 = 0.0;
    for (int d = 0; d < gr.dim; ++d) diam2 += gr.length[d] * gr.length[d];
    for (double r = diam2; r > kernel.reg() / opt.anneal_factor; r *= opt.anneal_factor) {
      GridKernel coarse(gr, r);
      run(coarse, 200, 1e-3);
    }
  }
  st.converged = run(kernel, opt.max_iter, opt.tol);
  // final potential is the c-transform of the averaged one, so the reported
  // value uses a consistent pair
  detail::c_transform(kernel, la, st.f, t, buf);
  double v = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (a[k] > 0.0) v += a[k] * (st.f[k] + t[k]);
  }
  st.value = v;
  st.g = st.f;
}

namespace detail {

// Conditional mean of x given y under the plan exp((f_i + g_j - C_ij)/reg) a_i b_j.
inline std::vector<double> barycenters(const GridKernel& k, std::span<const double> a,
                                       std::span<const double> f) {
  const auto& gr = k.grid();
  const std::size_t n = a.size();
  const double reg = k.reg();
  std::vector<double> base(n), norm(n), wbuf(n), wout(n);
  for (std::size_t i = 0; i < n; ++i) {
    base[i] = a[i] > 0.0 ? std::log(a[i]) + f[i] / reg : -std::numeric_limits<double>::infinity();
  }
  k.apply(base, norm);
  std::vector<double> out(n * gr.dim, 0.0);
  for (int d = 0; d < gr.dim; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = gr.point(i);
      // shift so the weight is positive: x - origin >= dx/2
      wbuf[i] = base[i] + std::log(p[d] - gr.origin[d]);
    }
    k.apply(wbuf, wout);
    for (std::size_t j = 0; j < n; ++j) {
      const auto p = gr.point(j);
      double x = p[d];
      if (std::isfinite(norm[j]) && std::isfinite(wout[j])) x = gr.origin[d] + std::exp(wout[j] - norm[j]);
      out[j * gr.dim + d] = x;
    }
  }
  return out;
}

}  // namespace detail

/// Reusable debiased Sinkhorn divergence with a fixed first marginal `a`.
/// Keeps warm-start potentials between calls.
class DebiasedSinkhorn {
 public:
  DebiasedSinkhorn(const ScalarField& a, double reg, SinkhornOptions opt = {})
      : grid_(a.grid()), kernel_(a.grid(), reg), opt_(opt) {
    a_ = detail::normalized_masses(a, 1e-9);
    a_density_ = a.vec();
    sinkhorn_self(kernel_, a_, self_a_, opt_);
  }

  [[nodiscard]] double reg() const { return kernel_.reg(); }
  [[nodiscard]] const GridSpec& grid() const { return grid_; }

  struct Eval {
    double divergence = 0.0;
    std::vector<double> potential;  // L2 derivative with respect to b's density
    int iterations = 0;
    bool converged = true;
  };

  /// Divergence S(a, b) for density values b.
  Eval evaluate(std::span<const double> bvals) {
    const double vol = grid_.cell_volume();
    std::vector<double> b(bvals.size());
    double tot = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
      b[k] = std::max(bvals[k], 0.0) * vol;
      tot += b[k];
    }
    for (double& x : b) x /= tot;
    sinkhorn_solve(kernel_, a_, b, ab_, opt_);
    sinkhorn_self(kernel_, b, self_b_, opt_);
    Eval e;
    e.divergence = ab_.value - 0.5 * self_a_.value - 0.5 * self_b_.value;
    e.potential.resize(b.size());
    for (std::size_t k = 0; k < b.size(); ++k) e.potential[k] = ab_.g[k] - self_b_.f[k];
    e.iterations = ab_.iterations + self_b_.iterations;
    e.converged = ab_.converged && self_b_.converged;
    last_b_ = std::move(b);
    last_b_density_.assign(bvals.begin(), bvals.end());
    return e;
  }

  /// Plan of the most recent evaluate() call.
  [[nodiscard]] TransportPlan plan() const {
    TransportPlan p;
    p.kind = PlanKind::Entropic;
    p.grid = grid_;
    p.first = a_density_;
    p.second = last_b_density_;
    p.f = ab_.f;
    p.g = ab_.g;
    p.reg = kernel_.reg();
    p.bary = detail::barycenters(kernel_, a_, ab_.f);
    p.anchor = detail::barycenters(kernel_, last_b_, self_b_.f);
    return p;
  }

  void reset_warm_start() {
    ab_ = {};
    self_b_ = {};
  }

 private:
  GridSpec grid_;
  GridKernel kernel_;
  SinkhornOptions opt_;
  std::vector<double> a_, a_density_, last_b_, last_b_density_;
  SinkhornState self_a_, ab_, self_b_;
};

/// Debiased entropic W2^2 between u (first) and v (second) at regularization reg.
inline W2Result sinkhorn(const ScalarField& u, const ScalarField& v, double reg, int max_iter = 20000,
                         double tol = 1e-9) {
  detail::require_same_grid(u.grid(), v.grid());
  detail::normalized_masses(v, 1e-9);
  SinkhornOptions opt;
  opt.max_iter = max_iter;
  opt.tol = tol;
  opt.relax = 1.8;
  DebiasedSinkhorn s(u, reg, opt);
  auto e = s.evaluate(v.values());
  W2Result r;
  r.distance2 = e.divergence;
  r.distance = std::sqrt(std::max(e.divergence, 0.0));
  r.plan = s.plan();
  r.iterations = e.iterations;
  r.converged = e.converged;
  r.potential = std::move(e.potential);
  return r;
}

/// Marginal L1 errors (first, second) of an entropic plan, in mass units.
inline std::pair<double, double> plan_marginal_errors(const TransportPlan& p) {
  if (p.kind != PlanKind::Entropic) return {0.0, 0.0};
  const auto& g = p.grid;
  const double vol = g.cell_volume();
  GridKernel k(g, p.reg);
  const std::size_t n = g.size();
  std::vector<double> a(n), b(n);
  double ta = 0.0, tb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = p.first[i] * vol;
    b[i] = p.second[i] * vol;
    ta += a[i];
    tb += b[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    a[i] /= ta;
    b[i] /= tb;
  }
  const auto la = detail::log_masses(a), lb = detail::log_masses(b);
  std::vector<double> in(n), out(n);
  for (std::size_t j = 0; j < n; ++j) in[j] = lb[j] + p.g[j] / p.reg;
  k.apply(in, out);
  double e1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] > 0.0) e1 += std::abs(a[i] * std::exp(p.f[i] / p.reg + out[i]) - a[i]);
  }
  for (std::size_t i = 0; i < n; ++i) in[i] = la[i] + p.f[i] / p.reg;
  k.apply(in, out);
  double e2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (b[j] > 0.0) e2 += std::abs(b[j] * std::exp(p.g[j] / p.reg + out[j]) - b[j]);
  }
  return {e1, e2};
}

/// Physical flux j = (anchor - bary) * u_next / h, zero where u_next <= 1e-14.
inline VectorField flux_from_plan(const TransportPlan& plan, const ScalarField& u_next, double h) {
  if (!(h > 0.0)) throw ParameterError("time step must be positive");
  detail::require_same_grid(plan.grid, u_next.grid());
  double mismatch = 0.0;
  for (std::size_t k = 0; k < u_next.size(); ++k) mismatch += std::abs(plan.second[k] - u_next[k]);
  mismatch *= u_next.grid().cell_volume();
  if (mismatch > 1e-6) throw DomainError("plan second marginal does not match u_next");
  const int d = u_next.grid().dim;
  std::vector<double> j(u_next.size() * d, 0.0);
  for (std::size_t k = 0; k < u_next.size(); ++k) {
    if (u_next[k] <= 1e-14) continue;
    for (int a = 0; a < d; ++a) {
      j[k * d + a] = (plan.anchor[k * d + a] - plan.bary[k * d + a]) * u_next[k] / h;
    }
  }
  return {u_next.grid(), std::move(j)};
}

/// int |j|^2 / u with 0/0 = 0; +infinity if j != 0 where u = 0.
inline double dissipation_density(const ScalarField& u, const VectorField& j) {
  detail::require_same_grid(u.grid(), j.grid());
  const int d = u.grid().dim;
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (u[k] < 0.0) throw DomainError("dissipation of a negative density");
    double n2 = 0.0;
    for (int a = 0; a < d; ++a) n2 += j.at(k, a) * j.at(k, a);
    if (u[k] == 0.0) {
      if (n2 > 0.0) return std::numeric_limits<double>::infinity();
      continue;
    }
    s += n2 / u[k];
  }
  return s * u.grid().cell_volume();
}

/// Face flux of rho moving with cell velocity v, upwinded.
/// Face k along axis a sits between cell k and cell k + e_a.
inline std::vector<double> upwind_face_flux(const ScalarField& rho, const VectorField& v, int axis) {
  const auto& g = rho.grid();
  std::vector<double> F(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const std::size_t kp = g.shifted(k, axis, 1);
    const double vf = 0.5 * (v.at(k, axis) + v.at(kp, axis));
    F[k] = vf * (vf > 0.0 ? rho[k] : rho[kp]);
  }
  return F;
}

/// One explicit step of the discrete continuity equation with upwind fluxes.
inline ScalarField continuity_step(const ScalarField& rho, const VectorField& v, double dt) {
  const auto& g = rho.grid();
  std::vector<double> out(rho.vec());
  std::vector<double> div(g.size());
  for (int a = 0; a < g.dim; ++a) {
    const auto F = upwind_face_flux(rho, v, a);
    stencil::backward(F, g, a, div);
    for (std::size_t k = 0; k < g.size(); ++k) out[k] -= dt * div[k];
  }
  return {g, std::move(out)};
}

/// Time quadrature of int rho |v|^2 over a path on unit time with equal steps.
/// Consecutive densities must satisfy the upwind continuity step within 1e-6 (L1).
inline double benamou_brenier_action(const std::vector<std::pair<ScalarField, VectorField>>& path,
                                     double total_time = 1.0) {
  if (path.size() < 2) return 0.0;
  const double dt = total_time / static_cast<double>(path.size() - 1);
  double action = 0.0;
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const auto& [rho, v] = path[k];
    const auto next = continuity_step(rho, v, dt);
    if (l1_distance(next, path[k + 1].first) > 1e-6) {
      throw DomainError("path violates the continuity equation at step " + std::to_string(k));
    }
    double s = 0.0;
    for (std::size_t c = 0; c < rho.size(); ++c) {
      double n2 = 0.0;
      for (int a = 0; a < rho.grid().dim; ++a) n2 += v.at(c, a) * v.at(c, a);
      s += rho[c] * n2;
    }
    action += dt * s * rho.grid().cell_volume();
  }
  return action;
}

/// Exact in 1D, debiased entropic otherwise.
inline W2Result w2(const ScalarField& u, const ScalarField& v, double reg = 0.0) {
  if (u.grid().dim == 1 && reg <= 0.0) return w2_exact_1d(u, v);
  double r = reg;
  if (r <= 0.0) r = 2.0 * u.grid().dx(0) * u.grid().dx(0);
  return sinkhorn(u, v, r);
}

}  // namespace mmch
