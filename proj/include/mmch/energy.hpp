#pragma once

// Cahn-Hilliard free energy with the double well W(s) = s^2 (s-1)^2 / 4.
//
// The discrete energy is the exact energy of the continuous piecewise-linear
// interpolant u~ through the cell-center values (segments in 1D, each grid
// square split into two right triangles along the anti-diagonal in 2D).
// Its gradient part equals the forward-difference sum
// (eps/2) sum |D+ u|^2 dx^d, its potential part is integrated exactly, and
// the phase-indicator total variation of the same interpolant is also exact,
// so phase_indicator_tv(u) <= energy(u, eps) holds to round-off.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <span>
#include <vector>

#include "mmch/error.hpp"
#include "mmch/grid.hpp"

namespace mmch {

inline double w_eval(double s) { return 0.25 * s * s * (s - 1.0) * (s - 1.0); }
inline double w_prime(double s) { return 0.5 * s * (s - 1.0) * (2.0 * s - 1.0); }
inline double w_second(double s) { return 3.0 * s * s - 3.0 * s + 0.5; }

/// sqrt(2 W(s)) = |s (s-1)| / sqrt(2).
inline double phi_prime(double s) { return std::abs(s * (s - 1.0)) / std::sqrt(2.0); }

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-12, int max_depth = 50) {
  struct Rec {
    const std::function<double(double)>& f;
    double run(double a, double b, double fa, double fm, double fb, double whole, double tol,
               int depth) const {
      const double m = 0.5 * (a + b);
      const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double delta = left + right - whole;
      if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
      return run(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
             run(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  };
  if (a == b) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return Rec{f}.run(a, b, fa, fm, fb, whole, tol, max_depth);
}

/// phi(s) = int_0^s sqrt(2 W(r)) dr. Closed form on [0,1], quadrature outside.
inline double phi_eval(double s) {
  if (s >= 0.0 && s <= 1.0) return (s * s / 2.0 - s * s * s / 3.0) / std::sqrt(2.0);
  if (s > 1.0) {
    const double one = (0.5 - 1.0 / 3.0) / std::sqrt(2.0);
    return one + adaptive_simpson(phi_prime, 1.0, s);
  }
  return -adaptive_simpson(phi_prime, s, 0.0);
}

/// Surface tension sigma = phi(1), computed once by quadrature and checked
/// against sqrt(2)/12. A mismatch above 1e-10 aborts the process.
inline double surface_tension() {
  static const double sigma = [] {
    const double q = adaptive_simpson(phi_prime, 0.0, 1.0, 1e-14);
    const double closed = (0.5 - 1.0 / 3.0) / std::sqrt(2.0);
    if (std::abs(q - closed) > 1e-10) {
      std::cerr << "surface tension quadrature mismatch: " << q << " vs " << closed << "\n";
      std::abort();
    }
    return q;
  }();
  return sigma;
}

inline void require_eps(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ParameterError("eps must be positive");
}

namespace detail {

// 3-point Gauss-Legendre on [0,1], exact to degree 5.
inline constexpr double kGl3X[3] = {0.5 - 0.3872983346207417, 0.5, 0.5 + 0.3872983346207417};
inline constexpr double kGl3W[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

// 7-point triangle rule, exact to degree 5. Barycentric (l0, l1, l2), weights sum to 1.
struct TriRule {
  double l[7][3];
  double w[7];
};

inline const TriRule& tri_rule() {
  static const TriRule r = [] {
    TriRule t{};
    const double s15 = std::sqrt(15.0);
    const double a1 = (9.0 - 2.0 * s15) / 21.0, b1 = (6.0 + s15) / 21.0;
    const double a2 = (9.0 + 2.0 * s15) / 21.0, b2 = (6.0 - s15) / 21.0;
    const double w1 = (155.0 + s15) / 1200.0, w2 = (155.0 - s15) / 1200.0;
    const double pts[7][3] = {{1.0 / 3, 1.0 / 3, 1.0 / 3}, {a1, b1, b1}, {b1, a1, b1}, {b1, b1, a1},
                              {a2, b2, b2},                {b2, a2, b2}, {b2, b2, a2}};
    const double ws[7] = {0.225, w1, w1, w1, w2, w2, w2};
    for (int q = 0; q < 7; ++q) {
      for (int k = 0; k < 3; ++k) t.l[q][k] = pts[q][k];
      t.w[q] = ws[q];
    }
    return t;
  }();
  return r;
}

// Integral of W over a segment of length `len` with end values a, b.
inline double segment_w(double a, double b, double len, double* ga, double* gb) {
  double s = 0.0, da = 0.0, db = 0.0;
  for (int q = 0; q < 3; ++q) {
    const double t = kGl3X[q];
    const double v = a + t * (b - a);
    s += kGl3W[q] * w_eval(v);
    if (ga) {
      const double wp = kGl3W[q] * w_prime(v);
      da += wp * (1.0 - t);
      db += wp * t;
    }
  }
  if (ga) {
    *ga += da * len;
    *gb += db * len;
  }
  return s * len;
}

// Integral of W over a triangle of area `area` with vertex values v[3].
inline double triangle_w(const double v[3], double area, double* g[3]) {
  const auto& r = tri_rule();
  double s = 0.0;
  double d[3] = {0.0, 0.0, 0.0};
  for (int q = 0; q < 7; ++q) {
    const double x = r.l[q][0] * v[0] + r.l[q][1] * v[1] + r.l[q][2] * v[2];
    s += r.w[q] * w_eval(x);
    if (g) {
      const double wp = r.w[q] * w_prime(x);
      for (int k = 0; k < 3; ++k) d[k] += wp * r.l[q][k];
    }
  }
  if (g) {
    for (int k = 0; k < 3; ++k) *g[k] += d[k] * area;
  }
  return s * area;
}

// int_T f(u~) dA for u~ linear on a triangle with vertex values v, where f is a
// polynomial of degree <= 2 on each of (-inf,0], [0,1], [1,inf). Uses the
// piecewise-linear distribution of u~ over T and splits at the kinks 0 and 1.
template <class F>
inline double triangle_level_integral(double a, double b, double c, double area, F&& f) {
  if (a > b) std::swap(a, b);
  if (b > c) std::swap(b, c);
  if (a > b) std::swap(a, b);
  const double span_ac = c - a;
  if (!(span_ac > 1e-14 * (1.0 + std::abs(a)))) return area * f((a + b + c) / 3.0);
  // density of u~ values: rises linearly on [a,b], falls linearly on [b,c]
  const double peak = 2.0 * area / span_ac;
  auto piece = [&](double lo, double hi, auto&& rho) {
    double s = 0.0;
    double cuts[4] = {lo, 0.0, 1.0, hi};
    double pts[4];
    int m = 0;
    pts[m++] = lo;
    for (int k = 1; k <= 2; ++k) {
      if (cuts[k] > lo && cuts[k] < hi) pts[m++] = cuts[k];
    }
    pts[m++] = hi;
    for (int k = 0; k + 1 < m; ++k) {
      const double x0 = pts[k], x1 = pts[k + 1];
      const double len = x1 - x0;
      for (int q = 0; q < 3; ++q) {
        const double x = x0 + kGl3X[q] * len;
        s += kGl3W[q] * len * f(x) * rho(x);
      }
    }
    return s;
  };
  double total = 0.0;
  if (b > a) total += piece(a, b, [&](double s) { return peak * (s - a) / (b - a); });
  if (c > b) total += piece(b, c, [&](double s) { return peak * (c - s) / (c - b); });
  return total;
}

}  // namespace detail

struct EnergyParts {
  double gradient = 0.0;   // (eps/2) int |grad u~|^2
  double potential = 0.0;  // (1/eps) int W(u~)
  [[nodiscard]] double total() const { return gradient + potential; }
};

/// Energy of raw cell values. When `grad` is non-empty it receives dE/du_i
/// (partial derivatives, not divided by the cell volume).
inline EnergyParts energy_parts(std::span<const double> u, const GridSpec& g, double eps,
                                std::span<double> grad = {}) {
  require_eps(eps);
  const bool want = !grad.empty();
  if (want) std::fill(grad.begin(), grad.end(), 0.0);
  EnergyParts out;
  std::vector<double> gw;
  if (want) gw.assign(g.size(), 0.0);
  if (g.dim == 1) {
    const int n = g.n[0];
    const double dx = g.dx(0);
    double sg = 0.0, sw = 0.0;
    for (int i = 0; i < n; ++i) {
      const int ip = i + 1 == n ? 0 : i + 1;
      const double d = (u[ip] - u[i]) / dx;
      sg += d * d;
      sw += detail::segment_w(u[i], u[ip], dx, want ? &gw[i] : nullptr, want ? &gw[ip] : nullptr);
      if (want) {
        grad[ip] += eps * d;
        grad[i] -= eps * d;
      }
    }
    out.gradient = 0.5 * eps * sg * dx;
    out.potential = sw / eps;
  } else {
    const int n0 = g.n[0], n1 = g.n[1];
    const double dx = g.dx(0), dy = g.dx(1);
    const double area = 0.5 * dx * dy;
    double sg = 0.0, sw = 0.0;
    for (int i = 0; i < n0; ++i) {
      const int ip = i + 1 == n0 ? 0 : i + 1;
      for (int j = 0; j < n1; ++j) {
        const int jp = j + 1 == n1 ? 0 : j + 1;
        const std::size_t k00 = static_cast<std::size_t>(i) * n1 + j;
        const std::size_t k10 = static_cast<std::size_t>(ip) * n1 + j;
        const std::size_t k01 = static_cast<std::size_t>(i) * n1 + jp;
        const std::size_t k11 = static_cast<std::size_t>(ip) * n1 + jp;
        const double ddx = (u[k10] - u[k00]) / dx;
        const double ddy = (u[k01] - u[k00]) / dy;
        sg += ddx * ddx + ddy * ddy;
        const double lo[3] = {u[k00], u[k10], u[k01]};
        const double hi[3] = {u[k11], u[k01], u[k10]};
        if (want) {
          double* glo[3] = {&gw[k00], &gw[k10], &gw[k01]};
          double* ghi[3] = {&gw[k11], &gw[k01], &gw[k10]};
          sw += detail::triangle_w(lo, area, glo);
          sw += detail::triangle_w(hi, area, ghi);
          const double cx = eps * ddx * dy, cy = eps * ddy * dx;
          grad[k10] += cx;
          grad[k00] -= cx;
          grad[k01] += cy;
          grad[k00] -= cy;
        } else {
          sw += detail::triangle_w(lo, area, nullptr);
          sw += detail::triangle_w(hi, area, nullptr);
        }
      }
    }
    out.gradient = 0.5 * eps * sg * dx * dy;
    out.potential = sw / eps;
  }
  if (want) {
    for (std::size_t k = 0; k < g.size(); ++k) grad[k] += gw[k] / eps;
  }
  return out;
}

/// E_eps(u) = int (eps/2)|grad u|^2 + W(u)/eps.
inline double energy(const ScalarField& u, double eps) {
  return energy_parts(u.values(), u.grid(), eps).total();
}

/// L2 functional derivative dE/du (partials divided by the cell volume).
inline std::vector<double> energy_derivative(const ScalarField& u, double eps) {
  std::vector<double> g(u.size());
  energy_parts(u.values(), u.grid(), eps, g);
  const double inv = 1.0 / u.grid().cell_volume();
  for (double& x : g) x *= inv;
  return g;
}

/// int |grad(phi o u~)| for the piecewise-linear interpolant.
inline double phase_indicator_tv(const ScalarField& field) {
  const auto& g = field.grid();
  const auto u = field.values();
  if (g.dim == 1) {
    const int n = g.n[0];
    std::vector<double> p(n);
    for (int i = 0; i < n; ++i) p[i] = phi_eval(u[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::abs(p[i + 1 == n ? 0 : i + 1] - p[i]);
    return s;
  }
  const int n0 = g.n[0], n1 = g.n[1];
  const double dx = g.dx(0), dy = g.dx(1);
  const double area = 0.5 * dx * dy;
  double s = 0.0;
  for (int i = 0; i < n0; ++i) {
    const int ip = i + 1 == n0 ? 0 : i + 1;
    for (int j = 0; j < n1; ++j) {
      const int jp = j + 1 == n1 ? 0 : j + 1;
      const double v00 = u[static_cast<std::size_t>(i) * n1 + j];
      const double v10 = u[static_cast<std::size_t>(ip) * n1 + j];
      const double v01 = u[static_cast<std::size_t>(i) * n1 + jp];
      const double v11 = u[static_cast<std::size_t>(ip) * n1 + jp];
      const double glo = std::hypot((v10 - v00) / dx, (v01 - v00) / dy);
      const double ghi = std::hypot((v11 - v01) / dx, (v11 - v10) / dy);
      if (glo > 0.0) s += glo * detail::triangle_level_integral(v00, v10, v01, area, phi_prime);
      if (ghi > 0.0) s += ghi * detail::triangle_level_integral(v11, v01, v10, area, phi_prime);
    }
  }
  return s;
}

/// Energy-stress tensor (e I - eps grad u (x) grad u) with cell-centered gradients.
inline TensorField stress_tensor(const ScalarField& u, double eps) {
  require_eps(eps);
  const auto& g = u.grid();
  const auto gu = centered_gradient(u);
  const std::size_t per = g.dim == 1 ? 1 : 3;
  std::vector<double> up(g.size() * per);
  for (std::size_t k = 0; k < g.size(); ++k) {
    double n2 = 0.0;
    for (int a = 0; a < g.dim; ++a) n2 += gu.at(k, a) * gu.at(k, a);
    const double e = 0.5 * eps * n2 + w_eval(u[k]) / eps;
    if (g.dim == 1) {
      up[k] = e - eps * gu.at(k, 0) * gu.at(k, 0);
    } else {
      up[3 * k + 0] = e - eps * gu.at(k, 0) * gu.at(k, 0);
      up[3 * k + 1] = -eps * gu.at(k, 0) * gu.at(k, 1);
      up[3 * k + 2] = e - eps * gu.at(k, 1) * gu.at(k, 1);
    }
  }
  return TensorField::from_upper(g, up);
}

/// Pointwise energy density with cell-centered gradients (matches stress_tensor).
inline std::vector<double> energy_density(const ScalarField& u, double eps) {
  require_eps(eps);
  const auto gu = centered_gradient(u);
  std::vector<double> e(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    double n2 = 0.0;
    for (int a = 0; a < u.grid().dim; ++a) n2 += gu.at(k, a) * gu.at(k, a);
    e[k] = 0.5 * eps * n2 + w_eval(u[k]) / eps;
  }
  return e;
}

/// U(u) = int u log u, with 0 log 0 = 0.
inline double entropy(const ScalarField& u) {
  double s = 0.0;
  for (double v : u.values()) {
    if (v < 0.0) throw DomainError("entropy of a negative field");
    if (v > 0.0) s += v * std::log(v);
  }
  return s * u.grid().cell_volume();
}

namespace detail {

struct Derivs {
  std::vector<double> d[2];      // first derivatives of a scalar
  std::vector<double> j[2][2];   // j[a][b] = d_b xi_a
  std::vector<double> div;       // div xi
  std::vector<double> ddiv[2];   // grad(div xi)
};

inline std::vector<double> centered_diff(std::span<const double> f, const GridSpec& g, int axis) {
  std::vector<double> out(f.size());
  stencil::centered(f, g, axis, out);
  return out;
}

inline Derivs xi_derivs(const VectorField& xi) {
  const auto& g = xi.grid();
  Derivs d;
  d.div.assign(g.size(), 0.0);
  for (int a = 0; a < g.dim; ++a) {
    const auto comp = xi.component(a);
    for (int b = 0; b < g.dim; ++b) d.j[a][b] = centered_diff(comp, g, b);
    for (std::size_t k = 0; k < g.size(); ++k) d.div[k] += d.j[a][a][k];
  }
  for (int a = 0; a < g.dim; ++a) d.ddiv[a] = centered_diff(d.div, g, a);
  return d;
}

}  // namespace detail

/// int -grad u . (grad xi) grad u - 1/2 |grad u|^2 div xi - u grad u . grad(div xi).
///
/// This is d/dt|_0 of int 1/2 |grad u_t|^2 along the push-forward
/// u_t = (id + t xi)_# u.
inline double dirichlet_first_variation(const ScalarField& u, const VectorField& xi,
                                        bool drop_third_term = false) {
  detail::require_same_grid(u.grid(), xi.grid());
  const auto& g = u.grid();
  const auto dxi = detail::xi_derivs(xi);
  std::vector<double> du[2];
  for (int a = 0; a < g.dim; ++a) du[a] = detail::centered_diff(u.values(), g, a);
  double s = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    double quad = 0.0, n2 = 0.0, third = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      n2 += du[a][k] * du[a][k];
      third += du[a][k] * dxi.ddiv[a][k];
      for (int b = 0; b < g.dim; ++b) quad += du[a][k] * dxi.j[a][b][k] * du[b][k];
    }
    s += -quad - 0.5 * n2 * dxi.div[k];
    if (!drop_third_term) s -= u[k] * third;
  }
  return s * g.cell_volume();
}

/// First variation of E_eps along the push-forward by xi:
/// eps * (Dirichlet part) - (1/eps) int (u W'(u) - W(u)) div xi.
inline double energy_first_variation(const ScalarField& u, double eps, const VectorField& xi) {
  require_eps(eps);
  const auto& g = u.grid();
  const auto dxi = detail::xi_derivs(xi);
  double sw = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    sw += (u[k] * w_prime(u[k]) - w_eval(u[k])) * dxi.div[k];
  }
  return eps * dirichlet_first_variation(u, xi) - sw * g.cell_volume() / eps;
}

/// Discrete push-forward direction du = -div_h(u_f xi_f), with u and xi
/// averaged onto the faces of the forward/backward stencil pair.
inline std::vector<double> pushforward_direction(const ScalarField& u, const VectorField& xi) {
  detail::require_same_grid(u.grid(), xi.grid());
  const auto& g = u.grid();
  std::vector<double> du(g.size(), 0.0);
  for (int a = 0; a < g.dim; ++a) {
    const double inv = 1.0 / g.dx(a);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto kp = g.shifted(k, a, 1);
      const double flux = 0.25 * (u[k] + u[kp]) * (xi.at(k, a) + xi.at(kp, a));
      du[k] -= flux * inv;
      du[kp] += flux * inv;
    }
  }
  return du;
}

/// Directional derivative of the discrete energy along pushforward_direction:
/// the grid counterpart of energy_first_variation.
inline double discrete_energy_variation(const ScalarField& u, double eps, const VectorField& xi) {
  require_eps(eps);
  const auto du = pushforward_direction(u, xi);
  std::vector<double> grad(u.size());
  energy_parts(u.values(), u.grid(), eps, grad);
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) s += grad[k] * du[k];
  return s;
}

/// Single-time weak form of the flux equation, LHS - RHS:
/// int j . xi + dE(u; xi), where dE is the first variation of the energy along
/// the push-forward by xi (discrete_energy_variation).
/// j is the physical flux, (u_n - u_{n-1})/h + div j = 0.
inline double weak_form_residual(const ScalarField& u, const VectorField& j, double eps,
                                 const VectorField& xi) {
  detail::require_same_grid(u.grid(), j.grid());
  detail::require_same_grid(u.grid(), xi.grid());
  return dot_integral(j, xi) + discrete_energy_variation(u, eps, xi);
}

}  // namespace mmch
