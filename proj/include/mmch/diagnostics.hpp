#pragma once

// Sharp-interface diagnostics: interface extraction, perimeters, equipartition,
// normal alignment, stress limit, Hele-Shaw and continuity residuals, Hoelder
// modulus and epsilon sweeps.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mmch/energy.hpp"
#include "mmch/error.hpp"
#include "mmch/grid.hpp"
#include "mmch/initdata.hpp"
#include "mmch/jko.hpp"
#include "mmch/test_fields.hpp"
#include "mmch/transport.hpp"

namespace mmch {

using Point = std::array<double, 2>;

/// Oriented polyline. In 2D the high phase lies to the left of the direction
/// of travel and normals[k] (segment k) is the unit right normal, pointing
/// toward {u < level}. Closed curves repeat the first vertex at the end.
/// In 1D a curve is a single crossing point with normal +-e1.
struct InterfaceCurve {
  std::vector<Point> vertices;
  std::vector<Point> normals;
  bool closed = false;

  [[nodiscard]] std::size_t segments() const { return normals.size(); }
};

namespace detail {

inline Point lerp(Point a, Point b, double t) { return {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}; }
inline double cross(Point a, Point b) { return a[0] * b[1] - a[1] * b[0]; }
inline Point sub(Point a, Point b) { return {a[0] - b[0], a[1] - b[1]}; }

struct Segment {
  std::int64_t from, to;  // edge keys
  Point p, q;
};

}  // namespace detail

/// Marching squares on the cell-centre lattice (no wrap across the seam).
/// Saddles are resolved with the mean of the four corners. In 1D returns one
/// point per sign change between neighbouring cells.
inline std::vector<InterfaceCurve> extract_interface(const ScalarField& u, double level = 0.5) {
  const auto& g = u.grid();
  std::vector<InterfaceCurve> out;
  auto above = [&](double v) { return v > level; };
  if (g.dim == 1) {
    for (int i = 0; i + 1 < g.n[0]; ++i) {
      const double a = u[i], b = u[i + 1];
      if (above(a) == above(b)) continue;
      const double t = (level - a) / (b - a);
      InterfaceCurve c;
      c.vertices.push_back({g.coord(0, i) + t * g.dx(0), 0.0});
      c.normals.push_back({above(a) ? 1.0 : -1.0, 0.0});
      out.push_back(std::move(c));
    }
    return out;
  }

  const int n0 = g.n[0], n1 = g.n[1];
  auto val = [&](int i, int j) { return u[g.index(i, j)]; };
  auto pt = [&](int i, int j) -> Point { return {g.coord(0, i), g.coord(1, j)}; };
  // edge keys: 2 * cell index + (0 for the edge along axis 0, 1 along axis 1)
  auto hkey = [&](int i, int j) { return 2 * static_cast<std::int64_t>(g.index(i, j)); };
  auto vkey = [&](int i, int j) { return 2 * static_cast<std::int64_t>(g.index(i, j)) + 1; };
  auto cut = [&](int ia, int ja, int ib, int jb) {
    const double a = val(ia, ja), b = val(ib, jb);
    return detail::lerp(pt(ia, ja), pt(ib, jb), (level - a) / (b - a));
  };

  std::vector<detail::Segment> segs;
  for (int i = 0; i + 1 < n0; ++i) {
    for (int j = 0; j + 1 < n1; ++j) {
      // corners counter-clockwise: c0 (i,j), c1 (i+1,j), c2 (i+1,j+1), c3 (i,j+1)
      const int ci[4] = {i, i + 1, i + 1, i};
      const int cj[4] = {j, j, j + 1, j + 1};
      bool hi[4];
      int mask = 0;
      for (int k = 0; k < 4; ++k) {
        hi[k] = above(val(ci[k], cj[k]));
        mask |= (hi[k] ? 1 : 0) << k;
      }
      if (mask == 0 || mask == 15) continue;
      // edge e_k joins corner k and corner k+1 (mod 4)
      std::int64_t key[4] = {hkey(i, j), vkey(i + 1, j), hkey(i, j + 1), vkey(i, j)};
      Point p[4];
      bool crossed[4];
      for (int k = 0; k < 4; ++k) {
        const int a = k, b = (k + 1) % 4;
        crossed[k] = hi[a] != hi[b];
        if (crossed[k]) p[k] = cut(ci[a], cj[a], ci[b], cj[b]);
      }
      std::vector<std::pair<int, int>> pairs;
      const int ncross = crossed[0] + crossed[1] + crossed[2] + crossed[3];
      if (ncross == 2) {
        int e[2], m = 0;
        for (int k = 0; k < 4; ++k) {
          if (crossed[k]) e[m++] = k;
        }
        pairs.emplace_back(e[0], e[1]);
      } else {
        double mean = 0.0;
        for (int k = 0; k < 4; ++k) mean += val(ci[k], cj[k]);
        mean *= 0.25;
        if (above(mean) == hi[0]) {
          // c0 and c2 connect through the centre: cut off c1 and c3
          pairs.emplace_back(0, 1);
          pairs.emplace_back(2, 3);
        } else {
          pairs.emplace_back(3, 0);
          pairs.emplace_back(1, 2);
        }
      }
      for (auto [ea, eb] : pairs) {
        detail::Segment s{key[ea], key[eb], p[ea], p[eb]};
        // orient with the high side on the left: test the corner farthest from the line
        const auto d = detail::sub(s.q, s.p);
        double best = 0.0;
        bool left_is_high = true;
        for (int k = 0; k < 4; ++k) {
          const double c = detail::cross(d, detail::sub(pt(ci[k], cj[k]), s.p));
          if (std::abs(c) > std::abs(best)) {
            best = c;
            left_is_high = (c > 0.0) == hi[k];
          }
        }
        if (!left_is_high) {
          std::swap(s.from, s.to);
          std::swap(s.p, s.q);
        }
        segs.push_back(s);
      }
    }
  }

  std::unordered_map<std::int64_t, std::size_t> by_start;
  std::unordered_map<std::int64_t, int> ends;
  for (std::size_t k = 0; k < segs.size(); ++k) {
    by_start.emplace(segs[k].from, k);
    ++ends[segs[k].to];
  }
  std::vector<char> used(segs.size(), 0);
  auto trace = [&](std::size_t first) {
    InterfaceCurve c;
    c.vertices.push_back(segs[first].p);
    std::size_t k = first;
    while (true) {
      used[k] = 1;
      c.vertices.push_back(segs[k].q);
      const auto d = detail::sub(segs[k].q, segs[k].p);
      const double len = std::hypot(d[0], d[1]);
      c.normals.push_back(len > 0.0 ? Point{d[1] / len, -d[0] / len} : Point{1.0, 0.0});
      const auto it = by_start.find(segs[k].to);
      if (it == by_start.end()) break;
      if (used[it->second]) {
        c.closed = it->second == first;
        break;
      }
      k = it->second;
    }
    if (c.closed) c.vertices.back() = c.vertices.front();
    out.push_back(std::move(c));
  };
  // open chains start where no segment ends
  for (std::size_t k = 0; k < segs.size(); ++k) {
    if (!used[k] && !ends.count(segs[k].from)) trace(k);
  }
  for (std::size_t k = 0; k < segs.size(); ++k) {
    if (!used[k]) trace(k);
  }
  return out;
}

/// Arclength in 2D, number of crossing points in 1D.
inline double perimeter(const std::vector<InterfaceCurve>& curves) {
  double s = 0.0;
  for (const auto& c : curves) {
    if (c.vertices.size() == 1) {
      s += 1.0;
      continue;
    }
    for (std::size_t k = 0; k + 1 < c.vertices.size(); ++k) {
      const auto d = detail::sub(c.vertices[k + 1], c.vertices[k]);
      s += std::hypot(d[0], d[1]);
    }
  }
  return s;
}

/// Perimeter estimate phase_indicator_tv(u) / sigma.
inline double perimeter_tv(const ScalarField& u) { return phase_indicator_tv(u) / surface_tension(); }

namespace detail {

/// Per dual cell k (the square or segment spanned by k and its forward
/// neighbours): the gradient part |D+ u|^2 and the exact P1 integral of W,
/// divided by the cell volume. Summing either over k reproduces energy_parts.
struct DualCellParts {
  std::vector<double> grad2;
  std::vector<double> wavg;
};

inline DualCellParts dual_cell_parts(const ScalarField& field) {
  const auto& g = field.grid();
  const auto u = field.values();
  DualCellParts d;
  d.grad2.assign(g.size(), 0.0);
  d.wavg.assign(g.size(), 0.0);
  const double vol = g.cell_volume();
  if (g.dim == 1) {
    const int n = g.n[0];
    const double dx = g.dx(0);
    for (int i = 0; i < n; ++i) {
      const int ip = i + 1 == n ? 0 : i + 1;
      const double dd = (u[ip] - u[i]) / dx;
      d.grad2[i] = dd * dd;
      d.wavg[i] = segment_w(u[i], u[ip], dx, nullptr, nullptr) / vol;
    }
    return d;
  }
  const int n0 = g.n[0], n1 = g.n[1];
  const double dx = g.dx(0), dy = g.dx(1), area = 0.5 * dx * dy;
  for (int i = 0; i < n0; ++i) {
    const int ip = i + 1 == n0 ? 0 : i + 1;
    for (int j = 0; j < n1; ++j) {
      const int jp = j + 1 == n1 ? 0 : j + 1;
      const std::size_t k00 = g.index(i, j), k10 = g.index(ip, j), k01 = g.index(i, jp), k11 = g.index(ip, jp);
      const double ddx = (u[k10] - u[k00]) / dx, ddy = (u[k01] - u[k00]) / dy;
      d.grad2[k00] = ddx * ddx + ddy * ddy;
      const double lo[3] = {u[k00], u[k10], u[k01]};
      const double hi[3] = {u[k11], u[k01], u[k10]};
      d.wavg[k00] = (triangle_w(lo, area, nullptr) + triangle_w(hi, area, nullptr)) / vol;
    }
  }
  return d;
}

}  // namespace detail

struct Equipartition {
  double deficit_l2 = 0.0;     // int (a - b)^2
  double deficit_cross = 0.0;  // int |a^2 - b^2|
  double a2 = 0.0;             // int a^2, the gradient part of E
  double b2 = 0.0;             // int b^2, the potential part of E
};

/// a = (eps/2)^{1/2} |grad u|, b = eps^{-1/2} W(u)^{1/2}, both on the dual
/// cells of the energy discretization, so int a^2 + int b^2 = E_eps(u).
inline Equipartition equipartition_deficit(const ScalarField& u, double eps) {
  require_eps(eps);
  const auto parts = detail::dual_cell_parts(u);
  const double vol = u.grid().cell_volume();
  Equipartition e;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double a2 = 0.5 * eps * parts.grad2[k];
    const double b2 = std::max(parts.wavg[k], 0.0) / eps;
    const double a = std::sqrt(a2), b = std::sqrt(b2);
    e.deficit_l2 += (a - b) * (a - b);
    e.deficit_cross += std::abs(a2 - b2);
    e.a2 += a2;
    e.b2 += b2;
  }
  e.deficit_l2 *= vol;
  e.deficit_cross *= vol;
  e.a2 *= vol;
  e.b2 *= vol;
  const double E = energy(u, eps);
  if (std::abs(e.a2 + e.b2 - E) > 1e-12 * std::max(1.0, E)) {
    throw DomainError("equipartition split does not reproduce the energy");
  }
  return e;
}

namespace detail {

/// Per dual cell: weight w_k = int |grad(phi o u~)| over the cell and the
/// weighted mean direction of -grad u~ (unit; e1 where the weight vanishes).
struct PhaseNormals {
  std::vector<double> weight;
  std::vector<Point> nu;
};

inline PhaseNormals phase_normals(const ScalarField& field) {
  const auto& g = field.grid();
  const auto u = field.values();
  PhaseNormals r;
  r.weight.assign(g.size(), 0.0);
  r.nu.assign(g.size(), Point{1.0, 0.0});
  if (g.dim == 1) {
    const int n = g.n[0];
    for (int i = 0; i < n; ++i) {
      const int ip = i + 1 == n ? 0 : i + 1;
      const double dp = phi_eval(u[ip]) - phi_eval(u[i]);
      r.weight[i] = std::abs(dp);
      if (dp != 0.0) r.nu[i] = {dp > 0.0 ? -1.0 : 1.0, 0.0};
    }
    return r;
  }
  const int n0 = g.n[0], n1 = g.n[1];
  const double dx = g.dx(0), dy = g.dx(1), area = 0.5 * dx * dy;
  for (int i = 0; i < n0; ++i) {
    const int ip = i + 1 == n0 ? 0 : i + 1;
    for (int j = 0; j < n1; ++j) {
      const int jp = j + 1 == n1 ? 0 : j + 1;
      const std::size_t k00 = g.index(i, j), k10 = g.index(ip, j), k01 = g.index(i, jp), k11 = g.index(ip, jp);
      const double v00 = u[k00], v10 = u[k10], v01 = u[k01], v11 = u[k11];
      const Point glo{(v10 - v00) / dx, (v01 - v00) / dy};
      const Point ghi{(v11 - v01) / dx, (v11 - v10) / dy};
      const double nlo = std::hypot(glo[0], glo[1]), nhi = std::hypot(ghi[0], ghi[1]);
      double wlo = 0.0, whi = 0.0;
      if (nlo > 0.0) wlo = nlo * triangle_level_integral(v00, v10, v01, area, phi_prime);
      if (nhi > 0.0) whi = nhi * triangle_level_integral(v11, v01, v10, area, phi_prime);
      Point m{0.0, 0.0};
      if (wlo > 0.0) m = {m[0] - wlo * glo[0] / nlo, m[1] - wlo * glo[1] / nlo};
      if (whi > 0.0) m = {m[0] - whi * ghi[0] / nhi, m[1] - whi * ghi[1] / nhi};
      const double nm = std::hypot(m[0], m[1]);
      r.weight[k00] = wlo + whi;
      if (nm > 0.0) r.nu[k00] = {m[0] / nm, m[1] / nm};
    }
  }
  return r;
}

}  // namespace detail

/// Diffuse normal nu_eps = -grad(phi o u)/|grad(phi o u)| per dual cell.
inline VectorField phase_normal(const ScalarField& u) {
  const auto pn = detail::phase_normals(u);
  const auto& g = u.grid();
  std::vector<double> d(g.size() * g.dim);
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (int a = 0; a < g.dim; ++a) d[k * g.dim + a] = pn.nu[k][a];
  }
  return {g, std::move(d)};
}

/// int |nu_eps - nu_star|^2 |grad(phi o u)|. Requires |nu_star| <= 1 + 1e-9.
inline double normal_alignment_deficit(const ScalarField& u, double eps, const VectorField& nu_star) {
  require_eps(eps);
  detail::require_same_grid(u.grid(), nu_star.grid());
  const auto& g = u.grid();
  for (std::size_t k = 0; k < g.size(); ++k) {
    double n2 = 0.0;
    for (int a = 0; a < g.dim; ++a) n2 += nu_star.at(k, a) * nu_star.at(k, a);
    if (std::sqrt(n2) > 1.0 + 1e-9) throw ParameterError("nu_star must satisfy |nu_star| <= 1");
  }
  const auto pn = detail::phase_normals(u);
  double s = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (pn.weight[k] == 0.0) continue;
    double d2 = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      const double d = pn.nu[k][a] - nu_star.at(k, a);
      d2 += d * d;
    }
    s += d2 * pn.weight[k];
  }
  return s;
}

namespace detail {

// Bilinear interpolation of a cell-centred array (clamped at the box edge).
inline double bilinear(const std::vector<double>& f, const GridSpec& g, Point x) {
  double s[2];
  int i[2];
  for (int a = 0; a < 2; ++a) {
    const double r = (x[a] - g.origin[a]) / g.dx(a) - 0.5;
    const int lo = std::clamp(static_cast<int>(std::floor(r)), 0, g.n[a] - 2);
    i[a] = lo;
    s[a] = std::clamp(r - lo, 0.0, 1.0);
  }
  const double f00 = f[g.index(i[0], i[1])], f10 = f[g.index(i[0] + 1, i[1])];
  const double f01 = f[g.index(i[0], i[1] + 1)], f11 = f[g.index(i[0] + 1, i[1] + 1)];
  return (1 - s[0]) * (1 - s[1]) * f00 + s[0] * (1 - s[1]) * f10 + (1 - s[0]) * s[1] * f01 + s[0] * s[1] * f11;
}

}  // namespace detail

/// | int T_eps : grad xi  -  sigma int_curves (div xi - nu . grad xi nu) |,
/// grad xi by centred differences, interpolated bilinearly onto the curves.
inline double stress_limit_gap(const ScalarField& u, double eps, const VectorField& xi) {
  require_eps(eps);
  detail::require_same_grid(u.grid(), xi.grid());
  const auto& g = u.grid();
  const auto T = stress_tensor(u, eps);
  const auto dxi = detail::xi_derivs(xi);
  double bulk = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (int a = 0; a < g.dim; ++a) {
      for (int b = 0; b < g.dim; ++b) bulk += T.at(k, a, b) * dxi.j[a][b][k];
    }
  }
  bulk *= g.cell_volume();
  double sharp = 0.0;
  if (g.dim == 2) {
    for (const auto& c : extract_interface(u)) {
      for (std::size_t s = 0; s < c.segments(); ++s) {
        const auto p = c.vertices[s], q = c.vertices[s + 1];
        const Point mid{0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])};
        const double len = std::hypot(q[0] - p[0], q[1] - p[1]);
        const auto nu = c.normals[s];
        double J[2][2];
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) J[a][b] = detail::bilinear(dxi.j[a][b], g, mid);
        }
        double nJn = 0.0;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) nJn += nu[a] * J[a][b] * nu[b];
        }
        sharp += (J[0][0] + J[1][1] - nJn) * len;
      }
    }
  }
  // in 1D the tangential projector I - nu (x) nu vanishes
  return std::abs(bulk - surface_tension() * sharp);
}

/// Analytic planar vector field with its Jacobian J[a][b] = d_b xi_a.
struct AnalyticField {
  std::function<Point(Point)> value;
  std::function<std::array<std::array<double, 2>, 2>(Point)> jacobian;

  template <class F>
  static AnalyticField from(const F& f) {
    return {[f](Point x) { return f.value(x); }, [f](Point x) { return f.jacobian(x); }};
  }
  [[nodiscard]] VectorField sample(const GridSpec& g) const {
    std::vector<double> d(g.size() * 2);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto v = value(g.point(k));
      d[2 * k] = v[0];
      d[2 * k + 1] = v[1];
    }
    return {g, std::move(d)};
  }
};

namespace detail {

/// Cells whose centres lie inside the closed curves (even-odd rule).
inline std::vector<char> inside_mask(const std::vector<InterfaceCurve>& curves, const GridSpec& g) {
  std::vector<char> mask(g.size(), 0);
  std::vector<double> ys;
  for (int i = 0; i < g.n[0]; ++i) {
    const double x = g.coord(0, i);
    ys.clear();
    for (const auto& c : curves) {
      if (!c.closed) continue;
      for (std::size_t s = 0; s + 1 < c.vertices.size(); ++s) {
        const auto p = c.vertices[s], q = c.vertices[s + 1];
        if ((p[0] <= x) == (q[0] <= x)) continue;
        ys.push_back(p[1] + (x - p[0]) / (q[0] - p[0]) * (q[1] - p[1]));
      }
    }
    std::sort(ys.begin(), ys.end());
    std::size_t m = 0;
    for (int j = 0; j < g.n[1]; ++j) {
      const double y = g.coord(1, j);
      while (m < ys.size() && ys[m] < y) ++m;
      mask[g.index(i, j)] = static_cast<char>(m % 2);
    }
  }
  return mask;
}

}  // namespace detail

/// int_{dOmega} (div xi - nu . grad xi nu) dH^1 over the curves, 3-point
/// Gauss quadrature per segment.
inline double hele_shaw_boundary_term(const std::vector<InterfaceCurve>& curves, const AnalyticField& xi) {
  double rhs = 0.0;
  for (const auto& c : curves) {
    for (std::size_t s = 0; s < c.segments(); ++s) {
      const auto p = c.vertices[s], q = c.vertices[s + 1];
      const double len = std::hypot(q[0] - p[0], q[1] - p[1]);
      const auto nu = c.normals[s];
      for (int r = 0; r < 3; ++r) {
        const auto J = xi.jacobian(detail::lerp(p, q, detail::kGl3X[r]));
        double nJn = 0.0;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) nJn += nu[a] * J[a][b] * nu[b];
        }
        rhs += detail::kGl3W[r] * len * (J[0][0] + J[1][1] - nJn);
      }
    }
  }
  return rhs;
}

/// | int_Omega xi . j  -  int_{dOmega} (div xi - nu . grad xi nu) dH^1 | for
/// a divergence-free analytic xi. Omega is the region enclosed by the closed
/// curves, evaluated by a cell-centre mask; the boundary term uses 3-point
/// Gauss quadrature per segment. Throws DomainError when |div xi| > 1e-10 at
/// some cell centre, ParameterError in 1D.
inline double hele_shaw_residual(const std::vector<InterfaceCurve>& curves, const VectorField& j,
                                 const AnalyticField& xi) {
  const auto& g = j.grid();
  if (g.dim != 2) throw ParameterError("the Hele-Shaw residual is defined for planar fields");
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto J = xi.jacobian(g.point(k));
    if (std::abs(J[0][0] + J[1][1]) > 1e-10) throw DomainError("test field is not divergence-free");
  }
  const auto mask = detail::inside_mask(curves, g);
  double lhs = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!mask[k]) continue;
    const auto v = xi.value(g.point(k));
    lhs += v[0] * j.at(k, 0) + v[1] * j.at(k, 1);
  }
  lhs *= g.cell_volume();
  return std::abs(lhs - hele_shaw_boundary_term(curves, xi));
}

/// Discrete-time weak continuity equation with the index shift
///   int u_0 zeta_0 + sum_{n<N} int u_n (zeta_{n+1} - zeta_n) + h sum_{n>=1} int j_n . grad zeta_n,
/// zeta_n = zeta(., n h). Z provides value(x, t) and grad(x, t); zeta must
/// vanish at t = N h.
template <class Z>
double continuity_residual(const Trajectory& tr, const Z& zeta) {
  const auto& cfg = tr.cfg;
  const auto& g = cfg.grid;
  const double h = cfg.h;
  const std::size_t N = tr.steps();
  auto slice = [&](std::size_t n) {
    std::vector<double> z(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) z[k] = zeta.value(g.point(k), n * h);
    return z;
  };
  const double vol = g.cell_volume();
  auto z_prev = slice(0);
  double s = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) s += tr.iterates[0][k] * z_prev[k];
  for (std::size_t n = 0; n < N; ++n) {
    auto z_next = slice(n + 1);
    const auto& u = tr.iterates[n];
    for (std::size_t k = 0; k < g.size(); ++k) s += u[k] * (z_next[k] - z_prev[k]);
    const auto& jn = tr.fluxes[n];
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto gz = zeta.grad(g.point(k), (n + 1) * h);
      for (int a = 0; a < g.dim; ++a) s += h * jn.at(k, a) * gz[a];
    }
    z_prev = std::move(z_next);
  }
  return std::abs(s * vol);
}

/// max over pairs n != m of W2(u_n, u_m) / sqrt(|n - m| h).
inline double holder_modulus(const Trajectory& tr) {
  if (tr.iterates.size() < 3) throw ParameterError("the Hoelder modulus needs at least three iterates");
  const double h = tr.cfg.h;
  const double reg = tr.cfg.grid.dim == 1 ? 0.0 : tr.cfg.reg();
  double best = 0.0;
  for (std::size_t n = 0; n < tr.iterates.size(); ++n) {
    for (std::size_t m = n + 1; m < tr.iterates.size(); ++m) {
      const auto r = w2(tr.iterates[n], tr.iterates[m], reg);
      best = std::max(best, r.distance / std::sqrt((m - n) * h));
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// epsilon sweeps

struct SweepRow {
  double eps = 0.0;
  int n = 0;                         // cells per axis
  double energy_time_integral = 0.0; // h sum_{n<N} E(u_n)
  double perimeter_time_integral = 0.0;
  double final_energy = 0.0;
  double final_sigma_tv = 0.0;       // sigma * perimeter_tv
  double final_gap = 0.0;            // E - sigma * perimeter_tv
  double equipartition_l2 = 0.0;
  double l1_to_sharp = 0.0;
  double hele_shaw_max = 0.0;        // 2D only, NaN in 1D
  double ledger_worst_excess = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;  // decreasing eps

  [[nodiscard]] std::string csv() const {
    std::string s =
        "eps,n,energy_time_integral,perimeter_time_integral,final_energy,final_sigma_tv,final_gap,"
        "equipartition_l2,l1_to_sharp,hele_shaw_max,ledger_worst_excess\n";
    char buf[512];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.eps,
                    r.n, r.energy_time_integral, r.perimeter_time_integral, r.final_energy, r.final_sigma_tv,
                    r.final_gap, r.equipartition_l2, r.l1_to_sharp, r.hele_shaw_max, r.ledger_worst_excess);
      s += buf;
    }
    return s;
  }
  /// True when final_gap strictly decreases down the rows.
  [[nodiscard]] bool gap_monotone() const {
    for (std::size_t k = 1; k < rows.size(); ++k) {
      if (!(rows[k].final_gap < rows[k - 1].final_gap)) return false;
    }
    return true;
  }
};

struct SweepConfig {
  /// Box shared by every row. Row k uses
  ///   n = ceil(L * cells_per_eps / eps_0 * (eps_0 / eps_k)^refine_power)
  /// cells per axis, rounded up to an even number; eps_0 is the first entry.
  /// refine_power = 1 refines in lockstep (eps / Delta x fixed).
  double box_origin = -1.0;
  double box_length = 2.0;
  double cells_per_eps = 0.0;  // 0 selects the minimal resolution of well_prepared
  double refine_power = 1.0;
  JKOConfig base;              // grid and eps are overwritten per row
  ProfileScale profile = ProfileScale::Sqrt2;
  int threads = 1;
  std::uint64_t seed = 20240612;  // Hele-Shaw basket
  /// Called once per row from the worker that ran it.
  std::function<void(const SweepRow&, const Trajectory&)> on_trajectory;
};

inline int sweep_cells(double eps, double eps0, const SweepConfig& sc) {
  const double cpe = sc.cells_per_eps > 0.0 ? sc.cells_per_eps : 6.0 / profile_width_factor(sc.profile);
  if (sc.refine_power < 1.0) throw ParameterError("refine_power must be >= 1");
  int n = static_cast<int>(std::ceil(sc.box_length * cpe / eps0 * std::pow(eps0 / eps, sc.refine_power) - 1e-9));
  if (n % 2) ++n;
  return std::max(n, GridSpec::kMinCells);
}

inline SweepRow sweep_row(const Shape& shape, double eps, double eps0, const SweepConfig& sc) {
  const int n = sweep_cells(eps, eps0, sc);
  const GridSpec grid = shape.dim() == 1 ? GridSpec::line(n, sc.box_origin, sc.box_length)
                                         : GridSpec::square(n, sc.box_origin, sc.box_length);
  JKOConfig cfg = sc.base;
  cfg.grid = grid;
  cfg.eps = eps;
  const auto wp = well_prepared(shape, eps, grid, sc.profile);
  const auto tr = run_trajectory(wp.u, cfg);

  SweepRow r;
  r.eps = eps;
  r.n = n;
  for (std::size_t k = 0; k + 1 < tr.iterates.size(); ++k) {
    r.energy_time_integral += cfg.h * energy(tr.iterates[k], eps);
    r.perimeter_time_integral += cfg.h * perimeter(extract_interface(tr.iterates[k]));
  }
  const auto& u = tr.iterates.back();
  r.final_energy = energy(u, eps);
  r.final_sigma_tv = phase_indicator_tv(u);
  r.final_gap = r.final_energy - r.final_sigma_tv;
  if (r.final_sigma_tv > r.final_energy + 1e-9) throw DomainError("Modica-Mortola bound violated in sweep");
  r.equipartition_l2 = equipartition_deficit(u, eps).deficit_l2;
  r.l1_to_sharp = l1_distance(u, indicator(shape, grid));
  r.ledger_worst_excess = tr.steps() ? ledger_worst_excess(tr) : 0.0;
  r.hele_shaw_max = std::numeric_limits<double>::quiet_NaN();
  if (grid.dim == 2) {
    const Region region = shape.bounds();
    const auto curves = extract_interface(u);
    const auto j = tr.steps() ? tr.fluxes.back() : VectorField::zero(grid);
    r.hele_shaw_max = 0.0;
    for (const auto& sb : stream_basket(region, 0.15, 0.4, sc.seed)) {
      r.hele_shaw_max = std::max(r.hele_shaw_max, hele_shaw_residual(curves, j, AnalyticField::from(sb)));
    }
  }
  if (sc.on_trajectory) sc.on_trajectory(r, tr);
  return r;
}

/// Runs one trajectory per eps (well-prepared data for `shape`) and reports
/// the sweep columns. eps_list must be strictly decreasing. Rows may run on
/// up to sc.threads worker threads; results do not depend on the count.
inline SweepReport eps_sweep(const Shape& shape, const std::vector<double>& eps_list, const SweepConfig& sc) {
  if (eps_list.empty()) throw ParameterError("eps list is empty");
  for (std::size_t k = 0; k < eps_list.size(); ++k) {
    require_eps(eps_list[k]);
    if (k && !(eps_list[k] < eps_list[k - 1])) throw ParameterError("eps list must be strictly decreasing");
  }
  SweepReport rep;
  rep.rows.resize(eps_list.size());
  std::vector<std::exception_ptr> errors(eps_list.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < eps_list.size(); k = next++) {
      try {
        rep.rows[k] = sweep_row(shape, eps_list[k], eps_list[0], sc);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int nt = std::clamp(sc.threads, 1, static_cast<int>(eps_list.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rep;
}

}  // namespace mmch
