#pragma once

// Well-prepared initial data u = q(-s(x_a) / eps): optimal 1D profile q,
// signed distance s of a unit-measure shape, and a scaling x_a = c + a (x - c)
// about the shape centroid chosen so that the field has unit mass.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mmch/error.hpp"
#include "mmch/grid.hpp"

namespace mmch {

enum class ProfileScale {
  Paper,  // q(z) = tanh(z)/2 + 1/2
  Sqrt2,  // q(z) = tanh(z / (2 sqrt 2))/2 + 1/2, solves q' = sqrt(2 W(q))
};

inline ProfileScale parse_profile_scale(const std::string& s) {
  if (s == "paper") return ProfileScale::Paper;
  if (s == "sqrt2") return ProfileScale::Sqrt2;
  throw ParameterError("profile scale must be 'paper' or 'sqrt2'");
}

inline const char* to_string(ProfileScale p) { return p == ProfileScale::Paper ? "paper" : "sqrt2"; }

/// Width factor: the profile varies over about kappa * eps.
inline double profile_width_factor(ProfileScale p) {
  return p == ProfileScale::Paper ? 1.0 : 2.0 * std::numbers::sqrt2;
}

inline double optimal_profile(double z, ProfileScale p = ProfileScale::Paper) {
  const double s = p == ProfileScale::Paper ? z : z / (2.0 * std::numbers::sqrt2);
  // 1/(1 + e^{-2s}) keeps full relative precision in the lower tail
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-2.0 * s));
  const double e = std::exp(2.0 * s);
  return e / (1.0 + e);
}

struct Shape {
  enum class Kind { Interval, Intervals, Disk, Disks };
  Kind kind = Kind::Interval;
  /// Interval(s): (center, length) pairs. Disk(s): (cx, cy, r) triples.
  std::vector<double> params;

  [[nodiscard]] int dim() const { return kind == Kind::Interval || kind == Kind::Intervals ? 1 : 2; }
  [[nodiscard]] int components() const {
    return static_cast<int>(params.size()) / (dim() == 1 ? 2 : 3);
  }

  static Shape interval(double c, double l) { return {Kind::Interval, {c, l}}; }
  static Shape disk(double cx, double cy, double r) { return {Kind::Disk, {cx, cy, r}}; }

  /// Lebesgue measure (components are required to be disjoint).
  [[nodiscard]] double measure() const {
    double s = 0.0;
    if (dim() == 1) {
      for (int k = 0; k < components(); ++k) s += params[2 * k + 1];
    } else {
      for (int k = 0; k < components(); ++k) s += std::numbers::pi * params[3 * k + 2] * params[3 * k + 2];
    }
    return s;
  }

  [[nodiscard]] std::array<double, 2> centroid() const {
    std::array<double, 2> c{0.0, 0.0};
    double w = 0.0;
    for (int k = 0; k < components(); ++k) {
      if (dim() == 1) {
        const double l = params[2 * k + 1];
        c[0] += l * params[2 * k];
        w += l;
      } else {
        const double a = params[3 * k + 2] * params[3 * k + 2];
        c[0] += a * params[3 * k];
        c[1] += a * params[3 * k + 1];
        w += a;
      }
    }
    c[0] /= w;
    c[1] /= w;
    return c;
  }

  /// Axis-aligned bounding box {lo0, hi0, lo1, hi1}.
  [[nodiscard]] std::array<double, 4> bounds() const {
    std::array<double, 4> b{1e300, -1e300, 1e300, -1e300};
    for (int k = 0; k < components(); ++k) {
      if (dim() == 1) {
        b[0] = std::min(b[0], params[2 * k] - 0.5 * params[2 * k + 1]);
        b[1] = std::max(b[1], params[2 * k] + 0.5 * params[2 * k + 1]);
      } else {
        const double r = params[3 * k + 2];
        b[0] = std::min(b[0], params[3 * k] - r);
        b[1] = std::max(b[1], params[3 * k] + r);
        b[2] = std::min(b[2], params[3 * k + 1] - r);
        b[3] = std::max(b[3], params[3 * k + 1] + r);
      }
    }
    return b;
  }

  void validate() const {
    const std::size_t per = dim() == 1 ? 2 : 3;
    if (params.empty() || params.size() % per != 0) throw ParameterError("malformed shape parameters");
    if ((kind == Kind::Interval || kind == Kind::Disk) && components() != 1) {
      throw ParameterError("single shape expects exactly one component");
    }
    for (int k = 0; k < components(); ++k) {
      const double size = params[k * per + per - 1];
      if (!(size > 0.0)) throw ParameterError("shape sizes must be positive");
    }
    for (int a = 0; a < components(); ++a) {
      for (int b = a + 1; b < components(); ++b) {
        double gap;
        if (dim() == 1) {
          gap = std::abs(params[2 * a] - params[2 * b]) - 0.5 * (params[2 * a + 1] + params[2 * b + 1]);
        } else {
          gap = std::hypot(params[3 * a] - params[3 * b], params[3 * a + 1] - params[3 * b + 1]) -
                params[3 * a + 2] - params[3 * b + 2];
        }
        if (!(gap > 0.0)) throw ParameterError("shape components must be disjoint");
      }
    }
    if (std::abs(measure() - 1.0) > 1e-10) throw ParameterError("shape must have unit measure");
  }

  [[nodiscard]] std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    switch (kind) {
      case Kind::Interval: os << "interval("; break;
      case Kind::Intervals: os << "intervals("; break;
      case Kind::Disk: os << "disk("; break;
      case Kind::Disks: os << "disks("; break;
    }
    for (std::size_t i = 0; i < params.size(); ++i) os << (i ? "," : "") << params[i];
    os << ")";
    return os.str();
  }
};

/// Parses interval(c,l) | intervals(c1,l1,...) | disk(cx,cy,r) | disks(cx1,cy1,r1,...).
inline Shape parse_shape(const std::string& text) {
  std::string s;
  for (char ch : text) {
    if (!std::isspace(static_cast<unsigned char>(ch))) s += ch;
  }
  const auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')') throw ParameterError("malformed shape: " + text);
  const std::string name = s.substr(0, open);
  std::vector<double> p;
  std::stringstream body(s.substr(open + 1, s.size() - open - 2));
  std::string tok;
  while (std::getline(body, tok, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw ParameterError("malformed shape number: " + tok);
    }
    if (used != tok.size() || !std::isfinite(v)) throw ParameterError("malformed shape number: " + tok);
    p.push_back(v);
  }
  Shape sh;
  if (name == "interval") sh.kind = Shape::Kind::Interval;
  else if (name == "intervals") sh.kind = Shape::Kind::Intervals;
  else if (name == "disk") sh.kind = Shape::Kind::Disk;
  else if (name == "disks") sh.kind = Shape::Kind::Disks;
  else throw ParameterError("unknown shape kind: " + name);
  sh.params = std::move(p);
  sh.validate();
  return sh;
}

/// Negative inside, positive outside, zero on the boundary.
inline double signed_distance(const Shape& sh, std::array<double, 2> x) {
  double best = 1e300;
  if (sh.dim() == 1) {
    for (int k = 0; k < sh.components(); ++k) {
      const double c = sh.params[2 * k], h = 0.5 * sh.params[2 * k + 1];
      best = std::min(best, std::abs(x[0] - c) - h);
    }
  } else {
    for (int k = 0; k < sh.components(); ++k) {
      const double r = std::hypot(x[0] - sh.params[3 * k], x[1] - sh.params[3 * k + 1]);
      best = std::min(best, r - sh.params[3 * k + 2]);
    }
  }
  // components are disjoint, so inside one component the distance to the
  // complement is that component's own depth
  return best;
}

inline ScalarField indicator(const Shape& sh, const GridSpec& grid) {
  std::vector<double> v(grid.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = signed_distance(sh, grid.point(k)) < 0.0 ? 1.0 : 0.0;
  return {grid, std::move(v)};
}

struct WellPrepared {
  ScalarField u;
  double a = 1.0;          // mass-normalizing scale a_eps
  double raw_mass = 1.0;   // mass before the final round-off normalization
};

inline void check_resolution(double eps, const GridSpec& grid, ProfileScale p) {
  for (int a = 0; a < grid.dim; ++a) {
    if (profile_width_factor(p) * eps / grid.dx(a) < 6.0) throw ParameterError("eps too small for grid");
  }
}

inline ScalarField profile_field(const Shape& sh, double eps, const GridSpec& grid, double a, ProfileScale p) {
  const auto c = sh.centroid();
  std::vector<double> v(grid.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    auto x = grid.point(k);
    for (int d = 0; d < grid.dim; ++d) x[d] = c[d] + a * (x[d] - c[d]);
    v[k] = optimal_profile(-signed_distance(sh, x) / eps, p);
  }
  return {grid, std::move(v)};
}

/// Unit-mass recovery data for `sh`. Throws ParameterError("eps too small for
/// grid") when the interface spans fewer than 6 cells, ParameterError when the
/// shape is closer than 10 eps to the box boundary, and DomainError when the
/// bisection bracket [1/2, 2] does not contain a_eps.
inline WellPrepared well_prepared(const Shape& sh, double eps, const GridSpec& grid,
                                  ProfileScale p = ProfileScale::Sqrt2) {
  require_eps(eps);
  sh.validate();
  if (sh.dim() != grid.dim) throw ParameterError("shape and grid dimensions differ");
  check_resolution(eps, grid, p);
  const auto b = sh.bounds();
  for (int d = 0; d < grid.dim; ++d) {
    const double lo = grid.origin[d], hi = grid.origin[d] + grid.length[d];
    if (b[2 * d] - lo < 10.0 * eps || hi - b[2 * d + 1] < 10.0 * eps) {
      throw ParameterError("shape must keep a margin of 10 eps from the box boundary");
    }
  }
  auto mass = [&](double a) { return integrate(profile_field(sh, eps, grid, a, p)); };
  double lo = 0.5, hi = 2.0;
  double mlo = mass(lo) - 1.0, mhi = mass(hi) - 1.0;
  if (!(mlo > 0.0 && mhi < 0.0)) throw DomainError("mass-normalizing scale outside [1/2, 2]");
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    const double mm = mass(mid) - 1.0;
    if (mm > 0.0) lo = mid;
    else hi = mid;
  }
  WellPrepared out;
  out.a = 0.5 * (lo + hi);
  auto u = profile_field(sh, eps, grid, out.a, p);
  out.raw_mass = integrate(u);
  std::vector<double> v = u.vec();
  for (double& x : v) x /= out.raw_mass;
  out.u = ScalarField(grid, std::move(v));
  return out;
}

/// Box that keeps the boundary ring within 1e-6 of a pure phase: the shape's
/// bounding box padded by the profile's decay length.
inline double ring_margin(double eps, ProfileScale p) {
  // q(-d/eps) <= 1e-6 once d >= kappa/2 * ln(1e6) * eps
  return 0.5 * profile_width_factor(p) * std::log(1e6) * eps * 1.05;
}

}  // namespace mmch
