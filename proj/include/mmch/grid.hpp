#pragma once

// Uniform periodic box in 1 or 2 dimensions, grid-sampled fields and the
// finite-difference operators built on them.
//
// Layout: axis 0 is x, axis 1 is y. Flat index of cell (i0, i1) is
// i0 * n1 + i1 (row-major, axis 1 contiguous).
//
// Staggering: gradient() returns component a at the face between cell i and
// cell i + e_a (forward difference); divergence() is the backward difference,
// i.e. the negative adjoint of gradient(). With this pairing
// divergence(gradient(f)) is the standard 3/5-point Laplacian and discrete
// integration by parts holds to round-off.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmch/error.hpp"

namespace mmch {

struct GridSpec {
  int dim = 1;
  std::array<int, 2> n{1, 1};
  std::array<double, 2> origin{0.0, 0.0};
  std::array<double, 2> length{1.0, 1.0};
  bool periodic = true;

  /// Smallest resolution accepted by validate(); configs are held to this.
  static constexpr int kMinCells = 8;

  static GridSpec line(int n, double origin, double length) {
    GridSpec g;
    g.dim = 1;
    g.n = {n, 1};
    g.origin = {origin, 0.0};
    g.length = {length, 1.0};
    g.check(3);
    return g;
  }

  static GridSpec square(int n, double origin, double length) {
    return plane({n, n}, {origin, origin}, {length, length});
  }

  static GridSpec plane(std::array<int, 2> n, std::array<double, 2> origin,
                        std::array<double, 2> length) {
    GridSpec g;
    g.dim = 2;
    g.n = n;
    g.origin = origin;
    g.length = length;
    g.check(3);
    return g;
  }

  /// Throws ParameterError unless every axis has at least min_cells cells and
  /// a positive length. The periodic stencils need at least three cells.
  void check(int min_cells = kMinCells) const {
    if (dim != 1 && dim != 2) throw ParameterError("grid dim must be 1 or 2");
    for (int a = 0; a < dim; ++a) {
      if (n[a] < min_cells) {
        throw ParameterError("grid needs at least " + std::to_string(min_cells) +
                             " cells per axis");
      }
      if (!(length[a] > 0.0) || !std::isfinite(length[a]) || !std::isfinite(origin[a])) {
        throw ParameterError("grid box length must be positive and finite");
      }
    }
    if (!(cell_volume() > 0.0)) throw ParameterError("grid cell volume must be positive");
  }

  void validate() const { check(kMinCells); }

  [[nodiscard]] std::size_t size() const {
    return dim == 1 ? static_cast<std::size_t>(n[0])
                    : static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1]);
  }
  [[nodiscard]] double dx(int axis = 0) const { return length[axis] / n[axis]; }
  [[nodiscard]] double cell_volume() const { return dim == 1 ? dx(0) : dx(0) * dx(1); }
  [[nodiscard]] double volume() const { return dim == 1 ? length[0] : length[0] * length[1]; }
  [[nodiscard]] double center(int axis) const { return origin[axis] + 0.5 * length[axis]; }

  [[nodiscard]] std::size_t index(int i0, int i1 = 0) const {
    return dim == 1 ? static_cast<std::size_t>(i0)
                    : static_cast<std::size_t>(i0) * n[1] + static_cast<std::size_t>(i1);
  }
  [[nodiscard]] std::array<int, 2> cell(std::size_t idx) const {
    if (dim == 1) return {static_cast<int>(idx), 0};
    return {static_cast<int>(idx / n[1]), static_cast<int>(idx % n[1])};
  }
  /// Coordinate of the cell center along one axis.
  [[nodiscard]] double coord(int axis, int i) const { return origin[axis] + (i + 0.5) * dx(axis); }
  /// Coordinate of the face between cell i and i+1 along one axis.
  [[nodiscard]] double face_coord(int axis, int i) const { return origin[axis] + (i + 1.0) * dx(axis); }
  [[nodiscard]] std::array<double, 2> point(std::size_t idx) const {
    const auto c = cell(idx);
    return {coord(0, c[0]), dim == 2 ? coord(1, c[1]) : 0.0};
  }
  /// Flat index of the periodic neighbour shifted by `step` cells along `axis`.
  [[nodiscard]] std::size_t shifted(std::size_t idx, int axis, int step) const {
    auto c = cell(idx);
    c[axis] = ((c[axis] + step) % n[axis] + n[axis]) % n[axis];
    return index(c[0], c[1]);
  }

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    if (a.dim != b.dim || a.periodic != b.periodic) return false;
    for (int k = 0; k < a.dim; ++k) {
      if (a.n[k] != b.n[k] || a.origin[k] != b.origin[k] || a.length[k] != b.length[k]) return false;
    }
    return true;
  }

  [[nodiscard]] std::string describe() const {
    std::ostringstream os;
    os << "dim=" << dim << " n=" << n[0];
    if (dim == 2) os << "," << n[1];
    return os.str();
  }
};

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DomainError(std::string(what) + " contains a non-finite value");
  }
}

inline void require_same_grid(const GridSpec& a, const GridSpec& b) {
  if (!(a == b)) throw DomainError("fields live on different grids");
}

}  // namespace detail

class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(GridSpec grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) throw DomainError("scalar field size does not match grid");
    detail::require_finite(values_, "scalar field");
  }

  static ScalarField constant(const GridSpec& grid, double c) {
    return {grid, std::vector<double>(grid.size(), c)};
  }

  /// Samples f at cell centers; f takes (x) in 1D and (x, y) in 2D.
  template <class F>
  static ScalarField sample(const GridSpec& grid, F&& f) {
    std::vector<double> v(grid.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
      const auto p = grid.point(k);
      if constexpr (std::is_invocable_v<F, double, double>) {
        v[k] = f(p[0], p[1]);
      } else {
        v[k] = f(p[0]);
      }
    }
    return {grid, std::move(v)};
  }

  [[nodiscard]] const GridSpec& grid() const { return grid_; }
  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] const std::vector<double>& vec() const { return values_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  GridSpec grid_;
  std::vector<double> values_;
};

class VectorField {
 public:
  VectorField() = default;
  VectorField(GridSpec grid, std::vector<double> data) : grid_(grid), data_(std::move(data)) {
    if (data_.size() != grid_.size() * static_cast<std::size_t>(grid_.dim)) {
      throw DomainError("vector field size does not match grid");
    }
    detail::require_finite(data_, "vector field");
  }

  static VectorField zero(const GridSpec& grid) {
    return {grid, std::vector<double>(grid.size() * grid.dim, 0.0)};
  }

  [[nodiscard]] const GridSpec& grid() const { return grid_; }
  [[nodiscard]] int dim() const { return grid_.dim; }
  [[nodiscard]] double at(std::size_t cell, int comp) const { return data_[cell * grid_.dim + comp]; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] std::vector<double> component(int comp) const {
    std::vector<double> out(grid_.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = at(k, comp);
    return out;
  }

 private:
  GridSpec grid_;
  std::vector<double> data_;
};

/// Symmetric dim x dim tensor per cell, stored full.
class TensorField {
 public:
  TensorField() = default;
  /// `upper` holds the d(d+1)/2 independent entries per cell in order
  /// (00) for d = 1 and (00, 01, 11) for d = 2.
  static TensorField from_upper(const GridSpec& grid, const std::vector<double>& upper) {
    const int d = grid.dim;
    const std::size_t per = d == 1 ? 1 : 3;
    if (upper.size() != grid.size() * per) throw DomainError("tensor field size does not match grid");
    detail::require_finite(upper, "tensor field");
    TensorField t;
    t.grid_ = grid;
    t.data_.resize(grid.size() * d * d);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (d == 1) {
        t.data_[k] = upper[k];
      } else {
        t.data_[4 * k + 0] = upper[3 * k + 0];
        t.data_[4 * k + 1] = upper[3 * k + 1];
        t.data_[4 * k + 2] = upper[3 * k + 1];
        t.data_[4 * k + 3] = upper[3 * k + 2];
      }
    }
    return t;
  }

  [[nodiscard]] const GridSpec& grid() const { return grid_; }
  [[nodiscard]] double at(std::size_t cell, int r, int c) const {
    const int d = grid_.dim;
    return data_[cell * d * d + r * d + c];
  }
  [[nodiscard]] std::span<const double> data() const { return data_; }

 private:
  GridSpec grid_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Reductions. All sums run in index order so results are bit-reproducible.

inline double integrate(std::span<const double> values, const GridSpec& grid) {
  double s = 0.0;
  for (double v : values) s += v;
  return s * grid.cell_volume();
}

inline double integrate(const ScalarField& f) { return integrate(f.values(), f.grid()); }

/// Second moment about the box center.
inline double second_moment(const ScalarField& f) {
  const auto& g = f.grid();
  double s = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    const auto p = g.point(k);
    double r2 = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      const double d = p[a] - g.center(a);
      r2 += d * d;
    }
    s += r2 * f[k];
  }
  return s * g.cell_volume();
}

inline bool is_density(const ScalarField& f, double mass_tol = 1e-12) {
  for (double v : f.values()) {
    if (v < 0.0) return false;
  }
  return std::abs(integrate(f) - 1.0) <= mass_tol;
}

inline void require_density(const ScalarField& f, double mass_tol = 1e-9) {
  if (!is_density(f, mass_tol)) throw DomainError("field is not a probability density");
}

// ---------------------------------------------------------------------------
// Difference operators on raw arrays (used by hot loops) and on fields.

namespace stencil {

/// Forward difference along `axis`: out[k] = (f[k + e_axis] - f[k]) / dx.
inline void forward(std::span<const double> f, const GridSpec& g, int axis, std::span<double> out) {
  const double inv = 1.0 / g.dx(axis);
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = (f[g.shifted(k, axis, 1)] - f[k]) * inv;
}

/// Backward difference along `axis`: out[k] = (f[k] - f[k - e_axis]) / dx.
inline void backward(std::span<const double> f, const GridSpec& g, int axis, std::span<double> out) {
  const double inv = 1.0 / g.dx(axis);
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = (f[k] - f[g.shifted(k, axis, -1)]) * inv;
}

/// Centered difference along `axis`.
inline void centered(std::span<const double> f, const GridSpec& g, int axis, std::span<double> out) {
  const double inv = 0.5 / g.dx(axis);
  for (std::size_t k = 0; k < f.size(); ++k) {
    out[k] = (f[g.shifted(k, axis, 1)] - f[g.shifted(k, axis, -1)]) * inv;
  }
}

/// 3/5-point Laplacian.
inline std::vector<double> laplacian(std::span<const double> f, const GridSpec& g) {
  std::vector<double> out(f.size(), 0.0);
  for (int a = 0; a < g.dim; ++a) {
    const double inv = 1.0 / (g.dx(a) * g.dx(a));
    for (std::size_t k = 0; k < f.size(); ++k) {
      out[k] += (f[g.shifted(k, a, 1)] - 2.0 * f[k] + f[g.shifted(k, a, -1)]) * inv;
    }
  }
  return out;
}

}  // namespace stencil

/// Face-staggered forward-difference gradient (see header comment).
inline VectorField gradient(const ScalarField& f) {
  const auto& g = f.grid();
  std::vector<double> data(g.size() * g.dim);
  std::vector<double> tmp(g.size());
  for (int a = 0; a < g.dim; ++a) {
    stencil::forward(f.values(), g, a, tmp);
    for (std::size_t k = 0; k < g.size(); ++k) data[k * g.dim + a] = tmp[k];
  }
  return {g, std::move(data)};
}

/// Cell-centered gradient (average of the two adjacent face gradients).
inline VectorField centered_gradient(const ScalarField& f) {
  const auto& g = f.grid();
  std::vector<double> data(g.size() * g.dim);
  std::vector<double> tmp(g.size());
  for (int a = 0; a < g.dim; ++a) {
    stencil::centered(f.values(), g, a, tmp);
    for (std::size_t k = 0; k < g.size(); ++k) data[k * g.dim + a] = tmp[k];
  }
  return {g, std::move(data)};
}

/// Backward-difference divergence, the negative adjoint of gradient().
inline ScalarField divergence(const VectorField& v) {
  const auto& g = v.grid();
  std::vector<double> out(g.size(), 0.0);
  std::vector<double> tmp(g.size());
  for (int a = 0; a < g.dim; ++a) {
    const auto comp = v.component(a);
    stencil::backward(comp, g, a, tmp);
    for (std::size_t k = 0; k < g.size(); ++k) out[k] += tmp[k];
  }
  return {g, std::move(out)};
}

inline ScalarField laplacian(const ScalarField& f) {
  return {f.grid(), stencil::laplacian(f.values(), f.grid())};
}

// Pointwise helpers.

inline double dot_integral(const VectorField& a, const VectorField& b) {
  detail::require_same_grid(a.grid(), b.grid());
  double s = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t k = 0; k < da.size(); ++k) s += da[k] * db[k];
  return s * a.grid().cell_volume();
}

inline double l1_distance(const ScalarField& a, const ScalarField& b) {
  detail::require_same_grid(a.grid(), b.grid());
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s * a.grid().cell_volume();
}

/// Largest |u - 0| or |u - 1| distance to a pure phase over the outermost ring
/// of cells; the box truncation assumes this is tiny.
inline double boundary_ring_deviation(const ScalarField& u) {
  const auto& g = u.grid();
  double worst = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const auto c = g.cell(k);
    bool ring = c[0] == 0 || c[0] == g.n[0] - 1;
    if (g.dim == 2) ring = ring || c[1] == 0 || c[1] == g.n[1] - 1;
    if (!ring) continue;
    worst = std::max(worst, std::min(std::abs(u[k]), std::abs(u[k] - 1.0)));
  }
  return worst;
}

}  // namespace mmch
