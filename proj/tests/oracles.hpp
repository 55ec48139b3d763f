#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

// Hungarian algorithm (shortest augmenting paths with potentials) for the
// square assignment problem; returns the minimal total cost.
inline double assignment_cost(const std::vector<std::vector<double>>& c) {
  const int n = static_cast<int>(c.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += c[p[j] - 1][j - 1];
  return total;
}

// int_c tau . J tau dH^1 over a closed polygon by the midpoint rule on
// `total` sub-segments; vertices repeat the first point at the end.
template <class Field>
double tangential_divergence(const std::vector<std::array<double, 2>>& v, const Field& xi, int total = 100000) {
  const std::size_t segs = v.size() - 1;
  const int sub = static_cast<int>(total / segs) + 1;
  double s = 0.0;
  for (std::size_t k = 0; k < segs; ++k) {
    const auto p = v[k], q = v[k + 1];
    const double l = std::hypot(q[0] - p[0], q[1] - p[1]);
    const double t[2] = {(q[0] - p[0]) / l, (q[1] - p[1]) / l};
    for (int r = 0; r < sub; ++r) {
      const double f = (r + 0.5) / sub;
      const auto J = xi.jacobian({p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1])});
      double tjt = 0.0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) tjt += t[a] * J[a][b] * t[b];
      }
      s += tjt * l / sub;
    }
  }
  return s;
}

}  // namespace oracle
