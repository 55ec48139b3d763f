#pragma once

// Limited-memory BFGS with monotone Armijo backtracking.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace mmch {

struct LbfgsOptions {
  int max_iter = 1000;
  int memory = 12;
  double c1 = 1e-4;
  int max_backtrack = 50;
  /// Relative slack for accepting a step whose objective change is at the
  /// round-off level; such steps must still lower the stopping measure.
  double flat_tol = 1e-14;
};

struct LbfgsResult {
  std::vector<double> x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string reason;
};

/// `fg(x, grad)` returns f(x) and writes the gradient.
/// `measure(x, f, grad)` returns the stopping measure; iteration stops once it
/// is <= `tol`.
/// `precond(v)` applies an initial inverse-Hessian guess in place (optional).
inline LbfgsResult lbfgs_minimize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& fg,
    std::vector<double> x, const std::function<double(const std::vector<double>&, double,
                                                      const std::vector<double>&)>& measure,
    double tol, const LbfgsOptions& opt = {},
    const std::function<void(std::vector<double>&)>& precond = nullptr) {
  const std::size_t n = x.size();
  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  };

  LbfgsResult res;
  std::vector<double> g(n), gn(n), d(n), xn(n);
  double f = fg(x, g);
  ++res.evaluations;
  double meas = measure(x, f, g);
  std::deque<std::vector<double>> S, Y;
  std::deque<double> rho;

  for (int it = 0; it < opt.max_iter; ++it) {
    if (meas <= tol) {
      res.converged = true;
      res.reason = "tolerance";
      break;
    }
    // two-loop recursion
    d = g;
    std::vector<double> alpha(S.size());
    for (int k = static_cast<int>(S.size()) - 1; k >= 0; --k) {
      alpha[k] = rho[k] * dot(S[k], d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * Y[k][i];
    }
    if (precond) {
      precond(d);
    } else if (!S.empty()) {
      const double gamma = dot(S.back(), Y.back()) / dot(Y.back(), Y.back());
      for (double& v : d) v *= gamma;
    } else {
      const double gn2 = std::sqrt(dot(g, g));
      const double s = gn2 > 0.0 ? 1.0 / gn2 : 1.0;
      for (double& v : d) v *= s * 1e-2;
    }
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double beta = rho[k] * dot(Y[k], d);
      for (std::size_t i = 0; i < n; ++i) d[i] += S[k][i] * (alpha[k] - beta);
    }
    for (double& v : d) v = -v;
    double slope = dot(g, d);
    if (!(slope < 0.0)) {
      // not a descent direction: restart from the (preconditioned) gradient
      S.clear();
      Y.clear();
      rho.clear();
      d = g;
      if (precond) precond(d);
      for (double& v : d) v = -v;
      slope = dot(g, d);
      if (!(slope < 0.0)) {
        res.reason = "no descent direction";
        break;
      }
    }

    double step = 1.0;
    bool accepted = false;
    double fnew = f, mnew = meas;
    for (int bt = 0; bt < opt.max_backtrack; ++bt) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + step * d[i];
      fnew = fg(xn, gn);
      ++res.evaluations;
      if (std::isfinite(fnew)) {
        if (fnew <= f + opt.c1 * step * slope) {
          accepted = true;
        } else if (fnew <= f + opt.flat_tol * std::max(1.0, std::abs(f)) &&
                   std::abs(step * slope) <= opt.flat_tol * std::max(1.0, std::abs(f))) {
          mnew = measure(xn, fnew, gn);
          accepted = mnew < meas;
        }
      }
      if (accepted) break;
      step *= 0.5;
    }
    if (!accepted) {
      if (!S.empty()) {
        S.clear();
        Y.clear();
        rho.clear();
        continue;
      }
      res.reason = "line search failed";
      break;
    }
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xn[i] - x[i];
      y[i] = gn[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-300) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    x.swap(xn);
    g.swap(gn);
    f = fnew;
    meas = measure(x, f, g);
    res.iterations = it + 1;
  }
  if (!res.converged && res.reason.empty()) res.reason = "iteration limit";
  if (meas <= tol) res.converged = true;
  res.x = std::move(x);
  res.f = f;
  return res;
}

}  // namespace mmch
