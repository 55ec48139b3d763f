#pragma once

// Run configuration read from flat TOML: one `key = value` per line, values
// are numbers, booleans, "strings" or [number, ...] arrays; `#` starts a
// comment. Tables and unknown keys are rejected.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmch/diagnostics.hpp"
#include "mmch/error.hpp"
#include "mmch/grid.hpp"
#include "mmch/initdata.hpp"
#include "mmch/jko.hpp"

namespace mmch {

enum class InitialKind { WellPrepared, Constant };

struct RunConfig {
  JKOConfig jko;
  InitialKind initial = InitialKind::WellPrepared;
  std::string shape;  // shape grammar; unused for constant data
  int dim = 0;        // 0: taken from the shape
  int n = 128;        // cells per axis
  double origin = -1.5;
  double length = 3.0;
  std::string out = "out";
  std::uint64_t seed = 20240611;
  ProfileScale profile = ProfileScale::Sqrt2;
  // sweep only
  std::vector<double> eps_list;
  double cells_per_eps = 0.0;
  double refine_power = 1.0;

  [[nodiscard]] Shape parsed_shape() const { return parse_shape(shape); }

  /// Grid from (dim, n, origin, length); builds jko.grid as well.
  void finalize() {
    if (initial == InitialKind::WellPrepared) {
      if (shape.empty()) throw ParameterError("config: 'shape' is required for well-prepared data");
      const auto sh = parsed_shape();
      sh.validate();
      if (dim != 0 && dim != sh.dim()) throw ParameterError("config: 'dim' disagrees with the shape");
      dim = sh.dim();
    } else if (dim == 0) {
      throw ParameterError("config: 'dim' is required for constant data");
    }
    if (dim != 1 && dim != 2) throw ParameterError("config: dim must be 1 or 2");
    jko.grid = dim == 1 ? GridSpec::line(n, origin, length) : GridSpec::square(n, origin, length);
    jko.grid.validate();
    jko.validate();
    if (jko.transport == TransportMode::Exact1D && dim != 1) throw ParameterError("config: exact transport is 1D only");
    for (std::size_t k = 0; k < eps_list.size(); ++k) {
      require_eps(eps_list[k]);
      if (k && !(eps_list[k] < eps_list[k - 1])) throw ParameterError("config: eps_list must be strictly decreasing");
    }
    if (refine_power < 1.0) throw ParameterError("config: refine_power must be >= 1");
    if (cells_per_eps < 0.0) throw ParameterError("config: cells_per_eps must be nonnegative");
  }

  [[nodiscard]] SweepConfig sweep_config(int threads) const {
    SweepConfig sc;
    sc.box_origin = origin;
    sc.box_length = length;
    sc.cells_per_eps = cells_per_eps;
    sc.refine_power = refine_power;
    sc.base = jko;
    sc.profile = profile;
    sc.threads = threads;
    sc.seed = seed;
    return sc;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

struct TomlValue {
  enum class Kind { Number, Bool, String, Array } kind = Kind::Number;
  std::string text;  // raw number text or unquoted string
  bool flag = false;
  std::vector<std::string> items;
  int line = 0;
};

inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline std::map<std::string, TomlValue> parse_flat_toml(std::istream& is) {
  std::map<std::string, TomlValue> out;
  std::string raw;
  int line = 0;
  auto fail = [&](const std::string& msg) {
    throw ParameterError("config line " + std::to_string(line) + ": " + msg);
  };
  while (std::getline(is, raw)) {
    ++line;
    const auto s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') fail("tables are not supported");
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const auto key = trim(s.substr(0, eq));
    const auto val = trim(s.substr(eq + 1));
    if (key.empty() || val.empty()) fail("expected key = value");
    for (char c : key) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') fail("malformed key '" + key + "'");
    }
    TomlValue v;
    v.line = line;
    if (val.front() == '"') {
      if (val.size() < 2 || val.back() != '"' || val.find('"', 1) != val.size() - 1) fail("malformed string");
      v.kind = TomlValue::Kind::String;
      v.text = val.substr(1, val.size() - 2);
    } else if (val == "true" || val == "false") {
      v.kind = TomlValue::Kind::Bool;
      v.flag = val == "true";
    } else if (val.front() == '[') {
      if (val.back() != ']') fail("malformed array");
      v.kind = TomlValue::Kind::Array;
      std::stringstream body(val.substr(1, val.size() - 2));
      std::string tok;
      while (std::getline(body, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        v.items.push_back(tok);
      }
    } else {
      v.kind = TomlValue::Kind::Number;
      v.text = val;
    }
    if (!out.emplace(key, v).second) fail("duplicate key '" + key + "'");
  }
  return out;
}

inline double toml_number(const std::string& key, const std::string& text, int line) {
  std::string t;
  for (char c : text) {
    if (c != '_') t += c;
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != t.size() || !std::isfinite(v)) {
    throw ParameterError("config line " + std::to_string(line) + ": '" + key + "' expects a number");
  }
  return v;
}

}  // namespace detail

inline TransportMode parse_transport(const std::string& s) {
  if (s == "auto") return TransportMode::Auto;
  if (s == "exact") return TransportMode::Exact1D;
  if (s == "entropic") return TransportMode::Entropic;
  throw ParameterError("transport must be auto, exact or entropic");
}

inline InnerSolver parse_solver(const std::string& s) {
  if (s == "auto") return InnerSolver::Auto;
  if (s == "mass_newton") return InnerSolver::MassNewton;
  if (s == "flow_newton") return InnerSolver::FlowNewton;
  if (s == "lbfgs") return InnerSolver::Lbfgs;
  throw ParameterError("solver must be auto, mass_newton, flow_newton or lbfgs");
}

/// Parses and validates; throws ParameterError on any unknown key or bad value.
inline RunConfig parse_run_config(std::istream& is) {
  const auto kv = detail::parse_flat_toml(is);
  RunConfig c;
  auto where = [](const detail::TomlValue& v) { return "config line " + std::to_string(v.line) + ": "; };
  for (const auto& [key, v] : kv) {
    using K = detail::TomlValue::Kind;
    auto num = [&]() {
      if (v.kind != K::Number) throw ParameterError(where(v) + "'" + key + "' expects a number");
      return detail::toml_number(key, v.text, v.line);
    };
    auto integer = [&]() {
      const double x = num();
      if (x != std::floor(x) || std::abs(x) > 1e15) throw ParameterError(where(v) + "'" + key + "' expects an integer");
      return static_cast<long long>(x);
    };
    auto str = [&]() {
      if (v.kind != K::String) throw ParameterError(where(v) + "'" + key + "' expects a string");
      return v.text;
    };
    if (key == "h") c.jko.h = num();
    else if (key == "eps") c.jko.eps = num();
    else if (key == "n_steps") c.jko.n_steps = static_cast<int>(integer());
    else if (key == "inner_max_iter") c.jko.inner_max_iter = static_cast<int>(integer());
    else if (key == "inner_tol") c.jko.inner_tol = num();
    else if (key == "ot_reg") c.jko.ot_reg = num();
    else if (key == "ledger_tol") c.jko.ledger_tol = num();
    else if (key == "transport") c.jko.transport = parse_transport(str());
    else if (key == "solver") c.jko.solver = parse_solver(str());
    else if (key == "sinkhorn_tol") c.jko.sinkhorn.tol = num();
    else if (key == "sinkhorn_max_iter") c.jko.sinkhorn.max_iter = static_cast<int>(integer());
    else if (key == "initial") {
      const auto s = str();
      if (s == "well_prepared") c.initial = InitialKind::WellPrepared;
      else if (s == "constant") c.initial = InitialKind::Constant;
      else throw ParameterError(where(v) + "initial must be well_prepared or constant");
    } else if (key == "shape") c.shape = str();
    else if (key == "dim") c.dim = static_cast<int>(integer());
    else if (key == "n") {
      const auto n = integer();
      if (n < GridSpec::kMinCells || n > (1 << 20)) throw ParameterError(where(v) + "n out of range");
      c.n = static_cast<int>(n);
    } else if (key == "origin") c.origin = num();
    else if (key == "length") c.length = num();
    else if (key == "out") c.out = str();
    else if (key == "seed") {
      const auto s = integer();
      if (s < 0) throw ParameterError(where(v) + "seed must be nonnegative");
      c.seed = static_cast<std::uint64_t>(s);
    } else if (key == "profile_scale") c.profile = parse_profile_scale(str());
    else if (key == "eps_list") {
      if (v.kind != K::Array) throw ParameterError(where(v) + "'eps_list' expects an array");
      for (const auto& item : v.items) c.eps_list.push_back(detail::toml_number(key, item, v.line));
    } else if (key == "cells_per_eps") c.cells_per_eps = num();
    else if (key == "refine_power") c.refine_power = num();
    else throw ParameterError(where(v) + "unknown key '" + key + "'");
  }
  c.finalize();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParameterError("cannot open config " + path);
  return parse_run_config(is);
}

/// Canonical flat TOML for `c`; parse_run_config(to_toml(c)) reproduces c.
inline std::string to_toml(const RunConfig& c) {
  auto f = [](double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  };
  auto transport = [](TransportMode t) {
    return t == TransportMode::Exact1D ? "exact" : t == TransportMode::Entropic ? "entropic" : "auto";
  };
  auto solver = [](InnerSolver s) {
    switch (s) {
      case InnerSolver::MassNewton: return "mass_newton";
      case InnerSolver::FlowNewton: return "flow_newton";
      case InnerSolver::Lbfgs: return "lbfgs";
      default: return "auto";
    }
  };
  std::ostringstream os;
  os << "initial = \"" << (c.initial == InitialKind::Constant ? "constant" : "well_prepared") << "\"\n";
  if (!c.shape.empty()) os << "shape = \"" << c.shape << "\"\n";
  os << "dim = " << c.dim << "\n";
  os << "n = " << c.n << "\n";
  os << "origin = " << f(c.origin) << "\n";
  os << "length = " << f(c.length) << "\n";
  os << "eps = " << f(c.jko.eps) << "\n";
  os << "h = " << f(c.jko.h) << "\n";
  os << "n_steps = " << c.jko.n_steps << "\n";
  os << "inner_max_iter = " << c.jko.inner_max_iter << "\n";
  os << "inner_tol = " << f(c.jko.inner_tol) << "\n";
  os << "ot_reg = " << f(c.jko.ot_reg) << "\n";
  os << "ledger_tol = " << f(c.jko.ledger_tol) << "\n";
  os << "transport = \"" << transport(c.jko.transport) << "\"\n";
  os << "solver = \"" << solver(c.jko.solver) << "\"\n";
  os << "sinkhorn_tol = " << f(c.jko.sinkhorn.tol) << "\n";
  os << "sinkhorn_max_iter = " << c.jko.sinkhorn.max_iter << "\n";
  os << "out = \"" << c.out << "\"\n";
  os << "seed = " << c.seed << "\n";
  os << "profile_scale = \"" << to_string(c.profile) << "\"\n";
  if (!c.eps_list.empty()) {
    os << "eps_list = [";
    for (std::size_t k = 0; k < c.eps_list.size(); ++k) os << (k ? ", " : "") << f(c.eps_list[k]);
    os << "]\n";
  }
  os << "cells_per_eps = " << f(c.cells_per_eps) << "\n";
  os << "refine_power = " << f(c.refine_power) << "\n";
  return os.str();
}

/// Initial density for the config: well-prepared profile or the constant 1/|box|.
inline WellPrepared initial_density(const RunConfig& c) {
  if (c.initial == InitialKind::Constant) {
    const auto& g = c.jko.grid;
    return {ScalarField::constant(g, 1.0 / g.volume()), 1.0, 1.0};
  }
  return well_prepared(c.parsed_shape(), c.jko.eps, c.jko.grid, c.profile);
}

}  // namespace mmch
