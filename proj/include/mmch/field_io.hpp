#pragma once

// FLD1 field dumps: one ASCII header line
//   FLD1 dim=<d> n=<n0>[,<n1>] origin=<o0>[,<o1>] length=<L0>[,<L1>] kind=<scalar|vector|tensor>
// then row-major little-endian float64 values, components interleaved per cell.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mmch/error.hpp"
#include "mmch/grid.hpp"

namespace mmch {

enum class FieldKind { Scalar, Vector, Tensor };

inline const char* to_string(FieldKind k) {
  switch (k) {
    case FieldKind::Scalar: return "scalar";
    case FieldKind::Vector: return "vector";
    case FieldKind::Tensor: return "tensor";
  }
  return "scalar";
}

struct RawField {
  GridSpec grid;
  FieldKind kind = FieldKind::Scalar;
  std::vector<double> data;
};

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void put_le(std::ostream& os, const std::vector<double>& v) {
  std::vector<unsigned char> bytes(v.size() * 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto u = std::bit_cast<std::uint64_t>(v[i]);
    for (int b = 0; b < 8; ++b) bytes[8 * i + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw DomainError("FLD1: malformed number '" + s + "'");
  }
  if (used != s.size()) throw DomainError("FLD1: malformed number '" + s + "'");
  return v;
}

inline int parse_int(const std::string& s) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    throw DomainError("FLD1: malformed integer '" + s + "'");
  }
  if (used != s.size() || v <= 0 || v > (1L << 30)) throw DomainError("FLD1: malformed integer '" + s + "'");
  return static_cast<int>(v);
}

inline std::size_t components(FieldKind k, int dim) {
  switch (k) {
    case FieldKind::Scalar: return 1;
    case FieldKind::Vector: return static_cast<std::size_t>(dim);
    case FieldKind::Tensor: return static_cast<std::size_t>(dim * dim);
  }
  return 1;
}

}  // namespace detail

inline std::string fld1_header(const GridSpec& g, FieldKind kind) {
  std::string h = "FLD1 dim=" + std::to_string(g.dim) + " n=" + std::to_string(g.n[0]);
  if (g.dim == 2) h += "," + std::to_string(g.n[1]);
  h += " origin=" + detail::fmt17(g.origin[0]);
  if (g.dim == 2) h += "," + detail::fmt17(g.origin[1]);
  h += " length=" + detail::fmt17(g.length[0]);
  if (g.dim == 2) h += "," + detail::fmt17(g.length[1]);
  h += std::string(" kind=") + to_string(kind);
  return h;
}

inline void write_fld1(std::ostream& os, const GridSpec& g, FieldKind kind, const std::vector<double>& data) {
  if (data.size() != g.size() * detail::components(kind, g.dim)) throw DomainError("FLD1: data size mismatch");
  os << fld1_header(g, kind) << '\n';
  detail::put_le(os, data);
}

inline void write_field(const std::string& path, const ScalarField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DomainError("cannot open " + path + " for writing");
  write_fld1(os, f.grid(), FieldKind::Scalar, f.vec());
}

inline void write_field(const std::string& path, const VectorField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DomainError("cannot open " + path + " for writing");
  const auto d = f.data();
  write_fld1(os, f.grid(), FieldKind::Vector, {d.begin(), d.end()});
}

inline void write_field(const std::string& path, const TensorField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DomainError("cannot open " + path + " for writing");
  const auto d = f.data();
  write_fld1(os, f.grid(), FieldKind::Tensor, {d.begin(), d.end()});
}

/// Throws DomainError on a malformed header, an unknown kind or a short body.
inline RawField read_fld1(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DomainError("FLD1: empty input");
  const auto toks = detail::split(line, ' ');
  if (toks.empty() || toks[0] != "FLD1") throw DomainError("FLD1: bad magic");
  std::map<std::string, std::string> kv;
  for (std::size_t i = 1; i < toks.size(); ++i) {
    const auto eq = toks[i].find('=');
    if (eq == std::string::npos) throw DomainError("FLD1: malformed header token '" + toks[i] + "'");
    const auto key = toks[i].substr(0, eq);
    if (key != "dim" && key != "n" && key != "origin" && key != "length" && key != "kind") {
      throw DomainError("FLD1: unknown header key '" + key + "'");
    }
    if (!kv.emplace(key, toks[i].substr(eq + 1)).second) throw DomainError("FLD1: duplicate key '" + key + "'");
  }
  for (const char* key : {"dim", "n", "origin", "length", "kind"}) {
    if (!kv.count(key)) throw DomainError(std::string("FLD1: missing key '") + key + "'");
  }
  RawField f;
  const std::string& kind = kv["kind"];
  if (kind == "scalar") f.kind = FieldKind::Scalar;
  else if (kind == "vector") f.kind = FieldKind::Vector;
  else if (kind == "tensor") f.kind = FieldKind::Tensor;
  else throw DomainError("FLD1: unknown kind '" + kind + "'");

  const int dim = detail::parse_int(kv["dim"]);
  if (dim != 1 && dim != 2) throw DomainError("FLD1: dim must be 1 or 2");
  const auto ns = detail::split(kv["n"], ',');
  const auto os = detail::split(kv["origin"], ',');
  const auto ls = detail::split(kv["length"], ',');
  const auto d = static_cast<std::size_t>(dim);
  if (ns.size() != d || os.size() != d || ls.size() != d) throw DomainError("FLD1: axis count does not match dim");
  f.grid.dim = dim;
  for (int a = 0; a < dim; ++a) {
    f.grid.n[a] = detail::parse_int(ns[a]);
    f.grid.origin[a] = detail::parse_double(os[a]);
    f.grid.length[a] = detail::parse_double(ls[a]);
  }
  try {
    f.grid.check(3);
  } catch (const ParameterError& e) {
    throw DomainError(std::string("FLD1: ") + e.what());
  }
  const std::size_t count = f.grid.size() * detail::components(f.kind, dim);
  std::vector<unsigned char> bytes(count * 8);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) throw DomainError("FLD1: truncated body");
  f.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[8 * i + b]) << (8 * b);
    f.data[i] = std::bit_cast<double>(u);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DomainError("FLD1: trailing bytes");
  return f;
}

inline RawField read_fld1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DomainError("cannot open " + path);
  return read_fld1(is);
}

inline ScalarField read_scalar(const std::string& path) {
  auto raw = read_fld1(path);
  if (raw.kind != FieldKind::Scalar) throw DomainError(path + ": expected a scalar field");
  return {raw.grid, std::move(raw.data)};
}

inline VectorField read_vector(const std::string& path) {
  auto raw = read_fld1(path);
  if (raw.kind != FieldKind::Vector) throw DomainError(path + ": expected a vector field");
  return {raw.grid, std::move(raw.data)};
}

}  // namespace mmch
