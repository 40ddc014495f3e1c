// Binary matrix files used for acoustic features and attention dumps.
//
//   LCBMAT 1\n
//   dtype f64le\n
//   shape <rank> <d0> <d1> ...\n
//   data\n
//   <product(d) little-endian IEEE-754 doubles, row-major>
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lcbnet/errors.hpp"
#include "lcbnet/numerics.hpp"

namespace lcbnet {

struct DenseMatrix {
  num::Shape shape;
  std::vector<double> values;
  bool operator==(const DenseMatrix&) const = default;
};

namespace detail {

inline void write_f64le(std::ostream& out, std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b)
      bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<double> read_f64le(std::istream& in, std::size_t count,
                                      const std::string& what) {
  std::vector<unsigned char> bytes(count * 8);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw DataError(what + ": truncated payload");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

inline std::string expect_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(what + ": truncated header");
  return line;
}

}  // namespace detail

inline void write_matrix(std::ostream& out, const num::Shape& shape,
                         std::span<const double> values) {
  if (num::shape_size(shape) != values.size())
    throw DimensionError("write_matrix: shape does not match value count");
  out << "LCBMAT 1\ndtype f64le\nshape " << shape.size();
  for (std::size_t d : shape) out << ' ' << d;
  out << "\ndata\n";
  detail::write_f64le(out, values);
}

inline DenseMatrix read_matrix(std::istream& in,
                               const std::string& what = "matrix") {
  if (detail::expect_line(in, what) != "LCBMAT 1")
    throw DataError(what + ": not an LCBMAT v1 file");
  if (detail::expect_line(in, what) != "dtype f64le")
    throw DataError(what + ": unsupported dtype");
  std::istringstream shape_line(detail::expect_line(in, what));
  std::string tag;
  std::size_t rank = 0;
  shape_line >> tag >> rank;
  if (tag != "shape" || !shape_line) throw DataError(what + ": bad shape line");
  DenseMatrix m;
  m.shape.resize(rank);
  for (std::size_t& d : m.shape) {
    if (!(shape_line >> d)) throw DataError(what + ": bad shape line");
  }
  if (detail::expect_line(in, what) != "data")
    throw DataError(what + ": missing data marker");
  m.values = detail::read_f64le(in, num::shape_size(m.shape), what);
  return m;
}

inline void save_matrix(const std::string& path, const num::Shape& shape,
                        std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_matrix(out, shape, values);
  if (!out) throw DataError("failed writing " + path);
}

inline DenseMatrix load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  return read_matrix(in, path);
}

}  // namespace lcbnet
