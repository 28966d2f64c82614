#pragma once

// Weight container: a UTF-8 text header with one line per tensor,
//   <name> f64 <dim0> <dim1> ...
// terminated by an empty line, followed by the little-endian IEEE-754
// binary64 payloads of every tensor, concatenated in header order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mwn/tensor.hpp"

namespace mwn {

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline void put_f64_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode_weights(const NamedTensors& tensors) {
  std::string out;
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos) {
      throw WeightFileError("invalid tensor name '" + name + "'");
    }
    out += name;
    out += " f64";
    for (std::size_t d : t.shape()) out += " " + std::to_string(d);
    out += '\n';
  }
  out += '\n';
  for (const auto& entry : tensors) {
    for (double v : entry.second.data()) detail::put_f64_le(out, v);
  }
  return out;
}

inline NamedTensors decode_weights(const std::string& bytes) {
  NamedTensors result;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (true) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw WeightFileError("weight header is not terminated by an empty line");
    const std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) break;
    std::istringstream is(line);
    std::string name, dtype;
    is >> name >> dtype;
    if (dtype != "f64") {
      throw WeightFileError("header line " + std::to_string(line_no) + ": unsupported dtype '" + dtype + "'");
    }
    Shape shape;
    long long d = 0;
    while (is >> d) {
      if (d <= 0) throw WeightFileError("header line " + std::to_string(line_no) + ": non-positive extent");
      shape.push_back(static_cast<std::size_t>(d));
    }
    if (!is.eof() || shape.empty()) {
      throw WeightFileError("header line " + std::to_string(line_no) + ": malformed shape");
    }
    result.emplace_back(name, Tensor(std::move(shape)));
  }
  for (auto& entry : result) {
    const std::size_t n = entry.second.size();
    if (bytes.size() - pos < 8 * n) throw WeightFileError("weight payload truncated at '" + entry.first + "'");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t i = 0; i < n; ++i) entry.second[i] = detail::get_f64_le(p + 8 * i);
    pos += 8 * n;
  }
  if (pos != bytes.size()) throw WeightFileError("trailing bytes after weight payload");
  return result;
}

inline void save_weights(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw WeightFileError("cannot open '" + path + "' for writing");
  const std::string bytes = encode_weights(tensors);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw WeightFileError("failed writing '" + path + "'");
}

inline NamedTensors load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightFileError("cannot open weight file '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return decode_weights(buf.str());
}

inline const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw WeightFileError("weight file has no tensor named '" + name + "'");
}

}  // namespace mwn
