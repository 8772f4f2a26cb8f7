#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace steer::io {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
inline T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

// Little-endian scalar I/O.
template <typename T>
inline void write_le(std::ostream& out, T value) {
  value = byteswap_if_big(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
inline T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("unexpected end of binary data");
  return byteswap_if_big(value);
}

inline void write_doubles(std::ostream& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) write_le(out, data[i]);
}

inline void read_doubles(std::istream& in, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) data[i] = read_le<double>(in);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_le<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("unexpected end of binary data");
  return s;
}

/// Reads the text header line of a versioned model file and checks the magic.
inline std::vector<std::string> read_header(std::istream& in, const std::string& magic) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("missing header, expected '" + magic + "'");
  std::istringstream fields(line);
  std::vector<std::string> out;
  for (std::string f; fields >> f;) out.push_back(f);
  if (out.empty() || out.front() != magic) {
    throw FormatError("bad header '" + line + "', expected '" + magic + "'");
  }
  out.erase(out.begin());
  return out;
}

inline std::size_t parse_size(const std::string& field) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(field, &pos);
  } catch (const std::exception&) {
    throw FormatError("expected an unsigned integer, got '" + field + "'");
  }
  if (pos != field.size()) throw FormatError("expected an unsigned integer, got '" + field + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace steer::io
