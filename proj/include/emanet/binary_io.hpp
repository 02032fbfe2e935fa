#pragma once

// Little-endian scalar and buffer I/O for the binary file formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace emanet::binary {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void write_le(std::ostream& os, const T* values, std::size_t n) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    os.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(n * sizeof(T)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, values + i, sizeof(T));
      std::reverse(bytes, bytes + sizeof(T));
      os.write(bytes, sizeof(T));
    }
  }
}

template <typename T>
void write_le(std::ostream& os, T value) {
  write_le(os, &value, 1);
}

template <typename T>
void read_le(std::istream& is, T* values, std::size_t n) {
  static_assert(std::is_trivially_copyable_v<T>);
  is.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(n * sizeof(T)));
  if (!is) throw FormatError("unexpected end of file");
  if constexpr (std::endian::native != std::endian::little && sizeof(T) > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      auto* bytes = reinterpret_cast<char*>(values + i);
      std::reverse(bytes, bytes + sizeof(T));
    }
  }
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  read_le(is, &v, 1);
  return v;
}

inline void expect_magic(std::istream& is, const std::string& magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!is || got != magic) throw FormatError("bad magic, expected " + magic);
}

}  // namespace emanet::binary
