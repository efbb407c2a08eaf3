#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "pairmine/error.hpp"

namespace pairmine::binio {

// Little-endian writer/reader for the checkpoint, vector and index files.

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

template <typename U>
void put_uint(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

inline void put_u32(std::string& out, std::uint32_t v) { put_uint(out, v); }
inline void put_u64(std::string& out, std::uint64_t v) { put_uint(out, v); }
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void expect_magic(std::string_view magic) {
    if (bytes_.substr(pos_, magic.size()) != magic) {
      throw ParseError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    pos_ += magic.size();
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw ParseError(what_ + ": trailing bytes");
  }
  // Guards allocation sizes read from untrusted headers.
  void require(std::uint64_t nbytes) const {
    if (nbytes > remaining()) throw ParseError(what_ + ": truncated file");
  }

 private:
  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ParseError(what_ + ": truncated file");
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U get() {
    std::string_view s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(s[i])) << (8 * i);
    }
    return v;
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace pairmine::binio
