#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace storm {

// Little-endian scalar I/O used by the WAV and checkpoint readers/writers.
// Explicit byte assembly keeps the on-disk format independent of host
// endianness.

inline void write_u16le(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff),
                     static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {
      static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
      static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
  write_u32le(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  write_u32le(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_i16le(std::ostream& os, std::int16_t v) {
  write_u16le(os, static_cast<std::uint16_t>(v));
}

inline void write_f64le(std::ostream& os, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  write_u64le(os, bits);
}

inline void write_f32le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  write_u32le(os, bits);
}

inline std::uint16_t read_u16le(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) throw std::runtime_error("unexpected end of stream");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("unexpected end of stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64le(std::istream& is) {
  const std::uint64_t lo = read_u32le(is);
  const std::uint64_t hi = read_u32le(is);
  return lo | (hi << 32);
}

inline std::int16_t read_i16le(std::istream& is) {
  return static_cast<std::int16_t>(read_u16le(is));
}

inline double read_f64le(std::istream& is) {
  const std::uint64_t bits = read_u64le(is);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline float read_f32le(std::istream& is) {
  const std::uint32_t bits = read_u32le(is);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace storm
