#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>

#include "trajcast/errors.hpp"

namespace trajcast::bytes {

// FNV-1a over the raw bytes.
uint64_t fnv1a64(const std::string& data);

// Fixed-width scalars in native byte order.
template <typename T>
void put(std::string& buf, const T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  const char* raw = reinterpret_cast<const char*>(&value);
  buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& at) {
  static_assert(std::is_trivially_copyable_v<T>);
  if (sizeof(T) > buf.size() - at) throw ParseError("payload is truncated");
  T value;
  std::memcpy(&value, buf.data() + at, sizeof(T));
  at += sizeof(T);
  return value;
}

// Length-prefixed byte strings.
void put_str(std::string& buf, const std::string& s);
std::string take_str(const std::string& buf, size_t& at);

// Framed binary files: 4-byte magic, payload, FNV-1a checksum of the payload.
// kind names the format in error messages ("mixture model", "bundle", ...).
void write_framed(const std::string& path, const char (&magic)[4],
                  const std::string& payload);
std::string read_framed(const std::string& path, const char (&magic)[4],
                        const char* kind);

}  // namespace trajcast::bytes
