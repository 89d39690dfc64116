#include "trajcast/bytes.hpp"

#include <fstream>
#include <iterator>

namespace trajcast::bytes {

uint64_t fnv1a64(const std::string& data) {
  uint64_t hash = 14695981039346656037ULL;
  for (unsigned char b : data) {
    hash ^= b;
    hash *= 1099511628211ULL;
  }
  return hash;
}

void put_str(std::string& buf, const std::string& s) {
  put<uint64_t>(buf, s.size());
  buf += s;
}

std::string take_str(const std::string& buf, size_t& at) {
  const uint64_t n = take<uint64_t>(buf, at);
  if (n > buf.size() - at) throw ParseError("payload is truncated");
  std::string out = buf.substr(at, static_cast<size_t>(n));
  at += static_cast<size_t>(n);
  return out;
}

void write_framed(const std::string& path, const char (&magic)[4],
                  const std::string& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(magic, 4);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  const uint64_t checksum = fnv1a64(payload);
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) throw IoError("failed writing " + path);
}

std::string read_framed(const std::string& path, const char (&magic)[4],
                        const char* kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + sizeof(uint64_t)) {
    throw ParseError(path + " is too short to be a " + kind + " file");
  }
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw ParseError(path + " is not a " + std::string(kind) + " file");
  }
  const std::string payload = bytes.substr(4, bytes.size() - 4 - sizeof(uint64_t));
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(uint64_t), sizeof(stored));
  if (fnv1a64(payload) != stored) {
    throw ParseError(path + " failed its checksum, file is corrupt");
  }
  return payload;
}

}  // namespace trajcast::bytes
