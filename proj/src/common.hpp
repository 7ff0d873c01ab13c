#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace winnow {

// Error category, mirrored by the C API status codes.
enum class errc {
  io,        // file could not be read/written
  parse,     // bad assembly or JSON input
  format,    // malformed container or serialized artifact
  verify,    // artifacts disagree (digest mismatch, trace contradicts encoding, ...)
  internal,  // invariant violation inside the library
};

class error : public std::runtime_error {
public:
  error(errc c, const std::string& msg) : std::runtime_error(msg), code(c) {}
  errc code;
};

inline std::string hex32(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

// SHA-256 of a byte range, lowercase hex.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& bytes);

}  // namespace winnow
