#pragma once

// Internal helpers for the canonical JSON artifact formats.

#include <string>

#include <json.hpp>

#include "common.hpp"

namespace winnow {

// Addresses serialize as fixed-width hex strings ("0x00001000").
inline uint32_t parse_addr(const nlohmann::json& j) {
  if (!j.is_string()) throw error(errc::format, "address must be a hex string");
  const std::string& s = j.get_ref<const std::string&>();
  if (s.size() < 3 || s.size() > 10 || s[0] != '0' || s[1] != 'x')
    throw error(errc::format, "bad address: " + s);
  uint32_t v = 0;
  for (size_t i = 2; i < s.size(); i++) {
    char c = s[i];
    uint32_t d;
    if (c >= '0' && c <= '9') d = (uint32_t)(c - '0');
    else if (c >= 'a' && c <= 'f') d = (uint32_t)(c - 'a' + 10);
    else throw error(errc::format, "bad address: " + s);
    v = v << 4 | d;
  }
  return v;
}

}  // namespace winnow
