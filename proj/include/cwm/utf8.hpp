#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace cwm::utf8 {

// Byte length of the sequence introduced by lead byte b; 0 for a
// continuation or invalid lead byte.
inline std::size_t seq_len(unsigned char b) {
  if (b < 0x80) return 1;
  if ((b & 0xE0) == 0xC0) return 2;
  if ((b & 0xF0) == 0xE0) return 3;
  if ((b & 0xF8) == 0xF0) return 4;
  return 0;
}

inline bool valid(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t n = seq_len(static_cast<unsigned char>(s[i]));
    if (n == 0 || i + n > s.size()) return false;
    for (std::size_t k = 1; k < n; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    }
    i += n;
  }
  return true;
}

// Length in code points, not bytes.
inline std::size_t length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

// Byte offset of code point index cp; s.size() when cp >= length(s).
inline std::size_t byte_offset(std::string_view s, std::size_t cp) {
  std::size_t i = 0;
  while (i < s.size() && cp > 0) {
    std::size_t n = seq_len(static_cast<unsigned char>(s[i]));
    i += (n == 0 ? 1 : n);
    --cp;
  }
  return i;
}

// Slice by code-point indices [begin, end).
inline std::string_view slice(std::string_view s, std::size_t begin, std::size_t end) {
  if (end < begin) end = begin;
  std::size_t b = byte_offset(s, begin);
  std::size_t e = byte_offset(s, end);
  return s.substr(b, e - b);
}

// Code-point index of a byte offset (which must sit on a sequence boundary).
inline std::size_t code_point_index(std::string_view s, std::size_t byte) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < byte && i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) ++n;
  }
  return n;
}

// Appends code point cp encoded as UTF-8.
inline void append(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

}  // namespace cwm::utf8
