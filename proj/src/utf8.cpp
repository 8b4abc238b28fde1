#include "numex/utf8.hpp"

namespace numex::utf8 {

namespace {

std::size_t sequence_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead & 0xE0) == 0xC0) return 2;
  if ((lead & 0xF0) == 0xE0) return 3;
  if ((lead & 0xF8) == 0xF0) return 4;
  return 1;  // invalid lead byte: advance one byte
}

}  // namespace

std::vector<std::size_t> boundaries(std::string_view s) {
  std::vector<std::size_t> out;
  out.reserve(s.size() + 1);
  std::size_t i = 0;
  while (i < s.size()) {
    out.push_back(i);
    std::size_t n = sequence_length(static_cast<unsigned char>(s[i]));
    // clamp truncated sequences at end of string
    i += (i + n <= s.size()) ? n : 1;
  }
  out.push_back(s.size());
  return out;
}

std::size_t length(std::string_view s) { return boundaries(s).size() - 1; }

std::string slice(std::string_view s, std::size_t cp_begin, std::size_t cp_end) {
  const auto b = boundaries(s);
  const std::size_t n = b.size() - 1;
  if (cp_begin > cp_end || cp_end > n) return {};
  return std::string(s.substr(b[cp_begin], b[cp_end] - b[cp_begin]));
}

}  // namespace numex::utf8
