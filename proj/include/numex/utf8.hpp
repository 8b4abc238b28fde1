#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace numex::utf8 {

/// Byte offset of every scalar-value boundary in `s`, plus a final entry
/// equal to s.size(). Invalid lead bytes are treated as single-byte units.
std::vector<std::size_t> boundaries(std::string_view s);

/// Number of Unicode scalar values in `s`.
std::size_t length(std::string_view s);

/// Substring addressed in scalar values: [cp_begin, cp_end).
std::string slice(std::string_view s, std::size_t cp_begin, std::size_t cp_end);

}  // namespace numex::utf8
