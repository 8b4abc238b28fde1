#pragma once

#include <string>
#include <string_view>

namespace numex {

/// True for an optional sign, digits, optional fractional part: "817",
/// "-5", "67.6", "+0.38". No exponents, no bare ".5", no thousands marks.
bool is_plain_numeral(std::string_view token);

/// A plain numeral with a trailing '%': "58%", "67.6%".
bool is_percent_numeral(std::string_view token);

/// Exact division of a plain numeral by 100, rendered as the shortest
/// decimal string: "58" -> "0.58", "100" -> "1", "67.6" -> "0.676".
/// Pure digit-string arithmetic; no floating point.
std::string decimal_div100(std::string_view plain);

/// Value equality of two decimal strings, compared exactly as decimals.
bool decimal_equal(std::string_view a, std::string_view b);

}  // namespace numex
