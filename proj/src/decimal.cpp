#include "numex/decimal.hpp"

#include <algorithm>
#include <cctype>

namespace numex {

namespace {

struct Parts {
  bool negative = false;
  std::string int_digits;   // at least "0"
  std::string frac_digits;  // possibly empty
};

bool all_digits(std::string_view s) {
  return !s.empty() &&
         std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

bool parse(std::string_view token, Parts& out) {
  std::string_view rest = token;
  if (!rest.empty() && (rest.front() == '-' || rest.front() == '+')) {
    out.negative = rest.front() == '-';
    rest.remove_prefix(1);
  }
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos) {
    if (!all_digits(rest)) return false;
    out.int_digits = std::string(rest);
    out.frac_digits.clear();
    return true;
  }
  std::string_view ip = rest.substr(0, dot);
  std::string_view fp = rest.substr(dot + 1);
  if (!all_digits(ip) || !all_digits(fp)) return false;
  out.int_digits = std::string(ip);
  out.frac_digits = std::string(fp);
  return true;
}

void normalize(Parts& p) {
  std::size_t nz = p.int_digits.find_first_not_of('0');
  p.int_digits = (nz == std::string::npos) ? "0" : p.int_digits.substr(nz);
  while (!p.frac_digits.empty() && p.frac_digits.back() == '0') p.frac_digits.pop_back();
  if (p.int_digits == "0" && p.frac_digits.empty()) p.negative = false;
}

std::string render(const Parts& p) {
  std::string out;
  if (p.negative) out += '-';
  out += p.int_digits;
  if (!p.frac_digits.empty()) {
    out += '.';
    out += p.frac_digits;
  }
  return out;
}

}  // namespace

bool is_plain_numeral(std::string_view token) {
  Parts p;
  return parse(token, p);
}

bool is_percent_numeral(std::string_view token) {
  if (token.empty() || token.back() != '%') return false;
  return is_plain_numeral(token.substr(0, token.size() - 1));
}

std::string decimal_div100(std::string_view plain) {
  Parts p;
  if (!parse(plain, p)) return {};
  // shift the decimal point two places left
  std::string digits = p.int_digits;
  if (digits.size() > 2) {
    p.frac_digits = digits.substr(digits.size() - 2) + p.frac_digits;
    p.int_digits = digits.substr(0, digits.size() - 2);
  } else {
    p.frac_digits = std::string(2 - digits.size(), '0') + digits + p.frac_digits;
    p.int_digits = "0";
  }
  normalize(p);
  return render(p);
}

bool decimal_equal(std::string_view a, std::string_view b) {
  Parts pa, pb;
  if (!parse(a, pa) || !parse(b, pb)) return false;
  normalize(pa);
  normalize(pb);
  return pa.negative == pb.negative && pa.int_digits == pb.int_digits &&
         pa.frac_digits == pb.frac_digits;
}

}  // namespace numex
