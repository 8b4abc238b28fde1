#include "numex/preprocess.hpp"

#include <algorithm>
#include <cctype>

#include "numex/decimal.hpp"
#include "numex/errors.hpp"
#include "numex/utf8.hpp"

namespace numex {

namespace {

bool is_ascii_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ascii_alpha(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

// abbreviations whose trailing dot must not end a sentence
bool protected_abbreviation(std::string_view before_dot) {
  // token text up to and including the candidate dot
  if (before_dot.ends_with("e.g.") || before_dot.ends_with("i.e.")) return true;
  if (before_dot.ends_with("vs.") || before_dot.ends_with("Fig.")) return true;
  // single-letter initial: "J." / mid-abbreviation "e."
  if (before_dot.size() >= 2 && before_dot.back() == '.' &&
      is_ascii_alpha(before_dot[before_dot.size() - 2]) &&
      (before_dot.size() == 2 ||
       !is_ascii_alpha(before_dot[before_dot.size() - 3])))
    return true;
  return false;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::vector<std::string> segment_sentences(const RawAbstract& abstract) {
  const std::string& body = abstract.body;
  std::vector<std::string> sentences;
  std::size_t start = 0;

  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (c != '.' && c != '!' && c != '?') continue;

    if (c == '.') {
      const bool digit_flanked = i > 0 && i + 1 < body.size() && is_ascii_digit(body[i - 1]) &&
                                 is_ascii_digit(body[i + 1]);
      if (digit_flanked) continue;
      if (protected_abbreviation(std::string_view(body).substr(start, i - start + 1))) continue;
    }

    // boundary only before whitespace + sentence-opener, or at end of body
    std::size_t j = i + 1;
    while (j < body.size() && body[j] == '.') ++j;  // swallow "..." runs
    std::size_t k = j;
    while (k < body.size() && std::isspace(static_cast<unsigned char>(body[k]))) ++k;
    const bool at_end = k >= body.size();
    if (!at_end) {
      if (k == j) continue;  // no whitespace after the punctuation
      const char next = body[k];
      const bool opener = std::isupper(static_cast<unsigned char>(next)) || is_ascii_digit(next) ||
                          next == '(' || next == '"' || next == '\'';
      if (c == '.' && !opener) continue;
    }

    std::string sentence = trim(std::string_view(body).substr(start, j - start));
    if (!sentence.empty()) sentences.push_back(std::move(sentence));
    start = k;
    i = j - 1;
  }

  std::string tail = trim(std::string_view(body).substr(start));
  if (!tail.empty()) sentences.push_back(std::move(tail));
  return sentences;
}

TokenizedSentence tokenize(std::string_view sentence) {
  // pass 1: split the sentence into chunks at whitespace, then split each
  // chunk by the punctuation rules, byte-wise (all rule chars are ASCII)
  std::vector<std::string> parts;
  std::string current;
  const auto flush = [&] {
    if (!current.empty()) {
      parts.push_back(current);
      current.clear();
    }
  };

  for (std::size_t i = 0; i < sentence.size(); ++i) {
    const char c = sentence[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
      continue;
    }
    if (c == '+' && i + 2 < sentence.size() && sentence[i + 1] == '/' && sentence[i + 2] == '-') {
      flush();
      parts.push_back("+/-");
      i += 2;
      continue;
    }
    switch (c) {
      case '(': case ')': case '[': case ']': case '{': case '}':
      case ',': case ';': case ':': case '?': case '!':
        flush();
        parts.push_back(std::string(1, c));
        continue;
      case '/':
        flush();
        parts.push_back("/");
        continue;
      case '.': {
        const bool keep = i > 0 && i + 1 < sentence.size() && is_ascii_digit(sentence[i - 1]) &&
                          is_ascii_digit(sentence[i + 1]) && !current.empty();
        if (keep) {
          current += c;
        } else {
          flush();
          parts.push_back(".");
        }
        continue;
      }
      case '-': {
        // a '-' opens a numeral sign only at token start before a digit
        const bool sign = current.empty() && i + 1 < sentence.size() && is_ascii_digit(sentence[i + 1]);
        if (sign) {
          current += c;
        } else {
          flush();
          parts.push_back("-");
        }
        continue;
      }
      default:
        current += c;
    }
  }
  flush();

  return sentence_from_tokens(parts);
}

TokenizedSentence sentence_from_tokens(const std::vector<std::string>& tokens) {
  TokenizedSentence out;
  std::size_t cp = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      out.text += ' ';
      ++cp;
    }
    const std::size_t len = utf8::length(tokens[i]);
    out.tokens.push_back(Token{tokens[i], cp, cp + len});
    out.text += tokens[i];
    cp += len;
    if (is_plain_numeral(tokens[i])) out.numeral_positions.push_back(i);
  }
  return out;
}

TokenizedSentence normalize_numerals(const TokenizedSentence& sentence) {
  std::vector<std::string> tokens;
  tokens.reserve(sentence.tokens.size());
  for (const auto& tok : sentence.tokens) {
    if (!tok.surface.empty() && tok.surface.back() == '%') {
      const std::string_view prefix =
          std::string_view(tok.surface).substr(0, tok.surface.size() - 1);
      if (!is_plain_numeral(prefix))
        throw UnparseableNumeral("token '" + tok.surface + "' ends in % without a numeric prefix");
      tokens.push_back(decimal_div100(prefix));
    } else {
      tokens.push_back(tok.surface);
    }
  }
  return sentence_from_tokens(tokens);
}

std::vector<TokenizedSentence> filter_numeral_sentences(std::vector<TokenizedSentence> sentences) {
  std::erase_if(sentences, [](const TokenizedSentence& s) { return s.numeral_positions.empty(); });
  return sentences;
}

}  // namespace numex
