#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "numex/annotation.hpp"

namespace numex {

struct RawAbstract {
  std::string source_id;
  std::string body;
};

/// A tokenized sentence over its normalized (single-space-joined) text.
/// numeral_positions lists the word indices whose token parses as a plain
/// decimal; percent tokens only count after normalize_numerals.
struct TokenizedSentence {
  std::string text;
  std::vector<Token> tokens;
  std::vector<std::size_t> numeral_positions;

  bool operator==(const TokenizedSentence&) const = default;
};

/// Splits an abstract body into sentences on terminal punctuation.
/// Decimal points, "e.g."/"i.e."/"vs."/"Fig." and single-letter initials
/// are protected; a body without terminal punctuation is one sentence.
std::vector<std::string> segment_sentences(const RawAbstract& abstract);

/// Word segmentation. Brackets and clause punctuation become standalone
/// tokens; '/' and '-' split except in "+/-" and numeral signs; '.' stays
/// only between digits. Idempotent on its own space-joined output.
TokenizedSentence tokenize(std::string_view sentence);

/// Builds a TokenizedSentence directly from pre-split tokens.
TokenizedSentence sentence_from_tokens(const std::vector<std::string>& tokens);

/// Replaces every percent token "X%" by the exact decimal string of X/100
/// ("58%" -> "0.58") and recomputes numeral positions. Throws
/// UnparseableNumeral when a token ends in '%' without a numeric prefix.
TokenizedSentence normalize_numerals(const TokenizedSentence& sentence);

/// Keeps sentences with at least one numeral, preserving order.
std::vector<TokenizedSentence> filter_numeral_sentences(std::vector<TokenizedSentence> sentences);

}  // namespace numex
