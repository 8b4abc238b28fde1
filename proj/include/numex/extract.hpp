#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "numex/dataset.hpp"
#include "numex/preprocess.hpp"
#include "numex/tagger.hpp"

namespace numex {

/// A decoded unit or metric span. Word positions are inclusive sentence
/// coordinates; char offsets address the original sentence text. The text
/// is the model's view, so masked numerals print as "[num]".
struct ExtractedSpan {
  int word_start = 0;
  int word_end = 0;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string text;

  bool operator==(const ExtractedSpan&) const = default;
};

/// Everything extracted for one target numeral.
struct ExtractionRecord {
  std::string doc_id;
  std::string numeral_value;
  int numeral_word_pos = 0;
  std::vector<ExtractedSpan> unit_spans;
  std::vector<ExtractedSpan> metric_spans;
  std::vector<std::string> outer_metrics;  // hierarchical passes, inner -> outer

  bool operator==(const ExtractionRecord&) const = default;
};

/// Argmax tags over an instance window, values in {0, 1, 2}.
struct TagSequence {
  std::vector<int> labels;
};

struct DecodedSpans {
  std::vector<ExtractedSpan> units;
  std::vector<ExtractedSpan> metrics;
};

/// Run-length decoding: maximal runs of tag 1 become unit spans, runs of
/// tag 2 metric spans. Word positions are window-relative; span text joins
/// the window tokens with single spaces. char offsets are left at zero.
DecodedSpans decode_labels(const TagSequence& tags, const std::vector<std::string>& window_tokens);

/// Token substituted for an inner metric during hierarchical passes.
/// [oov] is absent from training text by construction; [num] is offered
/// for comparison runs.
enum class HierMaskMode { Oov, Num };

struct ExtractOptions {
  int max_len = 50;
  int window_halfwidth = 22;  // shrinks when character expansion would overflow
  int max_depth = 3;
  HierMaskMode mask_mode = HierMaskMode::Oov;
};

/// One record per numeral: the sentence is re-encoded per target (other
/// numerals masked, target character-expanded, window of +/-
/// window_halfwidth words), tagged, and decoded.
template <class S>
std::vector<ExtractionRecord> extract_sentence(const TaggerModel<S>& model,
                                               const Vocabulary& vocab,
                                               const TokenizedSentence& sentence,
                                               std::string_view doc_id,
                                               const ExtractOptions& options = {});

/// extract_sentence, then for each record repeatedly masks the found
/// metric spans with a single token and re-tags, appending newly found
/// metrics to outer_metrics. Stops on no new metric, a repeated metric,
/// or after max_depth passes in total.
template <class S>
std::vector<ExtractionRecord> extract_hierarchical(const TaggerModel<S>& model,
                                                   const Vocabulary& vocab,
                                                   const TokenizedSentence& sentence,
                                                   std::string_view doc_id,
                                                   const ExtractOptions& options = {});

/// One JSON object per record, fixed key order:
/// {doc_id, numeral, numeral_pos, units, metrics, outer_metrics}.
std::string records_to_jsonl(const std::vector<ExtractionRecord>& records);
std::vector<ExtractionRecord> records_from_jsonl(std::string_view text);

/// Flat CSV, one row per numeral; multiple spans join with " | ".
std::string records_to_csv(const std::vector<ExtractionRecord>& records);

}  // namespace numex
