#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "numex/annotation.hpp"

namespace numex {

inline constexpr int kLabelNone = 0;
inline constexpr int kLabelUnit = 1;
inline constexpr int kLabelMetric = 2;
inline constexpr int kNumClasses = 3;

inline constexpr std::string_view kPadToken = "[pad]";
inline constexpr std::string_view kOovToken = "[oov]";
inline constexpr std::string_view kNumToken = "[num]";
inline constexpr std::string_view kNegToken = "[neg]";
inline constexpr std::string_view kDotToken = "[dot]";

/// Token<->index map. Indices 0..14 are reserved ([pad], [oov], [num],
/// digits 0-9, [neg], [dot]); corpus tokens follow from 15 in descending
/// term frequency, ties broken lexicographically.
class Vocabulary {
 public:
  static constexpr int kPadIndex = 0;
  static constexpr int kOovIndex = 1;
  static constexpr int kNumIndex = 2;
  static constexpr int kFirstDigitIndex = 3;  // "0".."9" = 3..12
  static constexpr int kNegIndex = 13;
  static constexpr int kDotIndex = 14;
  static constexpr int kFirstCorpusIndex = 15;

  /// The 15 reserved entries only.
  static Vocabulary reserved_only();

  /// Appends a corpus token; must not duplicate an existing entry.
  void push_corpus_token(std::string token);

  /// Index of `token`, or kOovIndex when unknown.
  int index_of(std::string_view token) const;

  bool contains(std::string_view token) const { return lookup(token) >= 0; }

  const std::string& token_at(int index) const { return index_to_token_.at(static_cast<std::size_t>(index)); }

  int size() const { return static_cast<int>(index_to_token_.size()); }

  const std::vector<std::string>& tokens() const { return index_to_token_; }

  /// FNV-1a over the newline-joined token list; pins checkpoints to the
  /// vocabulary they were trained with.
  std::uint64_t content_hash() const;

  bool operator==(const Vocabulary& other) const { return index_to_token_ == other.index_to_token_; }

 private:
  int lookup(std::string_view token) const;
  std::vector<std::string> index_to_token_;
  std::unordered_map<std::string, int> token_to_index_;
};

/// Term-frequency vocabulary over aligned docs. Numeral tokens are skipped
/// (they are always masked or character-expanded, never embedded as words),
/// as are tokens spelled like a reserved entry. Throws EmptyCorpus for an
/// empty doc list.
Vocabulary build_vocab(const std::vector<AnnotatedDoc>& docs);

/// One token per character of a decimal string: '-' -> [neg], '.' -> [dot],
/// digits pass through. Throws NotANumeral.
std::vector<std::string> expand_numeral(std::string_view value_text);

struct InstanceMeta {
  std::string doc_id;
  std::string target_numeral_value;
  int target_word_pos = 0;  // word position in the source sentence
  // Positions below index the expanded token sequence (target numeral
  // already split into characters).
  std::pair<int, int> effective_range{0, 0};
  std::pair<int, int> window{0, 0};

  bool operator==(const InstanceMeta&) const = default;
};

/// Unpadded instance: full expanded token sequence plus per-token labels.
struct LabeledSequence {
  std::vector<std::string> tokens;
  std::vector<int> labels;
  InstanceMeta meta;
};

/// Padded, fixed-length instance. indices is empty until encoded.
struct TrainingInstance {
  std::vector<std::string> tokens;
  std::vector<int> indices;
  std::vector<int> labels;
  InstanceMeta meta;

  bool operator==(const TrainingInstance&) const = default;
};

/// One labeled sequence per Num entity: other numerals masked as [num],
/// the target expanded to characters, its unit span labeled 1 and metric
/// span labeled 2. The doc must be aligned and annotation-valid.
std::vector<LabeledSequence> make_instances(const AnnotatedDoc& doc);

/// Smallest inclusive interval containing the target tokens and every
/// nonzero label.
std::pair<int, int> effective_range(const std::vector<int>& labels,
                                    std::pair<int, int> target_span);

/// Windows the sequence to effective range +/- margin (margins shrink when
/// the window would overflow max_len) and right-pads with [pad]/label 0.
/// Throws OversizeInstance when the range alone exceeds max_len.
TrainingInstance truncate_and_pad(const LabeledSequence& seq, int margin = 5, int max_len = 50);

struct DatasetSplit {
  std::vector<TrainingInstance> train;
  std::vector<TrainingInstance> test;
  std::uint64_t seed = 0;
};

/// Uniform shuffle under seed; |train| = floor(ratio * n). Throws
/// TooFewInstances when n < 2.
DatasetSplit split_dataset(std::vector<TrainingInstance> instances, double ratio,
                           std::uint64_t seed);

/// Token -> index; unseen tokens map to [oov].
std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab);

// --- file formats ---

/// One token per line; line number = index.
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

/// One JSON object per instance: {tokens, indices, labels, meta}.
void write_instances_jsonl(const std::vector<TrainingInstance>& instances,
                           const std::filesystem::path& path);
std::vector<TrainingInstance> read_instances_jsonl(const std::filesystem::path& path);

}  // namespace numex
