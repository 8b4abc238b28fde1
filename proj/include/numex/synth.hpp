#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "numex/annotation.hpp"

namespace numex {

/// Knobs for the synthetic annotated corpus. Defaults are tuned so a
/// 500-sentence corpus yields roughly 1200-1800 instances with enough
/// labeled spans that a constant all-"none" predictor scores a clearly
/// lower dice than accuracy.
struct SynthOptions {
  std::size_t n_sentences = 500;
  std::uint64_t seed = 0;
  /// Exact quota: floor(n_sentences * fraction) sentences come from the
  /// no-entity archetype (relation-free numerals such as years).
  double no_entity_fraction = 0.06;
  /// Upper bound on appended clause blocks ("; p < x", "( ci , a - b )")
  /// per sentence; the count is drawn uniformly from [0, max].
  int max_distractor_blocks = 1;
  /// Of the sentences that take a block, this share gets the p-value
  /// clause; the rest get the confidence-interval range clause.
  double p_value_block_share = 0.9;
  double opener_fraction = 0.5;
  /// Share of nested-metric sentences emitted with the inner metric
  /// replaced by a mask token and the outer metric annotated instead;
  /// this is the pattern the hierarchical extraction pass relies on.
  double masked_variant_fraction = 0.25;
};

/// Deterministic synthetic corpus. Every doc is aligned and passes
/// validate_doc; entity/relation ids are unique across the corpus. The
/// archetypes cover adjacent unit+metric, far-away metric, nested metrics
/// (closest annotated), unit-and-metric counts, and relation-free
/// numerals.
std::vector<AnnotatedDoc> generate_corpus(const SynthOptions& options);

struct CorpusStats {
  std::size_t sentences = 0;
  std::size_t instances = 0;  // one per Num entity
  std::size_t no_relation_sentences = 0;
  /// Effective-range lengths bucketed by 5: [1,5], [6,10], ... last
  /// bucket collects everything past 50.
  std::vector<std::size_t> range_length_histogram;
  int farthest_before = 0;  // labeled tokens this far left of a target
  int farthest_after = 0;
  std::size_t max_windowed_length = 0;  // longest range plus margins, capped
};

CorpusStats corpus_stats(const std::vector<AnnotatedDoc>& docs);

std::string to_json(const CorpusStats& stats);

/// dir/<basename>.txt + dir/<basename>.ann, consumable by the annotation
/// module and by standoff editors.
void write_corpus(const std::vector<AnnotatedDoc>& docs, const std::filesystem::path& dir,
                  const std::string& basename = "corpus");

}  // namespace numex
