#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace numex {

enum class EntityKind { Num, Unit, Targ };
enum class RelationKind { HasUnit, HasMetric };

std::string_view to_string(EntityKind k);
std::string_view to_string(RelationKind k);

/// One word of a pre-tokenized sentence. Offsets count Unicode scalar
/// values into the sentence text, [char_start, char_end).
struct Token {
  std::string surface;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  bool operator==(const Token&) const = default;
};

/// A marked span. word_start/word_end are inclusive token positions,
/// filled by align_to_words (-1 before alignment).
struct Entity {
  std::string id;  // "T1", "T2", ...
  EntityKind kind = EntityKind::Num;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string surface;
  std::ptrdiff_t word_start = -1;
  std::ptrdiff_t word_end = -1;

  bool operator==(const Entity&) const = default;
};

/// Directed relation from a numeral entity to its unit or metric.
struct RelationAnn {
  std::string id;  // "R1", ...
  RelationKind kind = RelationKind::HasUnit;
  std::string source;  // entity id, must name a Num
  std::string target;  // Unit for HasUnit, Targ for HasMetric

  bool operator==(const RelationAnn&) const = default;
};

/// One pre-tokenized sentence with its entities and relations.
struct AnnotatedDoc {
  std::string doc_id;
  std::string text;
  std::vector<Token> tokens;
  std::vector<Entity> entities;
  std::vector<RelationAnn> relations;

  const Entity* find_entity(std::string_view id) const;

  bool operator==(const AnnotatedDoc&) const = default;
};

/// Whitespace-split of a pre-tokenized sentence, with scalar-value offsets.
std::vector<Token> split_tokens(std::string_view text);

/// Parses standoff lines against a single-sentence text. Grammar:
///   Tn<TAB>Kind start end<TAB>surface
///   Rn<TAB>Kind Arg1:Tx Arg2:Ty
/// Offsets count Unicode scalar values. Throws MalformedLine,
/// SurfaceMismatch, DanglingRelation. File order of entities and
/// relations is preserved; word spans are left unaligned.
AnnotatedDoc parse_standoff(std::string_view doc_id, std::string_view source_text,
                            std::string_view ann_lines);

/// Fills word_start/word_end for every entity. An entity must cover whole
/// tokens; otherwise throws MisalignedEntity.
AnnotatedDoc align_to_words(AnnotatedDoc doc);

enum class ViolationRule {
  TokenOverlap,
  MisalignedEntity,
  SurfaceMismatch,
  DanglingRelation,
  BadRelationSource,
  BadRelationTarget,
  TooManyUnits,
  TooManyMetrics,
};

std::string_view to_string(ViolationRule r);

struct Violation {
  ViolationRule rule;
  std::string subject_id;  // entity or relation id
  std::string message;
};

/// Checks every doc invariant; returns an empty list iff they all hold.
/// Pure: never throws on rule breaks, never mutates the doc.
std::vector<Violation> validate_doc(const AnnotatedDoc& doc);

/// Inverse of parse_standoff: (sentence text, standoff lines) with
/// doc-local offsets. parse_standoff(to_standoff(doc)) == doc.
std::pair<std::string, std::string> to_standoff(const AnnotatedDoc& doc);

/// Reads a paired .txt/.ann file. The .txt holds one sentence per line;
/// .ann offsets address the whole file (newline = one scalar value).
/// Returns one aligned doc per non-empty sentence, offsets rebased;
/// doc_id = "<stem>#<line>".
std::vector<AnnotatedDoc> read_standoff_file(const std::filesystem::path& txt_path,
                                             const std::filesystem::path& ann_path);

/// Writes docs as a sentence-per-line .txt and a whole-file-offset .ann.
/// Entity/relation ids must be unique across docs (read_standoff_file and
/// the synthetic generator guarantee this).
void write_standoff_file(const std::vector<AnnotatedDoc>& docs,
                         const std::filesystem::path& txt_path,
                         const std::filesystem::path& ann_path);

/// All .txt/.ann pairs in a directory, sorted by filename.
std::vector<AnnotatedDoc> load_standoff_dir(const std::filesystem::path& dir);

}  // namespace numex
