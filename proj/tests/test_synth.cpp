#include <doctest.h>

#include <filesystem>
#include <set>

#include "numex/dataset.hpp"
#include "numex/decimal.hpp"
#include "numex/preprocess.hpp"
#include "numex/synth.hpp"

using namespace numex;

namespace {

SynthOptions small_options(std::size_t n = 80, std::uint64_t seed = 5) {
  SynthOptions o;
  o.n_sentences = n;
  o.seed = seed;
  return o;
}

bool has_unit_and_metric(const AnnotatedDoc& doc, const Entity& num) {
  bool unit = false, metric = false;
  for (const auto& r : doc.relations) {
    if (r.source != num.id) continue;
    unit |= r.kind == RelationKind::HasUnit;
    metric |= r.kind == RelationKind::HasMetric;
  }
  return unit && metric;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("generation is deterministic under a fixed seed") {
  const auto a = generate_corpus(small_options());
  const auto b = generate_corpus(small_options());
  CHECK(a == b);
  const auto c = generate_corpus(small_options(80, 6));
  CHECK(a != c);
}

TEST_CASE("every generated doc passes validation") {
  for (const auto& doc : generate_corpus(small_options(120, 3))) {
    CAPTURE(doc.doc_id);
    CHECK(validate_doc(doc).empty());
  }
}

TEST_CASE("the corpus covers the five annotation archetypes") {
  const auto docs = generate_corpus(small_options(120, 8));

  bool adjacent = false;       // unit and metric close to the numeral
  bool far_metric = false;     // metric at distance > 4 words
  bool nested_closest = false; // metric-only numeral (nested template)
  bool both_count = false;     // "a total of N unit underwent metric"
  bool no_entities = false;    // relation-free numerals

  for (const auto& doc : docs) {
    if (doc.relations.empty() && !doc.entities.empty()) no_entities = true;
    for (const auto& e : doc.entities) {
      if (e.kind != EntityKind::Num) continue;
      bool unit = false, metric = false;
      std::ptrdiff_t metric_distance = 0;
      for (const auto& r : doc.relations) {
        if (r.source != e.id) continue;
        if (r.kind == RelationKind::HasUnit) unit = true;
        if (r.kind == RelationKind::HasMetric) {
          metric = true;
          const Entity* m = doc.find_entity(r.target);
          metric_distance = std::abs(m->word_end - e.word_start);
        }
      }
      if (unit && metric && metric_distance <= 4) adjacent = true;
      if (metric && metric_distance > 4) far_metric = true;
      if (metric && !unit) nested_closest = true;
      if (unit && metric) both_count = true;
    }
  }
  CHECK(adjacent);
  CHECK(far_metric);
  CHECK(nested_closest);
  CHECK(both_count);
  CHECK(no_entities);
}

TEST_CASE("the no-entity quota is exact") {
  auto options = small_options(100, 9);
  options.no_entity_fraction = 0.13;
  const auto docs = generate_corpus(options);
  std::size_t no_rel = 0;
  for (const auto& doc : docs) no_rel += doc.relations.empty();
  CHECK(no_rel == 13);
}

TEST_CASE("numerals are normalized and relations mirror the template") {
  const auto docs = generate_corpus(small_options(120, 10));
  bool checked_adjacent = false;
  for (const auto& doc : docs) {
    for (const auto& e : doc.entities)
      if (e.kind == EntityKind::Num) CHECK(is_plain_numeral(e.surface));

    // "the mean <metric> was <num> +/- <num> <unit>" archetype
    if (doc.text.find("+/-") == std::string::npos) continue;
    for (const auto& e : doc.entities) {
      if (e.kind != EntityKind::Num || !has_unit_and_metric(doc, e)) continue;
      checked_adjacent = true;
      for (const auto& r : doc.relations) {
        if (r.source != e.id) continue;
        const Entity* target = doc.find_entity(r.target);
        if (r.kind == RelationKind::HasMetric) CHECK(target->word_end < e.word_start);
        if (r.kind == RelationKind::HasUnit) CHECK(target->word_start > e.word_start);
      }
    }
  }
  CHECK(checked_adjacent);
}

TEST_CASE("masked nested variants carry the mask token and annotate the outer metric") {
  auto options = small_options(200, 11);
  options.masked_variant_fraction = 1.0;
  const auto docs = generate_corpus(options);
  bool found = false;
  for (const auto& doc : docs) {
    if (doc.text.find("[oov]") == std::string::npos) continue;
    found = true;
    bool metric_relation = false;
    for (const auto& r : doc.relations) metric_relation |= r.kind == RelationKind::HasMetric;
    CHECK(metric_relation);
    CHECK(validate_doc(doc).empty());
  }
  CHECK(found);
}

TEST_CASE("generated text re-tokenizes to its own tokens") {
  // raw-text inference runs the tokenizer; pre-tokenized corpus sentences
  // must come out unchanged (mask-token variants excepted: "[" splits)
  for (const auto& doc : generate_corpus(small_options(120, 21))) {
    if (doc.text.find('[') != std::string::npos) continue;
    const auto redone = tokenize(doc.text);
    REQUIRE(redone.tokens.size() == doc.tokens.size());
    for (std::size_t i = 0; i < doc.tokens.size(); ++i)
      CHECK(redone.tokens[i].surface == doc.tokens[i].surface);
  }
}

TEST_CASE("corpus_stats counts instances per numeral") {
  const auto docs = generate_corpus(small_options(10, 12));
  std::size_t numerals = 0;
  for (const auto& doc : docs)
    for (const auto& e : doc.entities) numerals += e.kind == EntityKind::Num;

  const auto stats = corpus_stats(docs);
  CHECK(stats.sentences == 10);
  CHECK(stats.instances == numerals);
  CHECK(stats.max_windowed_length <= 50);
  std::size_t histogram_total = 0;
  for (auto b : stats.range_length_histogram) histogram_total += b;
  CHECK(histogram_total == stats.instances);
}

TEST_CASE("corpus_stats on an empty corpus is all zero") {
  const auto stats = corpus_stats({});
  CHECK(stats.sentences == 0);
  CHECK(stats.instances == 0);
  CHECK(stats.farthest_before == 0);
  CHECK(stats.farthest_after == 0);
}

TEST_CASE("corpus_stats tracks entity distances") {
  // unit placed 7 words after its numeral
  const auto doc = align_to_words(
      parse_standoff("d", "5 a b c d e f g units",
                     "T1\tNum 0 1\t5\nT2\tUnit 16 21\tunits\nR1\thas_unit Arg1:T1 Arg2:T2\n"));
  const auto stats = corpus_stats({doc});
  CHECK(stats.farthest_after >= 7);
}

TEST_CASE("written corpora read back with identical structure") {
  const auto dir = std::filesystem::temp_directory_path() / "numex_synth_tests";
  std::filesystem::remove_all(dir);
  const auto docs = generate_corpus(small_options(40, 13));
  write_corpus(docs, dir);

  const auto back = load_standoff_dir(dir);
  REQUIRE(back.size() == docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    CHECK(back[i].text == docs[i].text);
    CHECK(back[i].tokens == docs[i].tokens);
    CHECK(back[i].entities == docs[i].entities);
    CHECK(back[i].relations == docs[i].relations);
    CHECK(validate_doc(back[i]).empty());
  }
}

TEST_SUITE_END();
