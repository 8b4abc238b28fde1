#include "numex/synth.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <json.hpp>

#include "numex/dataset.hpp"
#include "numex/decimal.hpp"
#include "numex/errors.hpp"
#include "numex/rng.hpp"
#include "numex/utf8.hpp"

namespace numex {

namespace {

// Patterns are pre-tokenized (single-space separated). Slots:
//   {N<groups>.<fmt>}  numeral; binds to same-group metric/unit pieces
//   {D.<fmt>}          numeral with no relations
//   {M<groups>}        metric phrase        {U<groups>}  unit word
//   {O<groups>}        outer metric: plain text normally, the annotated
//                      metric in the masked nested variant
struct TemplateSpec {
  const char* name;
  const char* pattern;
  int weight;  // relative draw weight among non-no-entity templates
};

constexpr TemplateSpec kNoEntityTemplates[] = {
    {"years_enrolled", "patients were enrolled between {N1.year} and {N2.year}", 1},
    {"years_period", "the study period covered {N1.year} to {N2.year}", 1},
};

constexpr TemplateSpec kMainTemplates[] = {
    {"adjacent", "the mean {M1} was {N1.dec} +/- {D.sd} {U1}", 6},
    {"proportion", "{M1} was achieved in {N1.prop} of {U1}", 10},
    {"far_metric", "{M1} margins were predefined and met in {N1.pct} of {U1}", 8},
    {"nested", "the {O1} of {M1} was {N1.prop}", 6},
    {"count", "a total of {N1.int} {U1} underwent {M1}", 10},
    {"two_rates", "{M1} was seen in {N1.pct} of {U12} , and {M2} in {N2.pct}", 20},
    {"three_rates",
     "{M1} occurred in {N1.pct} , {M2} in {N2.pct} , and {M3} in {N3.pct} of {U123}", 20},
    {"panel", "rates of {M1} , {M2} , and {M3} were {N1.pct} , {N2.pct} , and {N3.pct} in {U123}",
     20},
};

const std::vector<std::vector<std::string>>& metric_pool() {
  static const std::vector<std::vector<std::string>> pool = {
      {"mean", "age"},
      {"recanalization", "rate"},
      {"mortality"},
      {"successful", "reperfusion"},
      {"functional", "independence"},
      {"symptomatic", "hemorrhage"},
      {"technical", "success"},
      {"first", "pass", "effect"},
      {"good", "functional", "outcome"},
      {"median", "procedure", "time"},
      {"baseline", "severity", "score"},
      {"favorable", "outcome"},
      {"complication", "rate"},
      {"early", "neurological", "improvement"},
      {"distal", "embolization"},
      {"vessel", "occlusion"},
  };
  return pool;
}

const std::vector<std::string>& outer_metric_pool() {
  static const std::vector<std::string> pool = {
      "odds", "ratio", "risk", "incidence", "prevalence", "probability", "proportion", "hazard",
  };
  return pool;
}

const std::vector<std::string>& unit_pool() {
  static const std::vector<std::string> pool = {
      "years", "patients", "minutes", "cases", "participants",
      "days",  "hours",    "points",  "procedures", "subjects",
  };
  return pool;
}

const std::vector<std::string>& opener_pool() {
  static const std::vector<std::string> pool = {
      "results :", "overall ,", "in this cohort ,", "at follow up ,", "among treated patients ,",
  };
  return pool;
}

struct PieceTag {
  char kind = 0;  // 'N', 'D', 'M', 'U', 'O'
  std::vector<int> groups;
  std::string format;
};

struct SentenceDraft {
  std::vector<std::string> tokens;
  // (word_start, word_end, kind mapped to EntityKind later, groups)
  struct Span {
    int word_start;
    int word_end;
    EntityKind kind;
    std::vector<int> groups;
  };
  std::vector<Span> spans;
};

PieceTag parse_slot(std::string_view slot) {  // contents between { }
  PieceTag tag;
  tag.kind = slot[0];
  std::size_t i = 1;
  while (i < slot.size() && slot[i] >= '0' && slot[i] <= '9') {
    tag.groups.push_back(slot[i] - '0');
    ++i;
  }
  if (i < slot.size() && slot[i] == '.') tag.format = std::string(slot.substr(i + 1));
  return tag;
}

std::string sample_numeral(const std::string& format, Rng& rng) {
  std::ostringstream os;
  if (format == "pct") {
    os << 1 + rng.below(99) << '%';
  } else if (format == "dec") {
    os << 10 + rng.below(80) << '.' << rng.below(10);
  } else if (format == "prop") {
    const auto cents = 1 + rng.below(99);
    os << "0." << (cents < 10 ? "0" : "") << cents;
  } else if (format == "int") {
    os << 50 + rng.below(900);
  } else if (format == "year") {
    os << 2015 + rng.below(9);
  } else if (format == "pv") {
    static const char* kPValues[] = {"0.05", "0.01", "0.001", "0.02", "0.003"};
    os << kPValues[rng.below(5)];
  } else if (format == "sd") {
    os << 1 + rng.below(9) << '.' << rng.below(10);
  } else if (format == "rint") {
    os << 10 + rng.below(90);
  } else {
    throw Error("unknown numeral format '" + format + "'");
  }
  return os.str();
}

void append_tokens(SentenceDraft& draft, std::string_view space_joined) {
  std::size_t pos = 0;
  while (pos < space_joined.size()) {
    std::size_t next = space_joined.find(' ', pos);
    if (next == std::string_view::npos) next = space_joined.size();
    if (next > pos) draft.tokens.emplace_back(space_joined.substr(pos, next - pos));
    pos = next + 1;
  }
}

// Expands one template pattern; masked_nested swaps the inner metric for a
// mask token and promotes {O} to the annotated metric.
void expand_template(SentenceDraft& draft, const TemplateSpec& tmpl, bool masked_nested,
                     Rng& rng) {
  // per-sentence sampling without replacement
  std::vector<std::size_t> metric_order(metric_pool().size());
  for (std::size_t i = 0; i < metric_order.size(); ++i) metric_order[i] = i;
  rng.shuffle(metric_order);
  std::size_t next_metric = 0;

  const std::string_view pattern = tmpl.pattern;
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    std::size_t next = pattern.find(' ', pos);
    if (next == std::string_view::npos) next = pattern.size();
    const std::string_view word = pattern.substr(pos, next - pos);
    pos = next + 1;
    if (word.empty()) continue;

    if (word.front() != '{') {
      draft.tokens.emplace_back(word);
      continue;
    }
    const PieceTag tag = parse_slot(word.substr(1, word.size() - 2));
    const int start = static_cast<int>(draft.tokens.size());

    if (tag.kind == 'N' || tag.kind == 'D') {
      draft.tokens.push_back(sample_numeral(tag.format, rng));
      draft.spans.push_back({start, start, EntityKind::Num, tag.groups});
    } else if (tag.kind == 'U') {
      draft.tokens.push_back(unit_pool()[rng.below(unit_pool().size())]);
      draft.spans.push_back({start, start, EntityKind::Unit, tag.groups});
    } else if (tag.kind == 'M') {
      if (masked_nested) {
        draft.tokens.emplace_back(kOovToken);  // inner metric hidden, as in a recursive pass
      } else {
        const auto& phrase = metric_pool()[metric_order[next_metric++ % metric_order.size()]];
        draft.tokens.insert(draft.tokens.end(), phrase.begin(), phrase.end());
        draft.spans.push_back(
            {start, static_cast<int>(draft.tokens.size()) - 1, EntityKind::Targ, tag.groups});
      }
    } else if (tag.kind == 'O') {
      draft.tokens.push_back(outer_metric_pool()[rng.below(outer_metric_pool().size())]);
      if (masked_nested)
        draft.spans.push_back({start, start, EntityKind::Targ, tag.groups});
    } else {
      throw Error("unknown template slot kind");
    }
  }
}

// "; p < 0.05" — the p-value numeral takes "p" as its metric
void append_p_value_block(SentenceDraft& draft, Rng& rng, int group) {
  draft.tokens.emplace_back(";");
  const int p_pos = static_cast<int>(draft.tokens.size());
  draft.tokens.emplace_back("p");
  draft.tokens.emplace_back("<");
  const int n_pos = static_cast<int>(draft.tokens.size());
  draft.tokens.push_back(sample_numeral("pv", rng));
  draft.spans.push_back({p_pos, p_pos, EntityKind::Targ, {group}});
  draft.spans.push_back({n_pos, n_pos, EntityKind::Num, {group}});
}

// "( 95% ci , 31 - 78 )" — both range numerals point at "<pct> ci" as
// their metric; the percent numeral itself keeps no relations
void append_ci_range_block(SentenceDraft& draft, Rng& rng, int group) {
  draft.tokens.emplace_back("(");
  const int pct_pos = static_cast<int>(draft.tokens.size());
  draft.tokens.push_back(sample_numeral("pct", rng));
  draft.tokens.emplace_back("ci");
  draft.tokens.emplace_back(",");
  int lo = static_cast<int>(10 + rng.below(90));
  int hi = static_cast<int>(10 + rng.below(90));
  if (lo > hi) std::swap(lo, hi);
  const int a_pos = static_cast<int>(draft.tokens.size());
  draft.tokens.push_back(std::to_string(lo));
  draft.tokens.emplace_back("-");
  const int b_pos = static_cast<int>(draft.tokens.size());
  draft.tokens.push_back(std::to_string(hi));
  draft.tokens.emplace_back(")");

  draft.spans.push_back({pct_pos, pct_pos, EntityKind::Num, {}});
  draft.spans.push_back({pct_pos, pct_pos + 1, EntityKind::Targ, {group, group + 1}});
  draft.spans.push_back({a_pos, a_pos, EntityKind::Num, {group}});
  draft.spans.push_back({b_pos, b_pos, EntityKind::Num, {group + 1}});
}

AnnotatedDoc materialize(SentenceDraft draft, const std::string& doc_id, int& entity_counter,
                         int& relation_counter) {
  // percent numerals become exact decimals; positions are unchanged
  for (auto& tok : draft.tokens)
    if (is_percent_numeral(tok)) tok = decimal_div100(std::string_view(tok).substr(0, tok.size() - 1));

  AnnotatedDoc doc;
  doc.doc_id = doc_id;
  std::size_t cp = 0;
  for (std::size_t i = 0; i < draft.tokens.size(); ++i) {
    if (i > 0) {
      doc.text += ' ';
      ++cp;
    }
    const std::size_t len = draft.tokens[i].size();  // pool words and numerals are ASCII
    doc.tokens.push_back(Token{draft.tokens[i], cp, cp + len});
    doc.text += draft.tokens[i];
    cp += len;
  }

  std::sort(draft.spans.begin(), draft.spans.end(),
            [](const auto& a, const auto& b) { return a.word_start < b.word_start; });

  struct GroupEnds {
    std::string num_id, unit_id, metric_id;
  };
  std::map<int, GroupEnds> groups;

  for (const auto& span : draft.spans) {
    Entity e;
    e.id = "T" + std::to_string(++entity_counter);
    e.kind = span.kind;
    e.word_start = span.word_start;
    e.word_end = span.word_end;
    e.char_start = doc.tokens[static_cast<std::size_t>(span.word_start)].char_start;
    e.char_end = doc.tokens[static_cast<std::size_t>(span.word_end)].char_end;
    e.surface = utf8::slice(doc.text, e.char_start, e.char_end);
    for (int g : span.groups) {
      auto& ends = groups[g];
      if (span.kind == EntityKind::Num) ends.num_id = e.id;
      if (span.kind == EntityKind::Unit) ends.unit_id = e.id;
      if (span.kind == EntityKind::Targ) ends.metric_id = e.id;
    }
    doc.entities.push_back(std::move(e));
  }

  for (const auto& [g, ends] : groups) {
    if (ends.num_id.empty()) continue;
    if (!ends.unit_id.empty())
      doc.relations.push_back(RelationAnn{"R" + std::to_string(++relation_counter),
                                          RelationKind::HasUnit, ends.num_id, ends.unit_id});
    if (!ends.metric_id.empty())
      doc.relations.push_back(RelationAnn{"R" + std::to_string(++relation_counter),
                                          RelationKind::HasMetric, ends.num_id, ends.metric_id});
  }
  return doc;
}

const TemplateSpec& pick_weighted(const TemplateSpec* specs, std::size_t n, Rng& rng) {
  int total = 0;
  for (std::size_t i = 0; i < n; ++i) total += specs[i].weight;
  int draw = static_cast<int>(rng.below(static_cast<std::uint64_t>(total)));
  for (std::size_t i = 0; i < n; ++i) {
    draw -= specs[i].weight;
    if (draw < 0) return specs[i];
  }
  return specs[n - 1];
}

}  // namespace

std::vector<AnnotatedDoc> generate_corpus(const SynthOptions& options) {
  if (options.n_sentences < 1) throw Error("n_sentences must be >= 1");

  std::vector<AnnotatedDoc> docs;
  docs.reserve(options.n_sentences);
  int entity_counter = 0;
  int relation_counter = 0;

  for (std::size_t i = 0; i < options.n_sentences; ++i) {
    Rng rng(mix_seed(options.seed, 0xc0de + i));
    // spread the exact no-entity quota evenly across the corpus
    const auto quota_before =
        static_cast<std::size_t>(options.no_entity_fraction * static_cast<double>(i));
    const auto quota_after =
        static_cast<std::size_t>(options.no_entity_fraction * static_cast<double>(i + 1));
    const bool no_entity = quota_after > quota_before;

    SentenceDraft draft;
    if (rng.bernoulli(options.opener_fraction))
      append_tokens(draft, opener_pool()[rng.below(opener_pool().size())]);

    if (no_entity) {
      const auto& tmpl = pick_weighted(kNoEntityTemplates, std::size(kNoEntityTemplates), rng);
      expand_template(draft, tmpl, false, rng);
    } else {
      const auto& tmpl = pick_weighted(kMainTemplates, std::size(kMainTemplates), rng);
      const bool masked = std::string_view(tmpl.name) == "nested" &&
                          rng.bernoulli(options.masked_variant_fraction);
      expand_template(draft, tmpl, masked, rng);

      if (options.max_distractor_blocks > 0) {
        const int blocks =
            static_cast<int>(rng.below(static_cast<std::uint64_t>(options.max_distractor_blocks) + 1));
        int block_group = 8;  // template groups stay below this
        for (int b = 0; b < blocks; ++b) {
          if (rng.bernoulli(options.p_value_block_share))
            append_p_value_block(draft, rng, block_group);
          else
            append_ci_range_block(draft, rng, block_group);
          block_group += 2;
        }
      }
    }
    draft.tokens.emplace_back(".");

    docs.push_back(materialize(std::move(draft), "synth#" + std::to_string(i), entity_counter,
                               relation_counter));
  }
  return docs;
}

CorpusStats corpus_stats(const std::vector<AnnotatedDoc>& docs) {
  CorpusStats stats;
  stats.sentences = docs.size();
  stats.range_length_histogram.assign(11, 0);  // 10 buckets of 5 plus overflow

  for (const auto& doc : docs) {
    if (doc.relations.empty()) ++stats.no_relation_sentences;
    for (const auto& seq : make_instances(doc)) {
      ++stats.instances;
      const auto [lo, hi] = seq.meta.effective_range;
      const int len = hi - lo + 1;
      const std::size_t bucket = std::min<std::size_t>(static_cast<std::size_t>((len - 1) / 5), 10);
      ++stats.range_length_histogram[bucket];

      // distances from the target span to its farthest labeled token
      const int target_start = seq.meta.target_word_pos;
      const int target_end =
          target_start + static_cast<int>(expand_numeral(seq.meta.target_numeral_value).size()) - 1;
      for (int t = 0; t < static_cast<int>(seq.labels.size()); ++t) {
        if (seq.labels[static_cast<std::size_t>(t)] == kLabelNone) continue;
        if (t < target_start)
          stats.farthest_before = std::max(stats.farthest_before, target_start - t);
        if (t > target_end) stats.farthest_after = std::max(stats.farthest_after, t - target_end);
      }
      try {
        const TrainingInstance inst = truncate_and_pad(seq);
        const std::size_t windowed =
            static_cast<std::size_t>(inst.meta.window.second - inst.meta.window.first + 1);
        stats.max_windowed_length = std::max(stats.max_windowed_length, windowed);
      } catch (const OversizeInstance&) {
        stats.max_windowed_length = std::max<std::size_t>(stats.max_windowed_length, 51);
      }
    }
  }
  return stats;
}

std::string to_json(const CorpusStats& stats) {
  nlohmann::ordered_json j;
  j["sentences"] = stats.sentences;
  j["instances"] = stats.instances;
  j["no_relation_sentences"] = stats.no_relation_sentences;
  j["range_length_histogram"] = stats.range_length_histogram;
  j["farthest_before"] = stats.farthest_before;
  j["farthest_after"] = stats.farthest_after;
  j["max_windowed_length"] = stats.max_windowed_length;
  return j.dump(2);
}

void write_corpus(const std::vector<AnnotatedDoc>& docs, const std::filesystem::path& dir,
                  const std::string& basename) {
  std::filesystem::create_directories(dir);
  write_standoff_file(docs, dir / (basename + ".txt"), dir / (basename + ".ann"));
}

}  // namespace numex
