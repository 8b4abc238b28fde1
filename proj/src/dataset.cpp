#include "numex/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "numex/decimal.hpp"
#include "numex/errors.hpp"
#include "numex/rng.hpp"

namespace numex {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens = [] {
    std::vector<std::string> t{std::string(kPadToken), std::string(kOovToken),
                               std::string(kNumToken)};
    for (char d = '0'; d <= '9'; ++d) t.push_back(std::string(1, d));
    t.push_back(std::string(kNegToken));
    t.push_back(std::string(kDotToken));
    return t;
  }();
  return tokens;
}

}  // namespace

Vocabulary Vocabulary::reserved_only() {
  Vocabulary v;
  for (const auto& tok : reserved_tokens()) {
    v.token_to_index_.emplace(tok, static_cast<int>(v.index_to_token_.size()));
    v.index_to_token_.push_back(tok);
  }
  return v;
}

void Vocabulary::push_corpus_token(std::string token) {
  auto [it, inserted] = token_to_index_.emplace(std::move(token), size());
  if (!inserted) throw Error("duplicate vocabulary token: " + it->first);
  index_to_token_.push_back(it->first);
}

int Vocabulary::lookup(std::string_view token) const {
  auto it = token_to_index_.find(std::string(token));
  return it == token_to_index_.end() ? -1 : it->second;
}

int Vocabulary::index_of(std::string_view token) const {
  const int idx = lookup(token);
  return idx < 0 ? kOovIndex : idx;
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto feed = [&h](char c) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  };
  for (const auto& tok : index_to_token_) {
    for (char c : tok) feed(c);
    feed('\n');
  }
  return h;
}

Vocabulary build_vocab(const std::vector<AnnotatedDoc>& docs) {
  if (docs.empty()) throw EmptyCorpus("no documents to build a vocabulary from");

  Vocabulary vocab = Vocabulary::reserved_only();
  // ordered map gives the deterministic lexicographic tie-break for free
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : docs) {
    for (const auto& tok : doc.tokens) {
      if (is_plain_numeral(tok.surface)) continue;
      if (vocab.contains(tok.surface)) continue;  // spelled like a reserved entry
      ++counts[tok.surface];
    }
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [tok, count] : ranked) vocab.push_corpus_token(std::move(tok));
  return vocab;
}

std::vector<std::string> expand_numeral(std::string_view value_text) {
  if (!is_plain_numeral(value_text))
    throw NotANumeral("'" + std::string(value_text) + "' is not a decimal string");
  std::vector<std::string> out;
  out.reserve(value_text.size());
  for (char c : value_text) {
    if (c == '-')
      out.emplace_back(kNegToken);
    else if (c == '.')
      out.emplace_back(kDotToken);
    else if (c == '+')
      continue;  // '+' carries no magnitude information
    else
      out.emplace_back(1, c);
  }
  return out;
}

std::vector<LabeledSequence> make_instances(const AnnotatedDoc& doc) {
  std::vector<LabeledSequence> out;

  for (const auto& target : doc.entities) {
    if (target.kind != EntityKind::Num) continue;
    if (target.word_start < 0 || target.word_start != target.word_end)
      throw NotANumeral("Num entity " + target.id + " does not cover exactly one token");
    const int pos = static_cast<int>(target.word_start);

    const int n = static_cast<int>(doc.tokens.size());
    std::vector<std::string> tokens(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n), kLabelNone);

    for (int i = 0; i < n; ++i) {
      const std::string& surface = doc.tokens[static_cast<std::size_t>(i)].surface;
      tokens[static_cast<std::size_t>(i)] =
          (i != pos && is_plain_numeral(surface)) ? std::string(kNumToken) : surface;
    }

    for (const auto& rel : doc.relations) {
      if (rel.source != target.id) continue;
      const Entity* e = doc.find_entity(rel.target);
      if (!e || e->word_start < 0) continue;
      const int label = rel.kind == RelationKind::HasUnit ? kLabelUnit : kLabelMetric;
      for (std::ptrdiff_t i = e->word_start; i <= e->word_end; ++i)
        labels[static_cast<std::size_t>(i)] = label;
    }

    // expand the target in place; the characters themselves stay label 0
    const std::vector<std::string> chars = expand_numeral(target.surface);
    const int k = static_cast<int>(chars.size());
    tokens.erase(tokens.begin() + pos);
    tokens.insert(tokens.begin() + pos, chars.begin(), chars.end());
    labels.erase(labels.begin() + pos);
    labels.insert(labels.begin() + pos, static_cast<std::size_t>(k), kLabelNone);

    LabeledSequence seq;
    seq.tokens = std::move(tokens);
    seq.labels = std::move(labels);
    seq.meta.doc_id = doc.doc_id;
    seq.meta.target_numeral_value = target.surface;
    seq.meta.target_word_pos = pos;
    seq.meta.effective_range = effective_range(seq.labels, {pos, pos + k - 1});
    out.push_back(std::move(seq));
  }
  return out;
}

std::pair<int, int> effective_range(const std::vector<int>& labels,
                                    std::pair<int, int> target_span) {
  int lo = target_span.first;
  int hi = target_span.second;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    if (labels[static_cast<std::size_t>(i)] == kLabelNone) continue;
    lo = std::min(lo, i);
    hi = std::max(hi, i);
  }
  return {lo, hi};
}

TrainingInstance truncate_and_pad(const LabeledSequence& seq, int margin, int max_len) {
  const int n = static_cast<int>(seq.tokens.size());
  const auto [lo, hi] = seq.meta.effective_range;

  int win_lo = 0, win_hi = -1;
  bool fits = false;
  for (int m = margin; m >= 0; --m) {
    win_lo = std::max(0, lo - m);
    win_hi = std::min(n - 1, hi + m);
    if (win_hi - win_lo + 1 <= max_len) {
      fits = true;
      break;
    }
  }
  if (!fits)
    throw OversizeInstance("effective range of " + seq.meta.doc_id + " spans " +
                           std::to_string(hi - lo + 1) + " tokens, over the cap of " +
                           std::to_string(max_len));

  TrainingInstance inst;
  inst.meta = seq.meta;
  inst.meta.window = {win_lo, win_hi};
  inst.tokens.assign(seq.tokens.begin() + win_lo, seq.tokens.begin() + win_hi + 1);
  inst.labels.assign(seq.labels.begin() + win_lo, seq.labels.begin() + win_hi + 1);
  inst.tokens.resize(static_cast<std::size_t>(max_len), std::string(kPadToken));
  inst.labels.resize(static_cast<std::size_t>(max_len), kLabelNone);
  return inst;
}

DatasetSplit split_dataset(std::vector<TrainingInstance> instances, double ratio,
                           std::uint64_t seed) {
  if (instances.size() < 2)
    throw TooFewInstances("need at least 2 instances to split, got " +
                          std::to_string(instances.size()));
  Rng rng(mix_seed(seed, 0x5117));
  rng.shuffle(instances);

  const auto n_train =
      static_cast<std::size_t>(ratio * static_cast<double>(instances.size()));
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(std::make_move_iterator(instances.begin()),
                     std::make_move_iterator(instances.begin() + static_cast<std::ptrdiff_t>(n_train)));
  split.test.assign(std::make_move_iterator(instances.begin() + static_cast<std::ptrdiff_t>(n_train)),
                    std::make_move_iterator(instances.end()));
  return split;
}

std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) out.push_back(vocab.index_of(tok));
  return out;
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& tok : vocab.tokens()) f << tok << '\n';
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  Vocabulary vocab = Vocabulary::reserved_only();
  std::string line;
  int index = 0;
  while (std::getline(f, line)) {
    if (index < vocab.size()) {
      if (line != vocab.token_at(index))
        throw IoError(path.string() + ": reserved token mismatch at line " + std::to_string(index));
    } else {
      vocab.push_corpus_token(line);
    }
    ++index;
  }
  if (index < vocab.size()) throw IoError(path.string() + ": truncated vocabulary");
  return vocab;
}

namespace {

nlohmann::ordered_json instance_to_json(const TrainingInstance& inst) {
  nlohmann::ordered_json j;
  j["tokens"] = inst.tokens;
  j["indices"] = inst.indices;
  j["labels"] = inst.labels;
  j["meta"] = {{"doc_id", inst.meta.doc_id},
               {"target_numeral_value", inst.meta.target_numeral_value},
               {"target_word_pos", inst.meta.target_word_pos},
               {"effective_range", {inst.meta.effective_range.first, inst.meta.effective_range.second}},
               {"window", {inst.meta.window.first, inst.meta.window.second}}};
  return j;
}

TrainingInstance instance_from_json(const nlohmann::json& j) {
  TrainingInstance inst;
  j.at("tokens").get_to(inst.tokens);
  j.at("indices").get_to(inst.indices);
  j.at("labels").get_to(inst.labels);
  const auto& m = j.at("meta");
  m.at("doc_id").get_to(inst.meta.doc_id);
  m.at("target_numeral_value").get_to(inst.meta.target_numeral_value);
  m.at("target_word_pos").get_to(inst.meta.target_word_pos);
  inst.meta.effective_range = {m.at("effective_range").at(0).get<int>(),
                               m.at("effective_range").at(1).get<int>()};
  inst.meta.window = {m.at("window").at(0).get<int>(), m.at("window").at(1).get<int>()};
  return inst;
}

}  // namespace

void write_instances_jsonl(const std::vector<TrainingInstance>& instances,
                           const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& inst : instances) f << instance_to_json(inst).dump() << '\n';
}

std::vector<TrainingInstance> read_instances_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<TrainingInstance> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(instance_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace numex
