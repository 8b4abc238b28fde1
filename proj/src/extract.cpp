#include "numex/extract.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "numex/decimal.hpp"
#include "numex/errors.hpp"

namespace numex {

namespace {

std::string join_tokens(const std::vector<std::string>& tokens, int begin, int end) {
  std::string out;
  for (int i = begin; i <= end; ++i) {
    if (i > begin) out += ' ';
    out += tokens[static_cast<std::size_t>(i)];
  }
  return out;
}

// Spans decoded from one tagging pass, in the coordinates of the token
// list the pass ran on.
struct PassResult {
  std::vector<ExtractedSpan> units;
  std::vector<ExtractedSpan> metrics;
};

// Tags one target inside an already-masked token list: expands the target
// to characters, windows around it, runs the model, and maps the decoded
// spans back to the token-list coordinates.
template <class S>
PassResult run_pass(const TaggerModel<S>& model, const Vocabulary& vocab,
                    const std::vector<std::string>& view_tokens, int target_pos,
                    const ExtractOptions& options) {
  const std::vector<std::string> chars =
      expand_numeral(view_tokens[static_cast<std::size_t>(target_pos)]);
  const int k = static_cast<int>(chars.size());
  if (k > options.max_len)
    throw OversizeInstance("numeral '" + view_tokens[static_cast<std::size_t>(target_pos)] +
                           "' expands past the window cap");

  std::vector<std::string> expanded;
  expanded.reserve(view_tokens.size() + static_cast<std::size_t>(k) - 1);
  expanded.insert(expanded.end(), view_tokens.begin(), view_tokens.begin() + target_pos);
  expanded.insert(expanded.end(), chars.begin(), chars.end());
  expanded.insert(expanded.end(), view_tokens.begin() + target_pos + 1, view_tokens.end());
  const int length = static_cast<int>(expanded.size());

  int win_lo = 0, win_hi = -1;
  for (int w = options.window_halfwidth; w >= 0; --w) {
    win_lo = std::max(0, target_pos - w);
    win_hi = std::min(length - 1, target_pos + k - 1 + w);
    if (win_hi - win_lo + 1 <= options.max_len) break;
  }

  std::vector<std::string> window(expanded.begin() + win_lo, expanded.begin() + win_hi + 1);
  const int window_len = static_cast<int>(window.size());
  window.resize(static_cast<std::size_t>(options.max_len), std::string(kPadToken));

  const Eigen::MatrixXd probs = infer(model, encode(window, vocab));

  TagSequence tags;
  tags.labels.resize(static_cast<std::size_t>(window_len));
  for (int t = 0; t < window_len; ++t) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (probs(t, c) > probs(t, best)) best = c;
    tags.labels[static_cast<std::size_t>(t)] = best;
  }
  window.resize(static_cast<std::size_t>(window_len));
  const DecodedSpans decoded = decode_labels(tags, window);

  // expanded coordinate -> view coordinate (the expansion block collapses
  // back onto the target position)
  const auto to_view = [&](int pe) {
    if (pe < target_pos) return pe;
    if (pe < target_pos + k) return target_pos;
    return pe - k + 1;
  };
  const auto map_spans = [&](const std::vector<ExtractedSpan>& in) {
    std::vector<ExtractedSpan> out;
    for (const auto& s : in) {
      const int lo = to_view(win_lo + s.word_start);
      const int hi = to_view(win_lo + s.word_end);
      if (!out.empty() && lo <= out.back().word_end) {
        out.back().word_end = std::max(out.back().word_end, hi);  // merge across the target
      } else {
        out.push_back(ExtractedSpan{lo, hi, 0, 0, {}});
      }
    }
    for (auto& s : out) s.text = join_tokens(view_tokens, s.word_start, s.word_end);
    return out;
  };

  PassResult result;
  result.units = map_spans(decoded.units);
  result.metrics = map_spans(decoded.metrics);
  return result;
}

// view with every numeral except the target masked as [num]
std::vector<std::string> masked_view(const TokenizedSentence& sentence, std::size_t target_pos) {
  std::vector<std::string> view;
  view.reserve(sentence.tokens.size());
  for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
    const std::string& surface = sentence.tokens[i].surface;
    view.push_back(i != target_pos && is_plain_numeral(surface) ? std::string(kNumToken)
                                                                : surface);
  }
  return view;
}

void fill_char_offsets(std::vector<ExtractedSpan>& spans, const TokenizedSentence& sentence) {
  for (auto& s : spans) {
    s.char_start = sentence.tokens[static_cast<std::size_t>(s.word_start)].char_start;
    s.char_end = sentence.tokens[static_cast<std::size_t>(s.word_end)].char_end;
  }
}

bool all_mask_tokens(const ExtractedSpan& span, const std::vector<std::string>& view,
                     std::string_view mask) {
  for (int i = span.word_start; i <= span.word_end; ++i)
    if (view[static_cast<std::size_t>(i)] != mask) return false;
  return true;
}

}  // namespace

DecodedSpans decode_labels(const TagSequence& tags, const std::vector<std::string>& window_tokens) {
  DecodedSpans out;
  const int n = static_cast<int>(std::min(tags.labels.size(), window_tokens.size()));
  int i = 0;
  while (i < n) {
    const int label = tags.labels[static_cast<std::size_t>(i)];
    if (label == kLabelNone) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 < n && tags.labels[static_cast<std::size_t>(j) + 1] == label) ++j;
    ExtractedSpan span{i, j, 0, 0, join_tokens(window_tokens, i, j)};
    (label == kLabelUnit ? out.units : out.metrics).push_back(std::move(span));
    i = j + 1;
  }
  return out;
}

template <class S>
std::vector<ExtractionRecord> extract_sentence(const TaggerModel<S>& model,
                                               const Vocabulary& vocab,
                                               const TokenizedSentence& sentence,
                                               std::string_view doc_id,
                                               const ExtractOptions& options) {
  std::vector<ExtractionRecord> records;
  for (std::size_t pos : sentence.numeral_positions) {
    const std::vector<std::string> view = masked_view(sentence, pos);
    PassResult pass = run_pass(model, vocab, view, static_cast<int>(pos), options);

    ExtractionRecord rec;
    rec.doc_id = std::string(doc_id);
    rec.numeral_value = sentence.tokens[pos].surface;
    rec.numeral_word_pos = static_cast<int>(pos);
    rec.unit_spans = std::move(pass.units);
    rec.metric_spans = std::move(pass.metrics);
    fill_char_offsets(rec.unit_spans, sentence);
    fill_char_offsets(rec.metric_spans, sentence);
    records.push_back(std::move(rec));
  }
  return records;
}

template <class S>
std::vector<ExtractionRecord> extract_hierarchical(const TaggerModel<S>& model,
                                                   const Vocabulary& vocab,
                                                   const TokenizedSentence& sentence,
                                                   std::string_view doc_id,
                                                   const ExtractOptions& options) {
  std::vector<ExtractionRecord> records = extract_sentence(model, vocab, sentence, doc_id, options);
  const std::string mask(options.mask_mode == HierMaskMode::Oov ? kOovToken : kNumToken);

  for (ExtractionRecord& rec : records) {
    std::vector<std::string> view = masked_view(sentence, static_cast<std::size_t>(rec.numeral_word_pos));
    int target = rec.numeral_word_pos;
    std::vector<ExtractedSpan> found = rec.metric_spans;
    std::set<std::string> seen;
    for (const auto& s : found) seen.insert(s.text);

    for (int depth = 1; depth < options.max_depth && !found.empty(); ++depth) {
      // collapse each found span to one mask token, right to left
      std::sort(found.begin(), found.end(),
                [](const ExtractedSpan& a, const ExtractedSpan& b) { return a.word_start > b.word_start; });
      bool masked_any = false;
      for (const auto& s : found) {
        if (s.word_start <= target && target <= s.word_end) continue;  // never mask the target
        view.erase(view.begin() + s.word_start, view.begin() + s.word_end + 1);
        view.insert(view.begin() + s.word_start, mask);
        if (s.word_end < target) target -= s.word_end - s.word_start;
        masked_any = true;
      }
      if (!masked_any) break;

      PassResult pass = run_pass(model, vocab, view, target, options);
      std::vector<ExtractedSpan> fresh;
      for (auto& s : pass.metrics) {
        if (all_mask_tokens(s, view, mask)) continue;  // re-tagged a mask placeholder
        if (!seen.insert(s.text).second) {
          fresh.clear();  // a repeat ends the recursion
          break;
        }
        fresh.push_back(std::move(s));
      }
      if (fresh.empty()) break;
      for (const auto& s : fresh) rec.outer_metrics.push_back(s.text);
      found = std::move(fresh);
    }
  }
  return records;
}

namespace {

nlohmann::ordered_json span_to_json(const ExtractedSpan& s) {
  return {{"start", s.word_start},
          {"end", s.word_end},
          {"char_start", s.char_start},
          {"char_end", s.char_end},
          {"text", s.text}};
}

ExtractedSpan span_from_json(const nlohmann::json& j) {
  ExtractedSpan s;
  j.at("start").get_to(s.word_start);
  j.at("end").get_to(s.word_end);
  j.at("char_start").get_to(s.char_start);
  j.at("char_end").get_to(s.char_end);
  j.at("text").get_to(s.text);
  return s;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string records_to_jsonl(const std::vector<ExtractionRecord>& records) {
  std::ostringstream os;
  for (const auto& rec : records) {
    nlohmann::ordered_json j;
    j["doc_id"] = rec.doc_id;
    j["numeral"] = rec.numeral_value;
    j["numeral_pos"] = rec.numeral_word_pos;
    j["units"] = nlohmann::ordered_json::array();
    for (const auto& s : rec.unit_spans) j["units"].push_back(span_to_json(s));
    j["metrics"] = nlohmann::ordered_json::array();
    for (const auto& s : rec.metric_spans) j["metrics"].push_back(span_to_json(s));
    j["outer_metrics"] = rec.outer_metrics;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::vector<ExtractionRecord> records_from_jsonl(std::string_view text) {
  std::vector<ExtractionRecord> records;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    ExtractionRecord rec;
    j.at("doc_id").get_to(rec.doc_id);
    j.at("numeral").get_to(rec.numeral_value);
    j.at("numeral_pos").get_to(rec.numeral_word_pos);
    for (const auto& s : j.at("units")) rec.unit_spans.push_back(span_from_json(s));
    for (const auto& s : j.at("metrics")) rec.metric_spans.push_back(span_from_json(s));
    j.at("outer_metrics").get_to(rec.outer_metrics);
    records.push_back(std::move(rec));
  }
  return records;
}

std::string records_to_csv(const std::vector<ExtractionRecord>& records) {
  std::ostringstream os;
  os << "doc_id,numeral,numeral_pos,units,metrics,outer_metrics\n";
  const auto join_spans = [](const std::vector<ExtractedSpan>& spans) {
    std::string out;
    for (std::size_t i = 0; i < spans.size(); ++i) {
      if (i > 0) out += " | ";
      out += spans[i].text;
    }
    return out;
  };
  for (const auto& rec : records) {
    std::string outer;
    for (std::size_t i = 0; i < rec.outer_metrics.size(); ++i) {
      if (i > 0) outer += " | ";
      outer += rec.outer_metrics[i];
    }
    os << csv_quote(rec.doc_id) << ',' << csv_quote(rec.numeral_value) << ','
       << rec.numeral_word_pos << ',' << csv_quote(join_spans(rec.unit_spans)) << ','
       << csv_quote(join_spans(rec.metric_spans)) << ',' << csv_quote(outer) << '\n';
  }
  return os.str();
}

template std::vector<ExtractionRecord> extract_sentence(const TaggerModel<float>&,
                                                        const Vocabulary&,
                                                        const TokenizedSentence&,
                                                        std::string_view, const ExtractOptions&);
template std::vector<ExtractionRecord> extract_sentence(const TaggerModel<double>&,
                                                        const Vocabulary&,
                                                        const TokenizedSentence&,
                                                        std::string_view, const ExtractOptions&);
template std::vector<ExtractionRecord> extract_hierarchical(const TaggerModel<float>&,
                                                            const Vocabulary&,
                                                            const TokenizedSentence&,
                                                            std::string_view,
                                                            const ExtractOptions&);
template std::vector<ExtractionRecord> extract_hierarchical(const TaggerModel<double>&,
                                                            const Vocabulary&,
                                                            const TokenizedSentence&,
                                                            std::string_view,
                                                            const ExtractOptions&);

}  // namespace numex
