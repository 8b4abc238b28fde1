#include "numex/annotation.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "numex/errors.hpp"
#include "numex/utf8.hpp"

namespace numex {

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

bool parse_size(std::string_view s, std::size_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

EntityKind entity_kind_from(std::string_view s, std::string_view line) {
  if (s == "Num") return EntityKind::Num;
  if (s == "Unit") return EntityKind::Unit;
  if (s == "Targ") return EntityKind::Targ;
  throw MalformedLine("unknown entity kind '" + std::string(s) + "' in: " + std::string(line));
}

RelationKind relation_kind_from(std::string_view s, std::string_view line) {
  if (s == "has_unit") return RelationKind::HasUnit;
  if (s == "has_metric") return RelationKind::HasMetric;
  throw MalformedLine("unknown relation kind '" + std::string(s) + "' in: " + std::string(line));
}

}  // namespace

std::string_view to_string(EntityKind k) {
  switch (k) {
    case EntityKind::Num: return "Num";
    case EntityKind::Unit: return "Unit";
    case EntityKind::Targ: return "Targ";
  }
  return "?";
}

std::string_view to_string(RelationKind k) {
  switch (k) {
    case RelationKind::HasUnit: return "has_unit";
    case RelationKind::HasMetric: return "has_metric";
  }
  return "?";
}

std::string_view to_string(ViolationRule r) {
  switch (r) {
    case ViolationRule::TokenOverlap: return "TokenOverlap";
    case ViolationRule::MisalignedEntity: return "MisalignedEntity";
    case ViolationRule::SurfaceMismatch: return "SurfaceMismatch";
    case ViolationRule::DanglingRelation: return "DanglingRelation";
    case ViolationRule::BadRelationSource: return "BadRelationSource";
    case ViolationRule::BadRelationTarget: return "BadRelationTarget";
    case ViolationRule::TooManyUnits: return "TooManyUnits";
    case ViolationRule::TooManyMetrics: return "TooManyMetrics";
  }
  return "?";
}

const Entity* AnnotatedDoc::find_entity(std::string_view id) const {
  for (const auto& e : entities)
    if (e.id == id) return &e;
  return nullptr;
}

std::vector<Token> split_tokens(std::string_view text) {
  std::vector<Token> tokens;
  const auto bounds = utf8::boundaries(text);
  const std::size_t n = bounds.size() - 1;
  std::size_t start = 0;
  bool in_token = false;
  for (std::size_t cp = 0; cp <= n; ++cp) {
    const bool is_space =
        cp < n && bounds[cp + 1] - bounds[cp] == 1 && std::isspace(static_cast<unsigned char>(text[bounds[cp]]));
    if (cp == n || is_space) {
      if (in_token) {
        tokens.push_back(Token{std::string(text.substr(bounds[start], bounds[cp] - bounds[start])),
                               start, cp});
        in_token = false;
      }
    } else if (!in_token) {
      start = cp;
      in_token = true;
    }
  }
  return tokens;
}

AnnotatedDoc parse_standoff(std::string_view doc_id, std::string_view source_text,
                            std::string_view ann_lines) {
  AnnotatedDoc doc;
  doc.doc_id = std::string(doc_id);
  doc.text = std::string(source_text);
  doc.tokens = split_tokens(source_text);

  for (std::string_view line : split_lines(ann_lines)) {
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    if (line.front() == 'T') {
      // Tn<TAB>Kind start end<TAB>surface
      if (fields.size() != 3) throw MalformedLine("expected 3 tab fields in: " + std::string(line));
      const auto head = split_on(fields[1], ' ');
      if (head.size() != 3) throw MalformedLine("expected 'Kind start end' in: " + std::string(line));
      Entity e;
      e.id = std::string(fields[0]);
      e.kind = entity_kind_from(head[0], line);
      if (!parse_size(head[1], e.char_start) || !parse_size(head[2], e.char_end) ||
          e.char_start >= e.char_end)
        throw MalformedLine("bad offsets in: " + std::string(line));
      e.surface = std::string(fields[2]);
      const std::string slice = utf8::slice(source_text, e.char_start, e.char_end);
      if (slice != e.surface)
        throw SurfaceMismatch(e.id + ": surface '" + e.surface + "' != text slice '" + slice + "'");
      doc.entities.push_back(std::move(e));
    } else if (line.front() == 'R') {
      // Rn<TAB>Kind Arg1:Tx Arg2:Ty
      if (fields.size() < 2) throw MalformedLine("expected 2 tab fields in: " + std::string(line));
      const auto head = split_on(fields[1], ' ');
      if (head.size() != 3 || !head[1].starts_with("Arg1:") || !head[2].starts_with("Arg2:"))
        throw MalformedLine("expected 'Kind Arg1:Tx Arg2:Ty' in: " + std::string(line));
      RelationAnn r;
      r.id = std::string(fields[0]);
      r.kind = relation_kind_from(head[0], line);
      r.source = std::string(head[1].substr(5));
      r.target = std::string(head[2].substr(5));
      if (!doc.find_entity(r.source))
        throw DanglingRelation(r.id + ": unknown entity " + r.source);
      if (!doc.find_entity(r.target))
        throw DanglingRelation(r.id + ": unknown entity " + r.target);
      doc.relations.push_back(std::move(r));
    } else {
      throw MalformedLine("unsupported standoff line: " + std::string(line));
    }
  }
  return doc;
}

AnnotatedDoc align_to_words(AnnotatedDoc doc) {
  for (auto& e : doc.entities) {
    std::ptrdiff_t ws = -1, we = -1;
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      if (doc.tokens[i].char_start == e.char_start) ws = static_cast<std::ptrdiff_t>(i);
      if (doc.tokens[i].char_end == e.char_end) we = static_cast<std::ptrdiff_t>(i);
    }
    if (ws < 0 || we < 0 || we < ws)
      throw MisalignedEntity(e.id + ": span [" + std::to_string(e.char_start) + "," +
                             std::to_string(e.char_end) + ") cuts through a token");
    e.word_start = ws;
    e.word_end = we;
  }
  return doc;
}

std::vector<Violation> validate_doc(const AnnotatedDoc& doc) {
  std::vector<Violation> out;
  const auto add = [&](ViolationRule rule, const std::string& id, std::string msg) {
    out.push_back(Violation{rule, id, std::move(msg)});
  };

  for (std::size_t i = 1; i < doc.tokens.size(); ++i) {
    if (doc.tokens[i].char_start < doc.tokens[i - 1].char_end)
      add(ViolationRule::TokenOverlap, doc.doc_id,
          "token " + std::to_string(i) + " overlaps its predecessor");
  }

  for (const auto& e : doc.entities) {
    if (e.word_start < 0 || e.word_end < e.word_start ||
        e.word_end >= static_cast<std::ptrdiff_t>(doc.tokens.size())) {
      add(ViolationRule::MisalignedEntity, e.id, "entity has no aligned word span");
      continue;
    }
    const auto& first = doc.tokens[static_cast<std::size_t>(e.word_start)];
    const auto& last = doc.tokens[static_cast<std::size_t>(e.word_end)];
    if (first.char_start != e.char_start || last.char_end != e.char_end)
      add(ViolationRule::MisalignedEntity, e.id, "word span does not cover the char span");
    if (utf8::slice(doc.text, e.char_start, e.char_end) != e.surface)
      add(ViolationRule::SurfaceMismatch, e.id, "surface differs from text slice");
  }

  std::map<std::string, int> units_per_num, metrics_per_num;
  for (const auto& r : doc.relations) {
    const Entity* src = doc.find_entity(r.source);
    const Entity* tgt = doc.find_entity(r.target);
    if (!src || !tgt) {
      add(ViolationRule::DanglingRelation, r.id, "relation references an unknown entity");
      continue;
    }
    if (src->kind != EntityKind::Num)
      add(ViolationRule::BadRelationSource, r.id, "relation source is not a Num");
    const EntityKind want = r.kind == RelationKind::HasUnit ? EntityKind::Unit : EntityKind::Targ;
    if (tgt->kind != want)
      add(ViolationRule::BadRelationTarget, r.id,
          "target kind does not match " + std::string(to_string(r.kind)));
    auto& n = r.kind == RelationKind::HasUnit ? units_per_num[r.source] : metrics_per_num[r.source];
    if (++n == 2)
      add(r.kind == RelationKind::HasUnit ? ViolationRule::TooManyUnits
                                          : ViolationRule::TooManyMetrics,
          r.source, "numeral has more than one " + std::string(to_string(r.kind)) + " relation");
  }
  return out;
}

std::pair<std::string, std::string> to_standoff(const AnnotatedDoc& doc) {
  std::ostringstream ann;
  for (const auto& e : doc.entities)
    ann << e.id << '\t' << to_string(e.kind) << ' ' << e.char_start << ' ' << e.char_end << '\t'
        << e.surface << '\n';
  for (const auto& r : doc.relations)
    ann << r.id << '\t' << to_string(r.kind) << " Arg1:" << r.source << " Arg2:" << r.target
        << '\n';
  return {doc.text, ann.str()};
}

std::vector<AnnotatedDoc> read_standoff_file(const std::filesystem::path& txt_path,
                                             const std::filesystem::path& ann_path) {
  std::ifstream txt(txt_path, std::ios::binary);
  if (!txt) throw IoError("cannot open " + txt_path.string());
  std::stringstream tbuf;
  tbuf << txt.rdbuf();
  const std::string text = tbuf.str();

  std::ifstream ann(ann_path, std::ios::binary);
  if (!ann) throw IoError("cannot open " + ann_path.string());
  std::stringstream abuf;
  abuf << ann.rdbuf();
  const std::string ann_text = abuf.str();

  // sentence lines with their whole-file scalar-value offsets
  struct Line {
    std::string_view text;
    std::size_t cp_start;
    std::size_t cp_end;
  };
  std::vector<Line> lines;
  std::size_t cp = 0;
  for (std::string_view line : split_lines(text)) {
    const std::size_t len = utf8::length(line);
    lines.push_back(Line{line, cp, cp + len});
    cp += len + 1;  // the newline counts as one scalar value
  }
  while (!lines.empty() && lines.back().text.empty()) lines.pop_back();

  // bucket annotation lines by the sentence containing their span
  std::vector<std::string> per_line_ann(lines.size());
  std::vector<std::string_view> relations;
  std::map<std::string, std::size_t, std::less<>> entity_line;

  for (std::string_view line : split_lines(ann_text)) {
    if (line.empty()) continue;
    if (line.front() == 'R') {
      relations.push_back(line);
      continue;
    }
    if (line.front() != 'T') throw MalformedLine("unsupported standoff line: " + std::string(line));
    const auto fields = split_on(line, '\t');
    if (fields.size() != 3) throw MalformedLine("expected 3 tab fields in: " + std::string(line));
    const auto head = split_on(fields[1], ' ');
    if (head.size() != 3) throw MalformedLine("expected 'Kind start end' in: " + std::string(line));
    std::size_t start = 0, end = 0;
    if (!parse_size(head[1], start) || !parse_size(head[2], end) || start >= end)
      throw MalformedLine("bad offsets in: " + std::string(line));
    std::size_t home = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (start >= lines[i].cp_start && end <= lines[i].cp_end) {
        home = i;
        break;
      }
    }
    if (home == lines.size())
      throw MisalignedEntity(std::string(fields[0]) + ": span crosses a sentence boundary");
    std::ostringstream rebased;
    rebased << fields[0] << '\t' << head[0] << ' ' << (start - lines[home].cp_start) << ' '
            << (end - lines[home].cp_start) << '\t' << fields[2] << '\n';
    per_line_ann[home] += rebased.str();
    entity_line.emplace(std::string(fields[0]), home);
  }

  for (std::string_view line : relations) {
    const auto fields = split_on(line, '\t');
    if (fields.size() < 2) throw MalformedLine("expected 2 tab fields in: " + std::string(line));
    const auto head = split_on(fields[1], ' ');
    if (head.size() != 3 || !head[1].starts_with("Arg1:") || !head[2].starts_with("Arg2:"))
      throw MalformedLine("expected 'Kind Arg1:Tx Arg2:Ty' in: " + std::string(line));
    const auto src = entity_line.find(head[1].substr(5));
    const auto tgt = entity_line.find(head[2].substr(5));
    if (src == entity_line.end() || tgt == entity_line.end())
      throw DanglingRelation(std::string(fields[0]) + ": unknown entity");
    if (src->second != tgt->second)
      throw DanglingRelation(std::string(fields[0]) + ": relation crosses sentences");
    per_line_ann[src->second] += std::string(line) + "\n";
  }

  const std::string stem = txt_path.stem().string();
  std::vector<AnnotatedDoc> docs;
  docs.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    docs.push_back(align_to_words(
        parse_standoff(stem + "#" + std::to_string(i), lines[i].text, per_line_ann[i])));
  }
  return docs;
}

void write_standoff_file(const std::vector<AnnotatedDoc>& docs,
                         const std::filesystem::path& txt_path,
                         const std::filesystem::path& ann_path) {
  std::ofstream txt(txt_path, std::ios::binary);
  std::ofstream ann(ann_path, std::ios::binary);
  if (!txt || !ann) throw IoError("cannot write " + txt_path.string() + " / " + ann_path.string());
  std::size_t cp = 0;
  for (const auto& doc : docs) {
    txt << doc.text << '\n';
    for (const auto& e : doc.entities)
      ann << e.id << '\t' << to_string(e.kind) << ' ' << (cp + e.char_start) << ' '
          << (cp + e.char_end) << '\t' << e.surface << '\n';
    for (const auto& r : doc.relations)
      ann << r.id << '\t' << to_string(r.kind) << " Arg1:" << r.source << " Arg2:" << r.target
          << '\n';
    cp += utf8::length(doc.text) + 1;
  }
}

std::vector<AnnotatedDoc> load_standoff_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> txt_files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      txt_files.push_back(entry.path());
  std::sort(txt_files.begin(), txt_files.end());

  std::vector<AnnotatedDoc> docs;
  for (const auto& txt : txt_files) {
    std::filesystem::path ann = txt;
    ann.replace_extension(".ann");
    if (!std::filesystem::exists(ann)) throw IoError("missing annotation file " + ann.string());
    auto part = read_standoff_file(txt, ann);
    docs.insert(docs.end(), std::make_move_iterator(part.begin()),
                std::make_move_iterator(part.end()));
  }
  return docs;
}

}  // namespace numex
