#include "cmr/segmenter.hpp"

#include <fstream>
#include <istream>

#include "cmr/error.hpp"
#include "cmr/text.hpp"

namespace cmr {

namespace {

bool starts_list_item(std::string_view line) {
  line = text::trim(line);
  if (line.size() < 2) return false;
  // "- x", "* x", "• x"
  if ((line[0] == '-' || line[0] == '*') && text::is_space(line[1])) return true;
  if (line.starts_with("•")) return line.size() > 3 && text::is_space(line[3]);
  // "1. x", "12) x", "a) x"
  std::size_t i = 0;
  while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
  if (i == 0 && line[0] >= 'a' && line[0] <= 'z') i = 1;
  if (i == 0 || i + 1 >= line.size()) return false;
  const bool numeric = line[0] >= '0' && line[0] <= '9';
  const char punct = line[i];
  if (!(punct == ')' || (numeric && punct == '.'))) return false;
  return text::is_space(line[i + 1]);
}

bool ends_block(std::string_view line) {
  line = text::trim(line);
  if (line.empty()) return true;
  const char c = line.back();
  return c == ':' || c == '.' || c == '!' || c == '?' || c == ';';
}

// Rule 1: group physical lines into blocks.
std::vector<std::string> split_blocks(std::string_view body) {
  std::vector<std::string> blocks;
  std::string current;
  bool break_pending = false;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    std::size_t nl = body.find('\n', pos);
    if (nl == std::string_view::npos) nl = body.size();
    const std::string_view line = body.substr(pos, nl - pos);
    pos = nl + 1;
    if (text::trim(line).empty()) {
      break_pending = true;
      continue;
    }
    if (!current.empty() && (break_pending || starts_list_item(line))) {
      blocks.push_back(text::collapse_whitespace(current));
      current.clear();
    }
    if (!current.empty()) current += ' ';
    current += line;
    break_pending = ends_block(line);
  }
  if (!text::trim(current).empty()) blocks.push_back(text::collapse_whitespace(current));
  return blocks;
}

// Rule 2 on a whitespace-collapsed block.
std::vector<std::string_view> split_sentences(std::string_view block) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  // A "1. " list prefix is not a sentence end.
  const std::size_t first = starts_list_item(block) ? block.find(' ') + 1 : 0;
  for (std::size_t i = first; i + 1 < block.size(); ++i) {
    const char c = block[i];
    if ((c == '.' || c == '!' || c == '?') && block[i + 1] == ' ') {
      out.push_back(block.substr(start, i + 1 - start));
      start = i + 2;
    }
  }
  if (start < block.size()) out.push_back(block.substr(start));
  return out;
}

}  // namespace

MarkerLexicon MarkerLexicon::builtin() {
  return {"1", {"if", "unless", "when", "while", "and", "or", "but", "because", "although"}};
}

MarkerLexicon MarkerLexicon::parse(std::istream& in) {
  MarkerLexicon lex;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view l = text::trim(line);
    if (l.empty()) continue;
    if (l.front() == '#') {
      l.remove_prefix(1);
      l = text::trim(l);
      if (l.starts_with("version:")) lex.version = std::string(text::trim(l.substr(8)));
      continue;
    }
    lex.markers.push_back(text::collapse_whitespace(text::to_lower(l)));
  }
  if (lex.markers.empty()) throw ValidationError("marker lexicon is empty");
  return lex;
}

MarkerLexicon MarkerLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return parse(in);
}

RuleSegmenter::RuleSegmenter(MarkerLexicon lexicon) : lexicon_(std::move(lexicon)) {}

bool RuleSegmenter::marker_at(std::string_view s, std::size_t pos) const {
  for (const auto& m : lexicon_.markers) {
    if (pos + m.size() > s.size()) continue;
    if (!text::iequals(s.substr(pos, m.size()), m)) continue;
    const std::size_t end = pos + m.size();
    if (end == s.size() || !text::is_word_char(s[end])) return true;
  }
  return false;
}

// Rule 3.
void RuleSegmenter::split_clauses(std::string_view sentence, std::vector<std::string>& out) const {
  std::size_t start = 0;
  for (std::size_t i = 0; i + 2 < sentence.size(); ++i) {
    if ((sentence[i] == ',' || sentence[i] == ';') && sentence[i + 1] == ' ' && marker_at(sentence, i + 2)) {
      out.emplace_back(sentence.substr(start, i + 1 - start));
      start = i + 2;
    }
  }
  if (start < sentence.size()) out.emplace_back(sentence.substr(start));
}

std::vector<std::string> RuleSegmenter::split(std::string_view body) const {
  std::vector<std::string> units;
  for (const auto& block : split_blocks(body)) {
    for (auto sentence : split_sentences(block)) split_clauses(sentence, units);
  }
  std::erase_if(units, [](const std::string& u) { return u.empty(); });
  return units;
}

SegmentedRule RuleSegmenter::segment(const RuleText& rule) const {
  SegmentedRule out{rule.id, {}};
  for (auto& unit : split(rule.body)) out.edus.push_back({std::move(unit), out.edus.size()});
  if (out.edus.empty()) throw ValidationError("rule '" + rule.id + "' has an empty body");
  return out;
}

std::vector<SegmentedRule> segment_all(const Segmenter& segmenter, const KnowledgeBase& kb) {
  std::vector<SegmentedRule> out;
  out.reserve(kb.count());
  for (const auto& r : kb.rules()) out.push_back(segmenter.segment(r));
  return out;
}

}  // namespace cmr
