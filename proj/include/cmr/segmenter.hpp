#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cmr/corpus.hpp"

namespace cmr {

struct Edu {
  std::string text;
  std::size_t index = 0;

  bool operator==(const Edu&) const = default;
};

struct SegmentedRule {
  std::string rule_id;
  std::vector<Edu> edus;

  std::size_t size() const { return edus.size(); }
};

// Splits a rule text into elementary discourse units. Implementations must be
// pure: the same rule always yields the same segmentation.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual SegmentedRule segment(const RuleText& rule) const = 0;
};

// Discourse markers that open a new unit when they follow a comma or semicolon.
struct MarkerLexicon {
  std::string version;
  std::vector<std::string> markers;  // lowercase

  static MarkerLexicon builtin();
  // One marker per line; '#' starts a comment; "# version: X" sets the version.
  static MarkerLexicon parse(std::istream& in);
  static MarkerLexicon load(const std::filesystem::path& path);
};

// Deterministic segmenter. Split points, applied in order:
//   1. line breaks that start a list item or follow a line ending in : . ! ? ;
//      (or a blank line); other line breaks are soft wraps,
//   2. sentence terminators . ! ? followed by whitespace,
//   3. a comma or semicolon followed by a lexicon marker; the punctuation
//      stays with the left unit.
// Units are whitespace-collapsed and never empty.
class RuleSegmenter final : public Segmenter {
 public:
  explicit RuleSegmenter(MarkerLexicon lexicon = MarkerLexicon::builtin());

  SegmentedRule segment(const RuleText& rule) const override;
  std::vector<std::string> split(std::string_view body) const;

  const MarkerLexicon& lexicon() const { return lexicon_; }

 private:
  void split_clauses(std::string_view sentence, std::vector<std::string>& out) const;
  bool marker_at(std::string_view s, std::size_t pos) const;

  MarkerLexicon lexicon_;
};

std::vector<SegmentedRule> segment_all(const Segmenter& segmenter, const KnowledgeBase& kb);

}  // namespace cmr
