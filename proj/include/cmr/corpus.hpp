#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

namespace cmr {

enum class Decision { Yes, No, Inquire, Irrelevant };

inline constexpr std::size_t kDecisionCount = 4;

std::string_view to_string(Decision d);
std::size_t index_of(Decision d);
Decision decision_at(std::size_t index);
// Case-insensitive canonical name ("yes", "Inquire", ...); throws ValidationError.
Decision parse_decision(std::string_view name);

enum class Split { Train, Dev, Test };

Split parse_split(std::string_view s);
std::string_view to_string(Split s);

struct RuleText {
  std::string id;
  std::string source;
  std::string body;
};

// Rule corpus searched by the retriever. Insertion order is preserved but
// carries no meaning; lookups go through the id.
class KnowledgeBase {
 public:
  void add(RuleText rule);

  const RuleText* find(std::string_view id) const;
  const RuleText& at(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }

  std::size_t count() const { return rules_.size(); }
  bool empty() const { return rules_.empty(); }
  std::span<const RuleText> rules() const { return rules_; }

 private:
  std::vector<RuleText> rules_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct DialogueTurn {
  std::string follow_up_question;
  std::string follow_up_answer;  // "Yes" or "No"

  bool operator==(const DialogueTurn&) const = default;
};

struct Example {
  std::string id;
  std::string tree_id;
  std::string scenario;
  std::string initial_question;
  std::vector<DialogueTurn> history;
  Decision gold_decision = Decision::Inquire;
  std::optional<std::string> gold_question;
  std::optional<std::string> gold_rule_id;
  std::optional<bool> seen;

  bool operator==(const Example&) const = default;
};

// Throws ValidationError when gold_question presence disagrees with the decision.
void validate(const Example& e);

struct LoadOptions {
  // Runs reject Irrelevant unless this is set.
  bool admit_irrelevant = false;
};

// Maps a raw dataset answer string onto a decision. Yes/No/Irrelevant are
// matched case-insensitively; anything else is an Inquire carrying the text.
std::pair<Decision, std::optional<std::string>> normalize_answer(std::string_view answer);

// Canonical "Yes"/"No" for a history answer; throws ValidationError otherwise.
std::string normalize_turn_answer(std::string_view answer);

KnowledgeBase read_knowledge_base(std::istream& in);
KnowledgeBase load_knowledge_base(const std::filesystem::path& path);
void write_knowledge_base(std::ostream& out, const KnowledgeBase& kb);

Example example_from_json(const nlohmann::json& j, const LoadOptions& opts = {});
nlohmann::json example_to_json(const Example& e);

std::vector<Example> read_examples(std::istream& in, const LoadOptions& opts = {});
// A directory path resolves to <path>/<split>.jsonl.
std::vector<Example> load_examples(const std::filesystem::path& path, Split split,
                                   const LoadOptions& opts = {});
void write_examples(std::ostream& out, std::span<const Example> examples);

// Nodes live in a flat array so that malformed (cyclic or shared) structures
// stay representable and can be rejected.
struct DialogueTree {
  struct Node {
    std::optional<std::string> question;   // internal nodes
    std::optional<Decision> decision;      // leaves
    std::optional<std::size_t> yes_child;
    std::optional<std::size_t> no_child;
  };

  std::string tree_id;
  std::string scenario;
  std::string initial_question;
  std::optional<std::string> gold_rule_id;
  std::vector<Node> nodes;
  std::size_t root = 0;
};

// One Example per node, in depth-first order (Yes branch before No branch).
std::vector<Example> flatten_dialogue_tree(const DialogueTree& tree);

struct SeenTagSummary {
  std::size_t seen = 0;
  std::size_t unseen = 0;
  std::size_t untagged = 0;
};

SeenTagSummary tag_seen_unseen(std::span<Example> examples,
                               const std::unordered_set<std::string>& train_rule_ids);

std::unordered_set<std::string> collect_rule_ids(std::span<const Example> examples);

}  // namespace cmr
