#include "cmr/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "cmr/error.hpp"
#include "cmr/text.hpp"

namespace cmr {

using nlohmann::json;

namespace {

constexpr std::string_view kDecisionNames[kDecisionCount] = {"Yes", "No", "Inquire", "Irrelevant"};

std::string_view strip_answer_punct(std::string_view s) {
  while (!s.empty() && (s.back() == '.' || s.back() == '!')) s.remove_suffix(1);
  return text::trim(s);
}

std::string required_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return in;
}

// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
    try {
      fn(j, line_no);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

std::string_view to_string(Decision d) { return kDecisionNames[index_of(d)]; }

std::size_t index_of(Decision d) { return static_cast<std::size_t>(d); }

Decision decision_at(std::size_t index) {
  if (index >= kDecisionCount) throw DomainError("decision index out of range");
  return static_cast<Decision>(index);
}

Decision parse_decision(std::string_view name) {
  for (std::size_t i = 0; i < kDecisionCount; ++i)
    if (text::iequals(name, kDecisionNames[i])) return decision_at(i);
  throw ValidationError("unknown decision '" + std::string(name) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

void KnowledgeBase::add(RuleText rule) {
  if (rule.id.empty()) throw ValidationError("rule id is empty");
  if (text::trim(rule.body).empty()) throw ValidationError("rule '" + rule.id + "' has an empty body");
  if (by_id_.contains(rule.id)) throw ValidationError("duplicate rule id '" + rule.id + "'");
  by_id_.emplace(rule.id, rules_.size());
  rules_.push_back(std::move(rule));
}

const RuleText* KnowledgeBase::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &rules_[it->second];
}

const RuleText& KnowledgeBase::at(std::string_view id) const {
  const RuleText* r = find(id);
  if (!r) throw ValidationError("unknown rule id '" + std::string(id) + "'");
  return *r;
}

void validate(const Example& e) {
  const bool inquire = e.gold_decision == Decision::Inquire;
  if (inquire && !e.gold_question)
    throw ValidationError("example '" + e.id + "': Inquire without a gold question");
  if (!inquire && e.gold_question)
    throw ValidationError("example '" + e.id + "': gold question on a non-Inquire decision");
  for (const auto& turn : e.history) {
    if (turn.follow_up_answer != "Yes" && turn.follow_up_answer != "No")
      throw ValidationError("example '" + e.id + "': history answer is not Yes/No");
  }
}

std::pair<Decision, std::optional<std::string>> normalize_answer(std::string_view answer) {
  const std::string_view trimmed = text::trim(answer);
  if (trimmed.empty()) throw ValidationError("empty answer");
  const std::string_view word = strip_answer_punct(trimmed);
  if (text::iequals(word, "yes")) return {Decision::Yes, std::nullopt};
  if (text::iequals(word, "no")) return {Decision::No, std::nullopt};
  if (text::iequals(word, "irrelevant")) return {Decision::Irrelevant, std::nullopt};
  return {Decision::Inquire, std::string(trimmed)};
}

std::string normalize_turn_answer(std::string_view answer) {
  const std::string_view word = strip_answer_punct(text::trim(answer));
  if (text::iequals(word, "yes")) return "Yes";
  if (text::iequals(word, "no")) return "No";
  throw ValidationError("follow-up answer '" + std::string(answer) + "' is not Yes/No");
}

KnowledgeBase read_knowledge_base(std::istream& in) {
  KnowledgeBase kb;
  for_each_json_line(in, [&](const json& j, std::size_t) {
    RuleText r;
    r.id = required_string(j, "id");
    r.source = optional_string(j, "source").value_or("");
    r.body = required_string(j, "text");
    kb.add(std::move(r));
  });
  return kb;
}

KnowledgeBase load_knowledge_base(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_knowledge_base(in);
}

void write_knowledge_base(std::ostream& out, const KnowledgeBase& kb) {
  for (const auto& r : kb.rules())
    out << json{{"id", r.id}, {"source", r.source}, {"text", r.body}}.dump() << '\n';
}

Example example_from_json(const json& j, const LoadOptions& opts) {
  Example e;
  e.id = required_string(j, "utterance_id");
  e.tree_id = optional_string(j, "tree_id").value_or("");
  e.scenario = optional_string(j, "scenario").value_or("");
  e.initial_question = required_string(j, "question");
  if (auto it = j.find("history"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ValidationError("field 'history' is not an array");
    for (const auto& turn : *it) {
      if (!turn.is_object()) throw ValidationError("history entry is not an object");
      e.history.push_back({required_string(turn, "follow_up_question"),
                           normalize_turn_answer(required_string(turn, "follow_up_answer"))});
    }
  }
  auto [decision, question] = normalize_answer(required_string(j, "answer"));
  if (decision == Decision::Irrelevant && !opts.admit_irrelevant)
    throw ValidationError("example '" + e.id + "': Irrelevant decision is not admitted without --admit-irrelevant");
  e.gold_decision = decision;
  e.gold_question = std::move(question);
  e.gold_rule_id = optional_string(j, "gold_rule_id");
  if (auto it = j.find("seen"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean()) throw ValidationError("field 'seen' is not a boolean");
    e.seen = it->get<bool>();
  }
  validate(e);
  return e;
}

json example_to_json(const Example& e) {
  json history = json::array();
  for (const auto& t : e.history)
    history.push_back({{"follow_up_question", t.follow_up_question}, {"follow_up_answer", t.follow_up_answer}});
  json j{{"utterance_id", e.id},
         {"tree_id", e.tree_id},
         {"scenario", e.scenario},
         {"question", e.initial_question},
         {"history", std::move(history)},
         {"answer", e.gold_decision == Decision::Inquire ? e.gold_question.value_or("")
                                                         : std::string(to_string(e.gold_decision))}};
  if (e.gold_rule_id) j["gold_rule_id"] = *e.gold_rule_id;
  if (e.seen) j["seen"] = *e.seen;
  return j;
}

std::vector<Example> read_examples(std::istream& in, const LoadOptions& opts) {
  std::vector<Example> out;
  for_each_json_line(in, [&](const json& j, std::size_t) { out.push_back(example_from_json(j, opts)); });
  return out;
}

std::vector<Example> load_examples(const std::filesystem::path& path, Split split, const LoadOptions& opts) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / (std::string(to_string(split)) + ".jsonl");
  auto in = open_input(file);
  return read_examples(in, opts);
}

void write_examples(std::ostream& out, std::span<const Example> examples) {
  for (const auto& e : examples) out << example_to_json(e).dump() << '\n';
}

std::vector<Example> flatten_dialogue_tree(const DialogueTree& tree) {
  if (tree.nodes.empty()) throw ValidationError("dialogue tree '" + tree.tree_id + "' has no nodes");
  std::vector<bool> visited(tree.nodes.size(), false);
  std::vector<Example> out;

  struct Frame {
    std::size_t node;
    std::vector<DialogueTurn> path;
    std::string suffix;
  };
  std::vector<Frame> stack{{tree.root, {}, ""}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    if (f.node >= tree.nodes.size())
      throw ValidationError("dialogue tree '" + tree.tree_id + "': child index out of range");
    if (visited[f.node])
      throw ValidationError("dialogue tree '" + tree.tree_id + "': cycle or shared node at " +
                            std::to_string(f.node));
    visited[f.node] = true;
    const auto& node = tree.nodes[f.node];
    const bool internal = node.yes_child || node.no_child;

    Example e;
    e.id = tree.tree_id + "_" + (f.suffix.empty() ? "root" : f.suffix);
    e.tree_id = tree.tree_id;
    e.scenario = tree.scenario;
    e.initial_question = tree.initial_question;
    e.history = f.path;
    e.gold_rule_id = tree.gold_rule_id;
    if (internal) {
      if (!node.question)
        throw ValidationError("dialogue tree '" + tree.tree_id + "': internal node without a question");
      e.gold_decision = Decision::Inquire;
      e.gold_question = node.question;
    } else {
      if (!node.decision || *node.decision == Decision::Inquire)
        throw ValidationError("dialogue tree '" + tree.tree_id + "': leaf without a final decision");
      e.gold_decision = *node.decision;
    }
    out.push_back(std::move(e));

    // Push No first so the Yes branch is emitted first.
    if (node.no_child) {
      auto path = f.path;
      path.push_back({*node.question, "No"});
      stack.push_back({*node.no_child, std::move(path), f.suffix + "N"});
    }
    if (node.yes_child) {
      auto path = f.path;
      path.push_back({*node.question, "Yes"});
      stack.push_back({*node.yes_child, std::move(path), f.suffix + "Y"});
    }
  }
  return out;
}

SeenTagSummary tag_seen_unseen(std::span<Example> examples, const std::unordered_set<std::string>& train_rule_ids) {
  SeenTagSummary summary;
  for (auto& e : examples) {
    if (!e.gold_rule_id) {
      e.seen.reset();
      ++summary.untagged;
      continue;
    }
    e.seen = train_rule_ids.contains(*e.gold_rule_id);
    ++(*e.seen ? summary.seen : summary.unseen);
  }
  return summary;
}

std::unordered_set<std::string> collect_rule_ids(std::span<const Example> examples) {
  std::unordered_set<std::string> ids;
  for (const auto& e : examples)
    if (e.gold_rule_id) ids.insert(*e.gold_rule_id);
  return ids;
}

}  // namespace cmr
