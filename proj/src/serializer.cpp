#include "cmr/serializer.hpp"

#include "cmr/error.hpp"
#include "cmr/text.hpp"

namespace cmr {

namespace {

void append(std::string& out, std::string_view marker, std::string_view content) {
  out += ' ';
  out += marker;
  const std::string collapsed = text::collapse_whitespace(content);
  if (!collapsed.empty()) {
    out += ' ';
    out += collapsed;
  }
}

std::string_view strip_trailing_punct(std::string_view w) {
  while (!w.empty()) {
    const char c = w.back();
    if (c == '.' || c == ',' || c == '!' || c == '?' || c == ':' || c == ';') {
      w.remove_suffix(1);
    } else {
      break;
    }
  }
  return w;
}

}  // namespace

SerializedInstance build_input(const Example& example, std::span<const SegmentedRule> rules, bool allow_empty_rules) {
  if (rules.empty() && !allow_empty_rules)
    throw ValidationError("example '" + example.id + "': no rule texts to serialize");
  SerializedInstance inst;
  inst.example_id = example.id;
  std::string& s = inst.input_text;
  s = markers::kQuestion;
  const std::string q = text::collapse_whitespace(example.initial_question);
  if (!q.empty()) s += ' ' + q;
  append(s, markers::kSep, "");
  append(s, markers::kScenario, example.scenario);
  append(s, markers::kSep, "");
  for (const auto& turn : example.history) {
    append(s, markers::kFollowUpQuestion, turn.follow_up_question);
    append(s, markers::kFollowUpAnswer, turn.follow_up_answer);
  }
  for (const auto& rule : rules) {
    append(s, markers::kRule, "");
    for (const auto& edu : rule.edus) append(s, markers::kEdu, edu.text);
    inst.retrieved_rule_ids.push_back(rule.rule_id);
  }
  return inst;
}

TargetSequence build_target(const Example& example, bool admit_irrelevant) {
  switch (example.gold_decision) {
    case Decision::Yes: return {"Yes", std::nullopt};
    case Decision::No: return {"No", std::nullopt};
    case Decision::Inquire:
      if (!example.gold_question)
        throw ValidationError("example '" + example.id + "': Inquire without a gold question");
      return {"Inquire", std::string(text::trim(*example.gold_question))};
    case Decision::Irrelevant:
      if (!admit_irrelevant)
        throw ValidationError("example '" + example.id + "': Irrelevant is not a valid target");
      return {"Irrelevant", std::nullopt};
  }
  throw ValidationError("unknown decision");
}

std::string render(const TargetSequence& target) {
  std::string out = target.decision_token;
  if (target.question) {
    out += ' ';
    out += text::trim(*target.question);
  }
  return out;
}

std::vector<std::string> target_tokens(const TargetSequence& target) {
  std::vector<std::string> tokens{target.decision_token};
  if (target.question) {
    for (auto w : text::split_whitespace(*target.question)) tokens.emplace_back(w);
  }
  tokens.emplace_back(TargetSequence::terminal);
  return tokens;
}

ParsedPrediction parse_output(std::string_view output_text, const ParseOptions& opts) {
  ParsedPrediction p;
  p.raw = std::string(output_text);
  const std::string_view body = text::trim(output_text);
  std::size_t word_end = 0;
  while (word_end < body.size() && !text::is_space(body[word_end])) ++word_end;
  const std::string_view word = strip_trailing_punct(body.substr(0, word_end));
  const std::string_view rest = text::trim(body.substr(word_end));

  if (text::iequals(word, "yes") || text::iequals(word, "no") ||
      (opts.admit_irrelevant && text::iequals(word, "irrelevant"))) {
    p.decision = text::iequals(word, "yes") ? Decision::Yes
                 : text::iequals(word, "no") ? Decision::No
                                              : Decision::Irrelevant;
    p.trailing_discarded = !rest.empty();
    return p;
  }
  p.decision = Decision::Inquire;
  if (text::iequals(word, "inquire")) {
    p.question = std::string(rest);
  } else {
    p.question = std::string(body);
    p.parse_warning = true;
  }
  return p;
}

nlohmann::json instance_record(const SerializedInstance& instance, const TargetSequence& target) {
  return {{"id", instance.example_id}, {"input", instance.input_text}, {"target", render(target)}};
}

}  // namespace cmr
