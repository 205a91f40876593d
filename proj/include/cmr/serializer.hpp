#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmr/corpus.hpp"
#include "cmr/segmenter.hpp"
#include "json.hpp"

namespace cmr {

namespace markers {
inline constexpr std::string_view kQuestion = "[QU]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kScenario = "[SC]";
inline constexpr std::string_view kFollowUpQuestion = "[FUQ]";
inline constexpr std::string_view kFollowUpAnswer = "[FUA]";
inline constexpr std::string_view kRule = "[SN]";
inline constexpr std::string_view kEdu = "[EDU]";
inline constexpr std::string_view kEos = "[EOS]";
}  // namespace markers

struct SerializedInstance {
  std::string example_id;
  std::string input_text;
  std::vector<std::string> retrieved_rule_ids;
};

// Canonical layout:
//   [QU] Q [SEP] [SC] S [SEP] ( [FUQ] q_i [FUA] a_i )* ( [SN] ( [EDU] e )+ )*
// Rules appear in the order given (retrieval rank). An empty rule list is only
// accepted when allow_empty_rules is set (the no-retriever ablation).
SerializedInstance build_input(const Example& example, std::span<const SegmentedRule> rules,
                               bool allow_empty_rules = false);

struct TargetSequence {
  std::string decision_token;
  std::optional<std::string> question;

  static constexpr std::string_view terminal = markers::kEos;
};

TargetSequence build_target(const Example& example, bool admit_irrelevant = false);

// Decision token and question joined by one space; no terminal marker.
std::string render(const TargetSequence& target);

// Word-level label sequence y_1..y_k ending with the terminal marker.
std::vector<std::string> target_tokens(const TargetSequence& target);

struct ParsedPrediction {
  Decision decision = Decision::Inquire;
  std::optional<std::string> question;
  std::string raw;
  bool parse_warning = false;       // first word was not a decision
  bool trailing_discarded = false;  // text after Yes/No was dropped
};

struct ParseOptions {
  bool admit_irrelevant = false;
};

ParsedPrediction parse_output(std::string_view output_text, const ParseOptions& opts = {});

// {"id", "input", "target"} record for offline fine-tuning.
nlohmann::json instance_record(const SerializedInstance& instance, const TargetSequence& target);

}  // namespace cmr
