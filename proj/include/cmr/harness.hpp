#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmr/corpus.hpp"
#include "cmr/generation.hpp"
#include "cmr/metrics.hpp"
#include "cmr/retriever.hpp"
#include "cmr/segmenter.hpp"
#include "cmr/serializer.hpp"
#include "json.hpp"

namespace cmr {

enum class RetrievalMode { Retrieve, ClosedBook, None };

RetrievalMode parse_retrieval_mode(std::string_view s);
std::string_view to_string(RetrievalMode m);

enum class OutputFormat { Json, Tsv };

OutputFormat parse_output_format(std::string_view s);

struct RunSettings {
  std::size_t top_m = 8;
  GenerationParams generation;  // max_length 30, num_beams 5
  RetrievalMode retrieval_mode = RetrievalMode::Retrieve;
  bool admit_irrelevant = false;
  std::size_t max_retries = 2;
  double max_failure_rate = 0.01;
  // false selects the single-threaded reference path end to end.
  bool parallel = true;
  EvalOptions eval;
};

struct RunConfig {
  std::filesystem::path kb_path;
  std::filesystem::path data_path;
  std::optional<std::filesystem::path> train_path;
  std::optional<std::filesystem::path> markers_path;
  Split split = Split::Dev;
  RunSettings settings;
  std::string generator_spec;  // scripted:PATH | remote:ADDRESS
  std::uint64_t seed = 0;
  std::filesystem::path output_path;
  std::optional<std::filesystem::path> trace_path;
  OutputFormat format = OutputFormat::Json;
};

struct TraceRow {
  std::string example_id;
  std::string input;
  std::vector<std::string> retrieved_rule_ids;
  std::string output;
  bool truncated = false;
  GoldLabel gold;
  std::optional<bool> seen;
  ParsedPrediction pred;
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  bool failed = false;
  std::string error;
};

struct RunResult {
  EvalReport report;
  std::vector<TraceRow> trace;  // sorted by example id
  bool failure_threshold_exceeded = false;
};

// Retrieval index plus pre-segmented rules for one knowledge base.
class Pipeline {
 public:
  Pipeline(const KnowledgeBase& kb, const Segmenter& segmenter);

  const KnowledgeBase& knowledge_base() const { return *kb_; }
  const Index& index() const { return index_; }
  const SegmentedRule& segmented(std::string_view rule_id) const;

  // Rule selection for every example under the given mode, in rank order.
  std::vector<std::vector<std::string>> select_rules(std::span<const Example> examples,
                                                     const RunSettings& settings) const;
  std::vector<SerializedInstance> serialize(std::span<const Example> examples, const RunSettings& settings) const;

  RunResult run(std::span<const Example> examples, Generator& generator, const RunSettings& settings) const;

 private:
  const KnowledgeBase* kb_;
  Index index_;
  std::unordered_map<std::string, SegmentedRule> segmented_;
};

// "scripted:PATH" or "remote:ADDRESS" (see connect_channel for addresses).
std::unique_ptr<Generator> make_generator(std::string_view spec, std::size_t max_in_flight = 8);

std::unique_ptr<Segmenter> make_segmenter(const std::optional<std::filesystem::path>& markers_path);

// Examples for the configured split, tagged seen/unseen when training rule ids
// are available and the records carry no tags of their own.
std::vector<Example> load_run_examples(const RunConfig& config);

RunResult run_pipeline(const RunConfig& config);

nlohmann::json trace_row_to_json(const TraceRow& row);
TraceRow trace_row_from_json(const nlohmann::json& j);
void write_trace(std::ostream& out, std::span<const TraceRow> rows);
std::vector<TraceRow> read_trace(std::istream& in);

// Recomputes the report from trace rows, re-parsing each stored output.
EvalReport evaluate_trace(std::span<const TraceRow> rows, const ParseOptions& parse = {},
                          const EvalOptions& eval = {});

// Report JSON with a "run" block describing the settings that produced it.
nlohmann::json run_report_json(const RunConfig& config, const EvalReport& report);

enum class SweepParameter { TopM, MaxGenLen };

SweepParameter parse_sweep_parameter(std::string_view s);
std::string_view to_string(SweepParameter p);

struct SweepSpec {
  SweepParameter parameter = SweepParameter::TopM;
  std::vector<int> values;

  // Non-empty, positive, strictly increasing.
  void validate() const;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<std::pair<std::string, EvalReport>> reports;  // keyed by value, in sweep order
  bool failure_threshold_exceeded = false;

  std::string table() const;
  nlohmann::json to_json() const;
};

SweepResult sweep(const Pipeline& pipeline, std::span<const Example> examples, Generator& generator,
                  const RunSettings& base, const SweepSpec& spec);
SweepResult sweep(const RunConfig& config, const SweepSpec& spec);

struct ClasswisePoint {
  std::size_t checkpoint = 0;  // 1-based
  Decision decision = Decision::Yes;
  double accuracy = 0.0;
};

// Per-class accuracy for each checkpoint report, classes in Yes/No/Inquire/
// Irrelevant order, skipping classes absent from that report's gold labels.
std::vector<ClasswisePoint> classwise_trace(std::span<const EvalReport> reports);
std::string format_classwise_csv(std::span<const ClasswisePoint> points);

}  // namespace cmr
