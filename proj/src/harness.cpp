#include "cmr/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include "cmr/error.hpp"
#include "cmr/remote.hpp"
#include "cmr/text.hpp"

namespace cmr {

using nlohmann::json;

namespace {

json optional_json(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> optional_from(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

TraceRow process_example(const Example& example, const SerializedInstance& instance, Generator& generator,
                         const RunSettings& settings) {
  TraceRow row;
  row.example_id = example.id;
  row.input = instance.input_text;
  row.retrieved_rule_ids = instance.retrieved_rule_ids;
  row.gold = {example.gold_decision, example.gold_question};
  row.seen = example.seen;

  std::optional<ModelOutput> output;
  for (std::size_t attempt = 0; attempt <= settings.max_retries && !output; ++attempt) {
    try {
      output = generator.generate(instance, settings.generation);
    } catch (const TransportError& e) {
      row.error = e.what();
    } catch (const std::exception& e) {
      row.error = e.what();
      break;
    }
  }
  if (!output) {
    row.failed = true;
    return row;
  }
  row.error.clear();
  row.output = output->text;
  row.truncated = output->truncated;
  row.pred = parse_output(row.output, {settings.admit_irrelevant});
  if (row.pred.decision == Decision::Inquire && row.gold.decision == Decision::Inquire) {
    const std::string cand = row.pred.question.value_or("");
    const std::string ref = row.gold.question.value_or("");
    row.bleu1 = sentence_bleu(cand, ref, 1, settings.eval.bleu);
    row.bleu4 = sentence_bleu(cand, ref, 4, settings.eval.bleu);
  }
  return row;
}

std::vector<PairedResult> paired_results(std::span<const TraceRow> rows) {
  std::vector<PairedResult> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (!row.failed) out.push_back({row.example_id, row.gold, row.pred, row.seen});
  }
  return out;
}

}  // namespace

RetrievalMode parse_retrieval_mode(std::string_view s) {
  if (s == "retrieve") return RetrievalMode::Retrieve;
  if (s == "closed-book" || s == "closed_book") return RetrievalMode::ClosedBook;
  if (s == "none") return RetrievalMode::None;
  throw ValidationError("unknown retrieval mode '" + std::string(s) + "'");
}

std::string_view to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::Retrieve: return "retrieve";
    case RetrievalMode::ClosedBook: return "closed-book";
    case RetrievalMode::None: return "none";
  }
  return "?";
}

OutputFormat parse_output_format(std::string_view s) {
  if (s == "json") return OutputFormat::Json;
  if (s == "tsv") return OutputFormat::Tsv;
  throw ValidationError("unknown output format '" + std::string(s) + "'");
}

Pipeline::Pipeline(const KnowledgeBase& kb, const Segmenter& segmenter) : kb_(&kb), index_(Index::build(kb)) {
  for (auto& seg : segment_all(segmenter, kb)) segmented_.emplace(seg.rule_id, std::move(seg));
}

const SegmentedRule& Pipeline::segmented(std::string_view rule_id) const {
  auto it = segmented_.find(std::string(rule_id));
  if (it == segmented_.end()) throw ValidationError("unknown rule id '" + std::string(rule_id) + "'");
  return it->second;
}

std::vector<std::vector<std::string>> Pipeline::select_rules(std::span<const Example> examples,
                                                             const RunSettings& settings) const {
  std::vector<std::vector<std::string>> out(examples.size());
  switch (settings.retrieval_mode) {
    case RetrievalMode::None:
      break;
    case RetrievalMode::ClosedBook:
      for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        if (!e.gold_rule_id) throw ValidationError("example '" + e.id + "': closed-book mode needs gold_rule_id");
        if (!kb_->contains(*e.gold_rule_id))
          throw ValidationError("example '" + e.id + "': gold rule '" + *e.gold_rule_id + "' is not in the KB");
        out[i].push_back(*e.gold_rule_id);
      }
      break;
    case RetrievalMode::Retrieve: {
      if (settings.top_m == 0) throw ValidationError("top_m must be positive");
      std::vector<RetrievalQuery> queries;
      queries.reserve(examples.size());
      for (const auto& e : examples) queries.push_back({e.scenario, e.initial_question});
      const auto results = settings.parallel ? retrieve_batch(index_, queries, settings.top_m)
                                             : retrieve_batch_serial(index_, queries, settings.top_m);
      for (std::size_t i = 0; i < results.size(); ++i)
        for (const auto& r : results[i]) out[i].push_back(r.rule_id);
      break;
    }
  }
  return out;
}

std::vector<SerializedInstance> Pipeline::serialize(std::span<const Example> examples,
                                                    const RunSettings& settings) const {
  const auto selected = select_rules(examples, settings);
  std::vector<SerializedInstance> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::vector<SegmentedRule> rules;
    rules.reserve(selected[i].size());
    for (const auto& id : selected[i]) rules.push_back(segmented(id));
    out.push_back(build_input(examples[i], rules, settings.retrieval_mode == RetrievalMode::None));
  }
  return out;
}

RunResult Pipeline::run(std::span<const Example> examples, Generator& generator, const RunSettings& settings) const {
  settings.generation.validate();
  {
    std::unordered_set<std::string> ids;
    for (const auto& e : examples) {
      validate(e);
      if (e.gold_decision == Decision::Irrelevant && !settings.admit_irrelevant)
        throw ValidationError("example '" + e.id + "': Irrelevant is not admitted without --admit-irrelevant");
      if (!ids.insert(e.id).second) throw ValidationError("duplicate example id '" + e.id + "'");
    }
  }
  const auto instances = serialize(examples, settings);

  RunResult result;
  result.trace.resize(examples.size());
  // Generation is usually I/O bound, so the generator's own concurrency limit
  // sets the thread count rather than the core count.
  const int threads = settings.parallel ? static_cast<int>(std::max<std::size_t>(1, generator.max_in_flight())) : 1;
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel for num_threads(threads) schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    result.trace[i] = process_example(examples[i], instances[i], generator, settings);

  std::sort(result.trace.begin(), result.trace.end(),
            [](const TraceRow& a, const TraceRow& b) { return a.example_id < b.example_id; });
  const auto paired = paired_results(result.trace);
  result.report = settings.parallel ? evaluate(paired, settings.eval) : evaluate_serial(paired, settings.eval);
  result.report.failures = result.trace.size() - paired.size();
  result.failure_threshold_exceeded =
      static_cast<double>(result.report.failures) > settings.max_failure_rate * static_cast<double>(examples.size());
  return result;
}

std::unique_ptr<Generator> make_generator(std::string_view spec, std::size_t max_in_flight) {
  const auto colon = spec.find(':');
  const std::string_view kind = spec.substr(0, colon);
  if (colon == std::string_view::npos || colon + 1 == spec.size())
    throw ValidationError("generator spec must be scripted:PATH or remote:ADDRESS");
  const std::string rest(spec.substr(colon + 1));
  if (kind == "scripted") return std::make_unique<ScriptedGenerator>(ScriptedGenerator::from_file(rest));
  if (kind == "remote") return std::make_unique<RemoteGenerator>(rest, RemoteOptions{max_in_flight});
  throw ValidationError("unknown generator kind '" + std::string(kind) + "'");
}

std::unique_ptr<Segmenter> make_segmenter(const std::optional<std::filesystem::path>& markers_path) {
  return std::make_unique<RuleSegmenter>(markers_path ? MarkerLexicon::load(*markers_path) : MarkerLexicon::builtin());
}

std::vector<Example> load_run_examples(const RunConfig& config) {
  auto examples = load_examples(config.data_path, config.split, {config.settings.admit_irrelevant});
  const bool tagged = std::any_of(examples.begin(), examples.end(), [](const Example& e) { return e.seen.has_value(); });
  if (tagged || config.split == Split::Train) return examples;

  std::optional<std::filesystem::path> train = config.train_path;
  if (!train && std::filesystem::is_directory(config.data_path) &&
      std::filesystem::exists(config.data_path / "train.jsonl"))
    train = config.data_path / "train.jsonl";
  if (!train) return examples;

  const auto train_examples = load_examples(*train, Split::Train, {true});
  const auto summary = tag_seen_unseen(examples, collect_rule_ids(train_examples));
  if (summary.untagged)
    std::cerr << "warning: " << summary.untagged << " example(s) lack gold_rule_id; left out of seen/unseen\n";
  return examples;
}

RunResult run_pipeline(const RunConfig& config) {
  const auto kb = load_knowledge_base(config.kb_path);
  const auto segmenter = make_segmenter(config.markers_path);
  const Pipeline pipeline(kb, *segmenter);
  const auto examples = load_run_examples(config);
  auto generator = make_generator(config.generator_spec);
  return pipeline.run(examples, *generator, config.settings);
}

json trace_row_to_json(const TraceRow& row) {
  return {{"id", row.example_id},
          {"input", row.input},
          {"retrieved", row.retrieved_rule_ids},
          {"output", row.output},
          {"truncated", row.truncated},
          {"gold_decision", to_string(row.gold.decision)},
          {"gold_question", optional_json(row.gold.question)},
          {"seen", row.seen ? json(*row.seen) : json(nullptr)},
          {"decision", to_string(row.pred.decision)},
          {"question", optional_json(row.pred.question)},
          {"parse_warning", row.pred.parse_warning},
          {"trailing_discarded", row.pred.trailing_discarded},
          {"bleu1", row.bleu1},
          {"bleu4", row.bleu4},
          {"failed", row.failed},
          {"error", row.error}};
}

TraceRow trace_row_from_json(const json& j) {
  try {
    TraceRow row;
    row.example_id = j.at("id").get<std::string>();
    row.input = j.value("input", "");
    row.retrieved_rule_ids = j.value("retrieved", std::vector<std::string>{});
    row.output = j.value("output", "");
    row.truncated = j.value("truncated", false);
    row.gold.decision = parse_decision(j.at("gold_decision").get<std::string>());
    row.gold.question = optional_from(j, "gold_question");
    if (auto it = j.find("seen"); it != j.end() && !it->is_null()) row.seen = it->get<bool>();
    if (auto it = j.find("decision"); it != j.end() && !it->is_null()) row.pred.decision = parse_decision(it->get<std::string>());
    row.pred.question = optional_from(j, "question");
    row.pred.raw = row.output;
    row.pred.parse_warning = j.value("parse_warning", false);
    row.pred.trailing_discarded = j.value("trailing_discarded", false);
    row.bleu1 = j.value("bleu1", 0.0);
    row.bleu4 = j.value("bleu4", 0.0);
    row.failed = j.value("failed", false);
    row.error = j.value("error", "");
    return row;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed trace row: ") + e.what());
  }
}

void write_trace(std::ostream& out, std::span<const TraceRow> rows) {
  for (const auto& row : rows) out << trace_row_to_json(row).dump() << '\n';
}

std::vector<TraceRow> read_trace(std::istream& in) {
  std::vector<TraceRow> rows;
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
    rows.push_back(trace_row_from_json(j));
  }
  return rows;
}

EvalReport evaluate_trace(std::span<const TraceRow> rows, const ParseOptions& parse, const EvalOptions& eval) {
  std::vector<TraceRow> reparsed(rows.begin(), rows.end());
  for (auto& row : reparsed)
    if (!row.failed) row.pred = parse_output(row.output, parse);
  const auto paired = paired_results(reparsed);
  EvalReport report = evaluate(paired, eval);
  report.failures = rows.size() - paired.size();
  return report;
}

json run_report_json(const RunConfig& config, const EvalReport& report) {
  json j = report_to_json(report);
  const auto& s = config.settings;
  j["run"] = {{"split", to_string(config.split)},
              {"top_m", s.top_m},
              {"max_gen_len", s.generation.max_length},
              {"num_beams", s.generation.num_beams},
              {"retrieval_mode", to_string(s.retrieval_mode)},
              {"seed", config.seed}};
  return j;
}

SweepParameter parse_sweep_parameter(std::string_view s) {
  if (s == "top_m" || s == "top-m") return SweepParameter::TopM;
  if (s == "max_gen_len" || s == "max-gen-len") return SweepParameter::MaxGenLen;
  throw ValidationError("unknown sweep parameter '" + std::string(s) + "'");
}

std::string_view to_string(SweepParameter p) { return p == SweepParameter::TopM ? "top_m" : "max_gen_len"; }

void SweepSpec::validate() const {
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 1) throw ValidationError("sweep values must be positive");
    if (i && values[i] <= values[i - 1]) throw ValidationError("sweep values must be strictly increasing");
  }
}

std::string SweepResult::table() const { return format_report_table(reports, to_string(spec.parameter)); }

json SweepResult::to_json() const {
  json reps = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i)
    reps.push_back({{"value", spec.values[i]}, {"report", report_to_json(reports[i].second)}});
  return {{"parameter", to_string(spec.parameter)}, {"values", spec.values}, {"reports", std::move(reps)}};
}

SweepResult sweep(const Pipeline& pipeline, std::span<const Example> examples, Generator& generator,
                  const RunSettings& base, const SweepSpec& spec) {
  spec.validate();
  SweepResult result{spec, {}, false};
  for (int v : spec.values) {
    RunSettings settings = base;
    if (spec.parameter == SweepParameter::TopM) {
      settings.top_m = static_cast<std::size_t>(v);
    } else {
      settings.generation.max_length = v;
    }
    auto run = pipeline.run(examples, generator, settings);
    result.failure_threshold_exceeded |= run.failure_threshold_exceeded;
    result.reports.emplace_back(std::to_string(v), std::move(run.report));
  }
  return result;
}

SweepResult sweep(const RunConfig& config, const SweepSpec& spec) {
  const auto kb = load_knowledge_base(config.kb_path);
  const auto segmenter = make_segmenter(config.markers_path);
  const Pipeline pipeline(kb, *segmenter);
  const auto examples = load_run_examples(config);
  auto generator = make_generator(config.generator_spec);
  return sweep(pipeline, examples, *generator, config.settings, spec);
}

std::vector<ClasswisePoint> classwise_trace(std::span<const EvalReport> reports) {
  std::vector<ClasswisePoint> out;
  for (std::size_t k = 0; k < reports.size(); ++k) {
    for (std::size_t c = 0; c < kDecisionCount; ++c) {
      const auto& acc = reports[k].full.accuracy.classwise[c];
      if (acc) out.push_back({k + 1, decision_at(c), *acc});
    }
  }
  return out;
}

std::string format_classwise_csv(std::span<const ClasswisePoint> points) {
  std::ostringstream out;
  out << "checkpoint,class,accuracy\n";
  for (const auto& p : points)
    out << p.checkpoint << ',' << text::to_lower(to_string(p.decision)) << ',' << text::format_fixed(p.accuracy)
        << '\n';
  return out.str();
}

}  // namespace cmr
