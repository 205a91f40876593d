// Command-line front end for the open-retrieval CMR pipeline.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmr/corpus.hpp"
#include "cmr/error.hpp"
#include "cmr/harness.hpp"
#include "cmr/metrics.hpp"
#include "cmr/retriever.hpp"
#include "cmr/segmenter.hpp"
#include "cmr/serializer.hpp"
#include "cmr/synthetic.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitGeneratorFailures = 3;

struct SharedFlags {
  std::string kb;
  std::string data;
  std::string train;
  std::string markers;
  std::string split = "dev";
  std::size_t top_m = 8;
  int max_gen_len = 30;
  int beams = 5;
  std::string generator;
  std::string retrieval_mode = "retrieve";
  std::string out;
  std::string trace;
  std::string format = "json";
  std::uint64_t seed = 0;
  std::size_t retries = 2;
  bool admit_irrelevant = false;
  bool serial = false;
};

void add_shared(CLI::App* app, SharedFlags& f) {
  app->add_option("--kb", f.kb, "Knowledge base JSONL");
  app->add_option("--data", f.data, "Examples JSONL file or directory of <split>.jsonl");
  app->add_option("--train", f.train, "Training examples used for seen/unseen tagging");
  app->add_option("--markers", f.markers, "Segmenter marker lexicon file");
  app->add_option("--split", f.split, "Split to evaluate")->check(CLI::IsMember({"train", "dev", "test"}));
  app->add_option("--top-m", f.top_m, "Number of retrieved rule texts")->check(CLI::PositiveNumber);
  app->add_option("--max-gen-len", f.max_gen_len, "Generation length budget")->check(CLI::PositiveNumber);
  app->add_option("--beams", f.beams, "Beam count passed to the generator")->check(CLI::PositiveNumber);
  app->add_option("--generator", f.generator, "scripted:PATH or remote:ADDRESS");
  app->add_option("--retrieval-mode", f.retrieval_mode, "Rule selection")
      ->check(CLI::IsMember({"retrieve", "closed-book", "none"}));
  app->add_option("--out", f.out, "Output path (stdout when omitted)");
  app->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"json", "tsv"}));
  app->add_option("--seed", f.seed, "Seed recorded in reports and used by synth");
  app->add_option("--retries", f.retries, "Retries per example on transport errors");
  app->add_flag("--admit-irrelevant", f.admit_irrelevant, "Accept the Irrelevant decision");
  app->add_flag("--serial", f.serial, "Use the single-threaded reference path");
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw cmr::ValidationError(std::string(flag) + " is required");
}

cmr::RunConfig to_config(const SharedFlags& f) {
  cmr::RunConfig c;
  c.kb_path = f.kb;
  c.data_path = f.data;
  if (!f.train.empty()) c.train_path = f.train;
  if (!f.markers.empty()) c.markers_path = f.markers;
  c.split = cmr::parse_split(f.split);
  c.settings.top_m = f.top_m;
  c.settings.generation.max_length = f.max_gen_len;
  c.settings.generation.num_beams = f.beams;
  c.settings.retrieval_mode = cmr::parse_retrieval_mode(f.retrieval_mode);
  c.settings.admit_irrelevant = f.admit_irrelevant;
  c.settings.max_retries = f.retries;
  c.settings.parallel = !f.serial;
  c.generator_spec = f.generator;
  c.seed = f.seed;
  c.output_path = f.out;
  if (!f.trace.empty()) c.trace_path = f.trace;
  c.format = cmr::parse_output_format(f.format);
  return c;
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path);
  if (!out) throw cmr::ValidationError("cannot write " + path);
  out << content;
}

std::string report_text(const cmr::RunConfig& config, const cmr::EvalReport& report) {
  if (config.format == cmr::OutputFormat::Tsv) {
    const std::pair<std::string, cmr::EvalReport> column{std::string(cmr::to_string(config.split)), report};
    return cmr::format_report_table(std::span(&column, 1), "split");
  }
  return cmr::run_report_json(config, report).dump(2) + "\n";
}

std::vector<int> parse_values(const std::string& csv) {
  std::vector<int> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      values.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw cmr::ValidationError("bad sweep value '" + item + "'");
    }
  }
  return values;
}

int cmd_index(const SharedFlags& f) {
  require(f.kb, "--kb");
  const auto kb = cmr::load_knowledge_base(f.kb);
  const auto index = cmr::Index::build(kb);
  emit(f.out, index.to_json().dump() + "\n");
  std::cerr << "indexed " << index.doc_count() << " rules, " << index.vocabulary_size() << " terms\n";
  return 0;
}

int cmd_retrieve(const SharedFlags& f, const std::string& index_path, const std::string& scenario,
                 const std::string& question) {
  if (index_path.empty()) require(f.kb, "--kb or --index");
  const auto index = index_path.empty() ? cmr::Index::build(cmr::load_knowledge_base(f.kb)) : cmr::Index::load(index_path);

  std::vector<std::pair<std::string, cmr::RetrievalQuery>> queries;
  if (!f.data.empty()) {
    for (const auto& e : cmr::load_examples(f.data, cmr::parse_split(f.split), {true}))
      queries.push_back({e.id, {e.scenario, e.initial_question}});
  } else {
    queries.push_back({"query", {scenario, question}});
  }
  std::vector<cmr::RetrievalQuery> batch;
  for (const auto& q : queries) batch.push_back(q.second);
  const auto results = f.serial ? cmr::retrieve_batch_serial(index, batch, f.top_m)
                                : cmr::retrieve_batch(index, batch, f.top_m);

  std::ostringstream out;
  if (f.format == "tsv") out << "id\trank\trule_id\tscore\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (f.format == "tsv") {
      for (const auto& r : results[i]) out << queries[i].first << '\t' << r.rank << '\t' << r.rule_id << '\t' << r.score << '\n';
      continue;
    }
    nlohmann::json hits = nlohmann::json::array();
    for (const auto& r : results[i]) hits.push_back({{"rank", r.rank}, {"rule_id", r.rule_id}, {"score", r.score}});
    out << nlohmann::json{{"id", queries[i].first}, {"results", std::move(hits)}}.dump() << '\n';
  }
  emit(f.out, out.str());
  return 0;
}

int cmd_segment(const SharedFlags& f, const std::string& rule_id) {
  require(f.kb, "--kb");
  const auto kb = cmr::load_knowledge_base(f.kb);
  const auto segmenter = cmr::make_segmenter(f.markers.empty() ? std::nullopt : std::optional<std::filesystem::path>(f.markers));
  std::ostringstream out;
  if (f.format == "tsv") out << "rule_id\tindex\tedu\n";
  for (const auto& rule : kb.rules()) {
    if (!rule_id.empty() && rule.id != rule_id) continue;
    const auto seg = segmenter->segment(rule);
    if (f.format == "tsv") {
      for (const auto& e : seg.edus) out << seg.rule_id << '\t' << e.index << '\t' << e.text << '\n';
      continue;
    }
    nlohmann::json edus = nlohmann::json::array();
    for (const auto& e : seg.edus) edus.push_back(e.text);
    out << nlohmann::json{{"id", seg.rule_id}, {"edus", std::move(edus)}}.dump() << '\n';
  }
  emit(f.out, out.str());
  return 0;
}

int cmd_export(const SharedFlags& f) {
  require(f.kb, "--kb");
  require(f.data, "--data");
  const auto config = to_config(f);
  const auto kb = cmr::load_knowledge_base(config.kb_path);
  const auto segmenter = cmr::make_segmenter(config.markers_path);
  const cmr::Pipeline pipeline(kb, *segmenter);
  const auto examples = cmr::load_examples(config.data_path, config.split, {config.settings.admit_irrelevant});
  const auto instances = pipeline.serialize(examples, config.settings);
  std::ostringstream out;
  for (std::size_t i = 0; i < examples.size(); ++i)
    out << cmr::instance_record(instances[i], cmr::build_target(examples[i], config.settings.admit_irrelevant)).dump()
        << '\n';
  emit(f.out, out.str());
  return 0;
}

int cmd_run(const SharedFlags& f) {
  require(f.kb, "--kb");
  require(f.data, "--data");
  require(f.generator, "--generator");
  const auto config = to_config(f);
  const auto result = cmr::run_pipeline(config);

  std::filesystem::path trace_path = config.trace_path.value_or(
      f.out.empty() || f.out == "-" ? std::filesystem::path("run.trace.jsonl")
                                    : std::filesystem::path(f.out + ".trace.jsonl"));
  std::ofstream trace(trace_path);
  if (!trace) throw cmr::ValidationError("cannot write " + trace_path.string());
  cmr::write_trace(trace, result.trace);

  emit(f.out, report_text(config, result.report));
  if (result.report.failures)
    std::cerr << "warning: " << result.report.failures << " example(s) failed generation\n";
  return result.failure_threshold_exceeded ? kExitGeneratorFailures : 0;
}

int cmd_eval(const SharedFlags& f) {
  require(f.trace, "--trace");
  std::ifstream in(f.trace);
  if (!in) throw cmr::ValidationError("cannot open " + f.trace);
  const auto rows = cmr::read_trace(in);
  const auto config = to_config(f);
  const auto report = cmr::evaluate_trace(rows, {config.settings.admit_irrelevant});
  emit(f.out, report_text(config, report));
  return 0;
}

int cmd_sweep(const SharedFlags& f, const std::string& param, const std::string& values) {
  require(f.kb, "--kb");
  require(f.data, "--data");
  require(f.generator, "--generator");
  const auto config = to_config(f);
  cmr::SweepSpec spec{cmr::parse_sweep_parameter(param), parse_values(values)};
  const auto result = cmr::sweep(config, spec);
  emit(f.out, f.format == "tsv" ? result.table() : result.to_json().dump(2) + "\n");
  return result.failure_threshold_exceeded ? kExitGeneratorFailures : 0;
}

int cmd_classwise(const SharedFlags& f, const std::vector<std::string>& reports) {
  std::vector<cmr::EvalReport> parsed;
  for (const auto& path : reports) {
    std::ifstream in(path);
    if (!in) throw cmr::ValidationError("cannot open " + path);
    try {
      parsed.push_back(cmr::report_from_json(nlohmann::json::parse(in)));
    } catch (const nlohmann::json::parse_error& e) {
      throw cmr::ParseError(path + ": " + e.what(), 0);
    }
  }
  emit(f.out, cmr::format_classwise_csv(cmr::classwise_trace(parsed)));
  return 0;
}

int cmd_synth(const SharedFlags& f, const std::string& out_dir, const cmr::SyntheticOptions& opts) {
  require(out_dir, "--out-dir");
  std::filesystem::create_directories(out_dir);
  const auto corpus = cmr::make_synthetic_corpus(f.seed, opts);
  const std::filesystem::path dir(out_dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw cmr::ValidationError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("kb.jsonl");
    cmr::write_knowledge_base(out, corpus.kb);
  }
  {
    auto out = open("train.jsonl");
    cmr::write_examples(out, corpus.train);
  }
  {
    auto out = open("dev.jsonl");
    cmr::write_examples(out, corpus.eval);
  }
  {
    auto out = open("gold_script.jsonl");
    cmr::write_gold_script(out, corpus.eval);
  }
  std::cerr << "wrote " << corpus.kb.count() << " rules, " << corpus.train.size() << " train and "
            << corpus.eval.size() << " dev examples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-retrieval conversational machine reading pipeline"};
  app.require_subcommand(1);
  SharedFlags flags;

  auto* index = app.add_subcommand("index", "Build and dump the TF-IDF index");
  auto* retrieve = app.add_subcommand("retrieve", "Retrieve top-m rule texts");
  auto* segment = app.add_subcommand("segment", "Segment rule texts into EDUs");
  auto* export_cmd = app.add_subcommand("export-instances", "Write serialized inputs and targets");
  auto* run = app.add_subcommand("run", "Run the full pipeline and score it");
  auto* eval = app.add_subcommand("eval", "Rescore a trace file");
  auto* sweep = app.add_subcommand("sweep", "Run one pipeline per parameter value");
  auto* classwise = app.add_subcommand("classwise", "Per-class accuracy series over checkpoint reports");
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic corpus and gold script");

  for (auto* sub : {index, retrieve, segment, export_cmd, run, eval, sweep, classwise, synth}) add_shared(sub, flags);
  for (auto* sub : {run, eval}) sub->add_option("--trace", flags.trace, "Trace file path");

  std::string index_path, scenario, question, rule_id, param, values, out_dir;
  retrieve->add_option("--index", index_path, "Index dump from `index`");
  retrieve->add_option("--scenario", scenario, "Scenario text");
  retrieve->add_option("--question", question, "Initial question text");
  segment->add_option("--rule-id", rule_id, "Only segment this rule");
  sweep->add_option("--param", param, "top_m or max_gen_len")->required();
  sweep->add_option("--values", values, "Comma-separated increasing values")->required();
  std::vector<std::string> report_files;
  classwise->add_option("reports", report_files, "Report JSON files in checkpoint order")->required();
  cmr::SyntheticOptions synth_opts;
  synth->add_option("--out-dir", out_dir, "Destination directory");
  synth->add_option("--rules", synth_opts.rules, "Number of rule texts");
  synth->add_option("--train-size", synth_opts.train_examples, "Training examples");
  synth->add_option("--eval-size", synth_opts.eval_examples, "Dev examples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*index) return cmd_index(flags);
    if (*retrieve) return cmd_retrieve(flags, index_path, scenario, question);
    if (*segment) return cmd_segment(flags, rule_id);
    if (*export_cmd) return cmd_export(flags);
    if (*run) return cmd_run(flags);
    if (*eval) return cmd_eval(flags);
    if (*sweep) return cmd_sweep(flags, param, values);
    if (*classwise) return cmd_classwise(flags, report_files);
    if (*synth) return cmd_synth(flags, out_dir, synth_opts);
  } catch (const cmr::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const cmr::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
