#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "cmr/error.hpp"
#include "cmr/harness.hpp"
#include "cmr/segmenter.hpp"
#include "cmr/synthetic.hpp"
#include "cmr/text.hpp"
#include "test_support.hpp"

using namespace cmr;

namespace {

std::size_t count_token(std::string_view text, std::string_view token) {
  std::size_t n = 0;
  for (auto w : text::split_whitespace(text))
    if (w == token) ++n;
  return n;
}

ScriptedGenerator gold_generator(std::span<const Example> examples) {
  ScriptedGenerator gen;
  for (const auto& e : examples) gen.add_by_id(e.id, render(build_target(e)));
  return gen;
}

// Fails chosen examples with a transport error, optionally only on the first
// attempt.
class FlakyGenerator final : public Generator {
 public:
  FlakyGenerator(std::set<std::string> ids, bool first_attempt_only)
      : ids_(std::move(ids)), first_only_(first_attempt_only) {}

  ModelOutput generate(const SerializedInstance& instance, const GenerationParams&) override {
    ++calls;
    std::lock_guard lock(mu_);
    if (ids_.count(instance.example_id) && (!first_only_ || seen_.insert(instance.example_id).second))
      throw TransportError("connection reset");
    return {"Yes", {}, {}, false, false};
  }
  std::size_t max_in_flight() const override { return 4; }

  std::atomic<int> calls{0};

 private:
  std::set<std::string> ids_;
  bool first_only_;
  std::mutex mu_;
  std::set<std::string> seen_;
};

struct Fixture {
  SyntheticCorpus corpus = make_synthetic_corpus(21);
  RuleSegmenter segmenter;
  Pipeline pipeline{corpus.kb, segmenter};
};

}  // namespace

TEST_CASE("perfect generator closes every metric at 1") {
  Fixture f;
  auto gen = gold_generator(f.corpus.eval);
  const auto result = f.pipeline.run(f.corpus.eval, gen, {});
  const auto& r = result.report;
  CHECK(r.full.total == f.corpus.eval.size());
  CHECK(r.full.accuracy.micro == 1.0);
  CHECK(r.full.accuracy.macro == 1.0);
  CHECK(r.full.bleu1.f1 == 1.0);
  CHECK(r.full.bleu4.f1 == 1.0);
  REQUIRE(r.seen.has_value());
  REQUIRE(r.unseen.has_value());
  CHECK(r.seen->bleu4.f1 == 1.0);
  CHECK(r.unseen->accuracy.macro == 1.0);
  CHECK(r.failures == 0);
  CHECK(r.full.parse_warnings == 0);
}

TEST_CASE("constant No generator") {
  Fixture f;
  ScriptedGenerator gen("No");
  const auto r = f.pipeline.run(f.corpus.eval, gen, {}).report;
  std::size_t no = 0;
  for (const auto& e : f.corpus.eval) no += e.gold_decision == Decision::No;
  CHECK(r.full.accuracy.micro == doctest::Approx(static_cast<double>(no) / f.corpus.eval.size()).epsilon(1e-12));
  CHECK(r.full.accuracy.micro == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.full.accuracy.macro == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.full.bleu1.f1 == 0.0);
  CHECK(r.full.bleu4.f1 == 0.0);
}

TEST_CASE("rule selection modes") {
  Fixture f;
  RunSettings settings;
  SUBCASE("retrieve") {
    settings.top_m = 3;
    for (const auto& inst : f.pipeline.serialize(f.corpus.eval, settings)) {
      CHECK(count_token(inst.input_text, "[SN]") == 3);
      CHECK(inst.retrieved_rule_ids.size() == 3);
    }
  }
  SUBCASE("closed book uses exactly the gold rule") {
    settings.retrieval_mode = RetrievalMode::ClosedBook;
    const auto instances = f.pipeline.serialize(f.corpus.eval, settings);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      CHECK(count_token(instances[i].input_text, "[SN]") == 1);
      CHECK(instances[i].retrieved_rule_ids == std::vector<std::string>{*f.corpus.eval[i].gold_rule_id});
    }
    auto missing = f.corpus.eval;
    missing[0].gold_rule_id.reset();
    CHECK_THROWS_AS(f.pipeline.serialize(missing, settings), ValidationError);
  }
  SUBCASE("no rules") {
    settings.retrieval_mode = RetrievalMode::None;
    for (const auto& inst : f.pipeline.serialize(f.corpus.eval, settings)) {
      CHECK(count_token(inst.input_text, "[SN]") == 0);
      CHECK(count_token(inst.input_text, "[EDU]") == 0);
    }
  }
  CHECK(parse_retrieval_mode("closed_book") == RetrievalMode::ClosedBook);
  CHECK_THROWS_AS(parse_retrieval_mode("oracle"), ValidationError);
}

TEST_CASE("run input validation") {
  Fixture f;
  ScriptedGenerator gen;
  auto dup = f.corpus.eval;
  dup[1].id = dup[0].id;
  CHECK_THROWS_AS(f.pipeline.run(dup, gen, {}), ValidationError);
  auto irr = f.corpus.eval;
  irr[0].gold_decision = Decision::Irrelevant;
  irr[0].gold_question.reset();
  CHECK_THROWS_AS(f.pipeline.run(irr, gen, {}), ValidationError);
  RunSettings admit;
  admit.admit_irrelevant = true;
  CHECK_NOTHROW(f.pipeline.run(irr, gen, admit));
  RunSettings bad;
  bad.generation.num_beams = 0;
  CHECK_THROWS_AS(f.pipeline.run(f.corpus.eval, gen, bad), ValidationError);
}

TEST_CASE("parallel and serial runs are identical and repeatable") {
  Fixture f;
  ScriptedGenerator gen = gold_generator(std::span(f.corpus.eval).first(60));
  RunSettings par;
  RunSettings ser;
  ser.parallel = false;
  const auto a = f.pipeline.run(f.corpus.eval, gen, par);
  const auto b = f.pipeline.run(f.corpus.eval, gen, par);
  const auto c = f.pipeline.run(f.corpus.eval, gen, ser);
  CHECK(report_to_json(a.report) == report_to_json(b.report));
  CHECK(report_to_json(a.report) == report_to_json(c.report));
  REQUIRE(a.trace.size() == c.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(trace_row_to_json(a.trace[i]) == trace_row_to_json(c.trace[i]));
  CHECK(std::is_sorted(a.trace.begin(), a.trace.end(),
                       [](const TraceRow& x, const TraceRow& y) { return x.example_id < y.example_id; }));
}

TEST_CASE("trace round trip reproduces the report") {
  Fixture f;
  ScriptedGenerator gen = gold_generator(std::span(f.corpus.eval).first(70));
  gen.add_by_id(f.corpus.eval[100].id, "perhaps later");
  const auto run = f.pipeline.run(f.corpus.eval, gen, {});
  std::stringstream buf;
  write_trace(buf, run.trace);
  const auto rows = read_trace(buf);
  REQUIRE(rows.size() == run.trace.size());
  CHECK(report_to_json(evaluate_trace(rows)) == report_to_json(run.report));
  CHECK(run.report.full.parse_warnings >= 1);

  std::istringstream broken("{\"id\":\"x\",\"gold_decision\":\"Yes\"}\nnot json\n");
  try {
    read_trace(broken);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("failure handling") {
  Fixture f;
  const auto& eval = f.corpus.eval;
  REQUIRE(eval.size() == 120);
  SUBCASE("transient failures are retried") {
    std::set<std::string> ids;
    for (const auto& e : eval) ids.insert(e.id);
    FlakyGenerator gen(ids, true);
    const auto r = f.pipeline.run(eval, gen, {});
    CHECK(r.report.failures == 0);
    CHECK(gen.calls == 240);
  }
  SUBCASE("one persistent failure stays under one percent") {
    FlakyGenerator gen({eval[5].id}, false);
    const auto r = f.pipeline.run(eval, gen, {});
    CHECK(r.report.failures == 1);
    CHECK(r.report.full.total == 119);
    CHECK_FALSE(r.failure_threshold_exceeded);
    CHECK(gen.calls == 119 + 3);
  }
  SUBCASE("two persistent failures exceed one percent") {
    FlakyGenerator gen({eval[5].id, eval[6].id}, false);
    RunSettings s;
    s.max_retries = 0;
    const auto r = f.pipeline.run(eval, gen, s);
    CHECK(r.report.failures == 2);
    CHECK(r.failure_threshold_exceeded);
    CHECK(gen.calls == 120);
  }
}

TEST_CASE("sweeps") {
  Fixture f;
  auto gen = gold_generator(f.corpus.eval);
  RunSettings base;
  SUBCASE("top_m") {
    const SweepSpec spec{SweepParameter::TopM, {1, 6, 12, 20}};
    const auto a = sweep(f.pipeline, f.corpus.eval, gen, base, spec);
    const auto b = sweep(f.pipeline, f.corpus.eval, gen, base, spec);
    REQUIRE(a.reports.size() == 4);
    CHECK(a.reports[2].first == "12");
    CHECK(a.table() == b.table());
    std::istringstream in(a.table());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
      ++lines;
      CHECK(std::count(line.begin(), line.end(), '\t') == 16);
    }
    CHECK(lines == 5);
    const auto j = a.to_json();
    CHECK(j.at("parameter") == "top_m");
    CHECK(j.at("reports").size() == 4);
    CHECK(j.at("reports")[3].at("value") == 20);
  }
  SUBCASE("max_gen_len truncates generated questions") {
    const SweepSpec spec{SweepParameter::MaxGenLen, {10, 20, 50, 70}};
    const auto a = sweep(f.pipeline, f.corpus.eval, gen, base, spec);
    REQUIRE(a.reports.size() == 4);
    for (const auto& [v, rep] : a.reports) CHECK(rep.full.bleu4.f1 == 1.0);
    const auto shortened = sweep(f.pipeline, f.corpus.eval, gen, base, {SweepParameter::MaxGenLen, {2}});
    CHECK(shortened.reports[0].second.full.bleu1.f1 < 1.0);
    CHECK(shortened.reports[0].second.full.accuracy.micro == 1.0);
  }
  SUBCASE("single value") {
    const auto a = sweep(f.pipeline, f.corpus.eval, gen, base, {SweepParameter::TopM, {5}});
    CHECK(a.reports.size() == 1);
  }
  SUBCASE("invalid specs") {
    CHECK_THROWS_AS((SweepSpec{SweepParameter::TopM, {}}.validate()), ValidationError);
    CHECK_THROWS_AS((SweepSpec{SweepParameter::TopM, {3, 3}}.validate()), ValidationError);
    CHECK_THROWS_AS((SweepSpec{SweepParameter::TopM, {0, 3}}.validate()), ValidationError);
    CHECK(parse_sweep_parameter("max-gen-len") == SweepParameter::MaxGenLen);
  }
}

TEST_CASE("class-wise accuracy series") {
  // Checkpoint 1 answers Yes everywhere; from checkpoint 2 on, No is right too.
  std::vector<EvalReport> reports;
  for (int k = 1; k <= 6; ++k) {
    std::vector<PairedResult> r(3);
    r[0].gold.decision = Decision::Yes;
    r[0].pred.decision = Decision::Yes;
    r[1].gold.decision = Decision::No;
    r[1].pred.decision = k == 1 ? Decision::Yes : Decision::No;
    r[2].gold = {Decision::Inquire, "do you work here?"};
    r[2].pred.decision = k < 4 ? Decision::Yes : Decision::Inquire;
    if (k >= 4) r[2].pred.question = "do you work here?";
    reports.push_back(evaluate(r));
  }
  const auto points = classwise_trace(reports);
  REQUIRE(points.size() == 18);
  auto at = [&](std::size_t cp, Decision d) {
    for (const auto& p : points)
      if (p.checkpoint == cp && p.decision == d) return p.accuracy;
    FAIL("missing point");
    return -1.0;
  };
  CHECK(at(1, Decision::Yes) == 1.0);
  CHECK(at(1, Decision::No) == 0.0);
  CHECK(at(2, Decision::No) == 1.0);
  CHECK(at(3, Decision::Inquire) == 0.0);
  CHECK(at(4, Decision::Inquire) == 1.0);
  const auto csv = format_classwise_csv(points);
  CHECK(csv.rfind("checkpoint,class,accuracy\n1,yes,1.000000\n1,no,0.000000\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 19);
}

TEST_CASE("file-based run with seen tagging from a sibling training split") {
  Fixture f;
  const auto dir = testing_support::scratch_dir("harness");
  {
    std::ofstream kb(dir / "kb.jsonl");
    write_knowledge_base(kb, f.corpus.kb);
    std::ofstream train(dir / "train.jsonl");
    write_examples(train, f.corpus.train);
    auto untagged = f.corpus.eval;
    for (auto& e : untagged) e.seen.reset();
    std::ofstream dev(dir / "dev.jsonl");
    write_examples(dev, untagged);
    std::ofstream script(dir / "gold.jsonl");
    write_gold_script(script, f.corpus.eval);
  }
  RunConfig config;
  config.kb_path = dir / "kb.jsonl";
  config.data_path = dir;
  config.split = Split::Dev;
  config.generator_spec = "scripted:" + (dir / "gold.jsonl").string();
  config.seed = 9;

  const auto examples = load_run_examples(config);
  REQUIRE(examples.size() == f.corpus.eval.size());
  for (std::size_t i = 0; i < examples.size(); ++i) CHECK(examples[i].seen == f.corpus.eval[i].seen);

  const auto result = run_pipeline(config);
  CHECK(result.report.full.accuracy.micro == 1.0);
  CHECK(result.report.untagged == 0);
  const auto j = run_report_json(config, result.report);
  CHECK(j.at("run").at("split") == "dev");
  CHECK(j.at("run").at("top_m") == 8);
  CHECK(j.at("run").at("max_gen_len") == 30);
  CHECK(j.at("run").at("num_beams") == 5);
  CHECK(j.at("run").at("seed") == 9);

  const auto swept = sweep(config, {SweepParameter::TopM, {1, 2}});
  CHECK(swept.reports.size() == 2);

  config.generator_spec = "bogus";
  CHECK_THROWS_AS(run_pipeline(config), ValidationError);
  std::filesystem::remove_all(dir);
}
