#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "cmr/error.hpp"
#include "cmr/generation.hpp"
#include "test_support.hpp"

using namespace cmr;

namespace {

StepDistribution uniform(std::size_t vocab) {
  StepDistribution d;
  for (std::size_t i = 0; i < vocab; ++i) d.logprobs["t" + std::to_string(i)] = -std::log(static_cast<double>(vocab));
  return d;
}

// Random normalized distribution over vocab tokens.
StepDistribution random_step(std::mt19937_64& rng, std::size_t vocab) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(vocab);
  double total = 0.0;
  for (auto& x : w) total += (x = u(rng));
  StepDistribution d;
  for (std::size_t i = 0; i < vocab; ++i) d.logprobs["t" + std::to_string(i)] = std::log(w[i] / total);
  return d;
}

SerializedInstance instance(std::string id, std::string input) { return {std::move(id), std::move(input), {}}; }

}  // namespace

TEST_CASE("scripted generator lookup") {
  ScriptedGenerator gen;
  gen.add_by_input("[QU] a", "Yes");
  gen.add_by_id("e2", "Inquire are you 65?");
  GenerationParams params;

  CHECK(gen.generate(instance("e1", "[QU] a"), params).text == "Yes");
  CHECK(gen.generate(instance("e2", "[QU] b"), params).text == "Inquire are you 65?");
  // Input match wins over id match.
  CHECK(gen.generate(instance("e2", "[QU] a"), params).text == "Yes");
  const auto fallback = gen.generate(instance("e3", "[QU] c"), params);
  CHECK(fallback.text == "Inquire");
  CHECK(fallback.defaulted);
  CHECK(gen.size() == 2);
}

TEST_CASE("scripted generator truncates to max_length words") {
  ScriptedGenerator gen;
  gen.add_by_id("e", "Inquire do you live in the UK?");
  GenerationParams params;
  params.max_length = 3;
  const auto out = gen.generate(instance("e", ""), params);
  CHECK(out.text == "Inquire do you");
  CHECK(out.truncated);
  params.max_length = 7;
  CHECK_FALSE(gen.generate(instance("e", ""), params).truncated);
  params.max_length = 0;
  CHECK_THROWS_AS(gen.generate(instance("e", ""), params), ValidationError);
}

TEST_CASE("scripted generator from file") {
  const auto dir = testing_support::scratch_dir("gen");
  const auto path = testing_support::write_file(
      dir / "s.jsonl", "{\"default\":\"No\"}\n{\"id\":\"e1\",\"output\":\"Yes\"}\n\n{\"input\":\"x\",\"output\":\"Inquire q\"}\n");
  auto gen = ScriptedGenerator::from_file(path);
  GenerationParams params;
  CHECK(gen.generate(instance("e1", ""), params).text == "Yes");
  CHECK(gen.generate(instance("e9", "x"), params).text == "Inquire q");
  CHECK(gen.generate(instance("e9", "y"), params).text == "No");

  testing_support::write_file(dir / "bad.jsonl", "{\"id\":\"e1\",\"output\":\"Yes\"}\n{\"id\":1}\n");
  try {
    ScriptedGenerator::from_file(dir / "bad.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("negative log-likelihood cases") {
  SUBCASE("uniform over ten tokens, three steps") {
    const std::vector<StepDistribution> steps(3, uniform(10));
    const std::vector<std::string> target{"t1", "t4", "t9"};
    CHECK(nll_loss(steps, target) == doctest::Approx(3.0 * std::log(10.0)).epsilon(1e-12));
    CHECK(nll_loss(steps, target) == doctest::Approx(6.907755).epsilon(1e-6));
  }
  SUBCASE("certain steps give zero") {
    StepDistribution d;
    d.logprobs["t0"] = 0.0;
    const std::vector<StepDistribution> steps(4, d);
    const std::vector<std::string> target(4, "t0");
    const double loss = nll_loss(steps, target);
    CHECK(loss == 0.0);
    CHECK_FALSE(std::signbit(loss));
  }
  SUBCASE("six coin flips") {
    const std::vector<StepDistribution> steps(6, uniform(2));
    const std::vector<std::string> target{"t0", "t1", "t1", "t0", "t0", "t1"};
    CHECK(nll_loss(steps, target) == doctest::Approx(6.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(nll_loss(steps, target) == doctest::Approx(4.158883).epsilon(1e-6));
  }
  SUBCASE("errors") {
    const std::vector<StepDistribution> steps(2, uniform(3));
    const std::vector<std::string> missing{"t0", "zz"};
    CHECK_THROWS_AS(nll_loss(steps, missing), DomainError);
    const std::vector<std::string> shorter{"t0"};
    CHECK_THROWS_AS(nll_loss(steps, shorter), DomainError);
    StepDistribution bad;
    bad.logprobs["t0"] = 0.5;
    const std::vector<StepDistribution> over{bad};
    const std::vector<std::string> one{"t0"};
    CHECK_THROWS_AS(nll_loss(over, one), DomainError);
    bad.logprobs["t0"] = std::nan("");
    const std::vector<StepDistribution> nan_step{bad};
    CHECK_THROWS_AS(nll_loss(nan_step, one), DomainError);
  }
}

TEST_CASE("loss is additive over sequence splits and non-negative") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 1 + rng() % 12;
    const std::size_t vocab = 2 + rng() % 8;
    std::vector<StepDistribution> steps;
    std::vector<std::string> target;
    for (std::size_t j = 0; j < len; ++j) {
      steps.push_back(random_step(rng, vocab));
      target.push_back("t" + std::to_string(rng() % vocab));
    }
    const double full = nll_loss(steps, target);
    CHECK(full >= 0.0);
    const std::size_t cut = rng() % (len + 1);
    const double left = nll_loss(std::span(steps).first(cut), std::span(target).first(cut));
    const double right = nll_loss(std::span(steps).subspan(cut), std::span(target).subspan(cut));
    CHECK(full == doctest::Approx(left + right).epsilon(1e-12));

    std::vector<double> lps;
    for (std::size_t j = 0; j < len; ++j) lps.push_back(steps[j].logprobs.at(target[j]));
    CHECK(sequence_nll(lps) == doctest::Approx(full).epsilon(1e-12));
  }
}
