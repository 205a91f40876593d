#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <thread>

#include "cmr/error.hpp"
#include "cmr/harness.hpp"
#include "cmr/remote.hpp"
#include "cmr/segmenter.hpp"
#include "cmr/synthetic.hpp"

using namespace cmr;
using nlohmann::json;

namespace {

std::string stub(const std::string& args) { return std::string("exec:") + STUB_SIDECAR + " " + args; }

SerializedInstance instance(const std::string& id, const std::string& input) { return {id, input, {}}; }

// Runs n concurrent requests whose inputs are distinct and checks each caller
// gets its own input echoed back.
void check_concurrent_routing(RemoteGenerator& gen, int n) {
  std::vector<std::string> got(n);
  std::vector<std::thread> threads;
  for (int i = 0; i < n; ++i) {
    threads.emplace_back([&, i] { got[i] = gen.generate(instance("e", "input " + std::to_string(i)), {}).text; });
  }
  for (auto& t : threads) t.join();
  for (int i = 0; i < n; ++i) CHECK(got[i] == "input " + std::to_string(i));
}

}  // namespace

TEST_CASE("request encoding") {
  GenerationParams p;
  p.max_length = 12;
  p.num_beams = 3;
  const auto j = make_request("req-1", instance("e", "[QU] q"), p);
  CHECK(j == json{{"id", "req-1"}, {"input", "[QU] q"}, {"max_length", 12}, {"num_beams", 3}, {"return_logprobs", false}});
}

TEST_CASE("response decoding") {
  GenerationParams p;
  p.max_length = 2;
  SUBCASE("minimal") {
    const auto out = parse_response({{"id", "a"}, {"output", "Yes"}, {"truncated", true}}, p);
    CHECK(out.text == "Yes");
    CHECK(out.truncated);
    CHECK_FALSE(out.tokens.has_value());
  }
  SUBCASE("with log-probabilities") {
    const auto out = parse_response(
        {{"id", "a"}, {"output", "No"}, {"truncated", false}, {"tokens", {"No", "[EOS]"}}, {"logprobs", {-0.1, -0.2}}}, p);
    REQUIRE(out.logprobs.has_value());
    CHECK(out.logprobs->size() == 2);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_response({{"id", "a"}, {"error", "oom"}}, p), RemoteError);
    CHECK_THROWS_AS(parse_response({{"id", "a"}, {"truncated", false}}, p), MalformedResponseError);
    CHECK_THROWS_AS(parse_response({{"id", "a"}, {"output", "x"}}, p), MalformedResponseError);
    CHECK_THROWS_AS(parse_response({{"id", "a"}, {"output", 3}, {"truncated", false}}, p), MalformedResponseError);
    CHECK_THROWS_AS(parse_response({{"id", "a"}, {"output", "x"}, {"truncated", false}, {"tokens", {"a"}},
                                    {"logprobs", {-1.0, -2.0}}},
                                   p),
                    MalformedResponseError);
    CHECK_THROWS_AS(
        parse_response({{"id", "a"}, {"output", "x"}, {"truncated", false}, {"logprobs", {-1.0, -2.0, -3.0}}}, p),
        MalformedResponseError);
    CHECK_THROWS_AS(parse_response(json::array(), p), MalformedResponseError);
  }
}

TEST_CASE("addresses") {
  CHECK_THROWS_AS(connect_channel("nowhere"), ValidationError);
  CHECK_THROWS_AS(connect_channel("ftp:x"), ValidationError);
  CHECK_THROWS_AS(connect_channel("unix:/nonexistent/cmr.sock"), TransportError);
}

TEST_CASE("pipelined requests are matched by id") {
  RemoteGenerator gen(stub("echo"), {8, std::chrono::milliseconds(20000)});
  check_concurrent_routing(gen, 40);
  CHECK(gen.unrouted_lines() == 0);
}

TEST_CASE("out-of-order responses reach the right caller") {
  RemoteGenerator gen(stub("reverse 4"), {4, std::chrono::milliseconds(20000)});
  check_concurrent_routing(gen, 8);
}

TEST_CASE("unroutable lines are counted and skipped") {
  RemoteGenerator gen(stub("garbage"), {2, std::chrono::milliseconds(20000)});
  CHECK(gen.generate(instance("e", "hello"), {}).text == "hello");
  CHECK(gen.unrouted_lines() == 2);
}

TEST_CASE("log-probabilities are passed through") {
  RemoteGenerator gen(stub("echo"), {1, std::chrono::milliseconds(20000)});
  GenerationParams p;
  p.return_logprobs = true;
  const auto out = gen.generate(instance("e", "x"), p);
  REQUIRE(out.logprobs.has_value());
  CHECK(out.logprobs->at(0) == -0.5);
}

TEST_CASE("error classes") {
  RemoteGenerator err(stub("error"), {1, std::chrono::milliseconds(20000)});
  CHECK_THROWS_AS(err.generate(instance("e", "x"), {}), RemoteError);
  RemoteGenerator bad(stub("malformed"), {1, std::chrono::milliseconds(20000)});
  CHECK_THROWS_AS(bad.generate(instance("e", "x"), {}), MalformedResponseError);
  RemoteGenerator quiet(stub("silent"), {1, std::chrono::milliseconds(200)});
  CHECK_THROWS_AS(quiet.generate(instance("e", "x"), {}), TransportError);
}

TEST_CASE("a dropped connection fails the request and reconnects") {
  RemoteGenerator gen(stub("die-after 1"), {1, std::chrono::milliseconds(20000)});
  CHECK(gen.generate(instance("e", "a"), {}).text == "a");
  CHECK_THROWS_AS(gen.generate(instance("e", "b"), {}), TransportError);
  CHECK(gen.generate(instance("e", "c"), {}).text == "c");
}

TEST_CASE("pipeline retries transport failures") {
  SyntheticOptions opts;
  opts.eval_examples = 12;
  const auto corpus = make_synthetic_corpus(4, opts);
  const RuleSegmenter seg;
  const Pipeline pipeline(corpus.kb, seg);
  RunSettings settings;
  settings.top_m = 2;

  SUBCASE("every example eventually succeeds") {
    // Each sidecar process answers three requests before exiting; with one
    // request in flight every failure is followed by a fresh process.
    RemoteGenerator gen(stub("die-after 3"), {1, std::chrono::milliseconds(20000)});
    const auto result = pipeline.run(corpus.eval, gen, settings);
    CHECK(result.report.failures == 0);
    CHECK_FALSE(result.failure_threshold_exceeded);
  }
  SUBCASE("remote errors are not retried and count as failures") {
    RemoteGenerator gen(stub("error"), {2, std::chrono::milliseconds(20000)});
    const auto result = pipeline.run(corpus.eval, gen, settings);
    CHECK(result.report.failures == corpus.eval.size());
    CHECK(result.failure_threshold_exceeded);
    for (const auto& row : result.trace) {
      CHECK(row.failed);
      CHECK(row.error.find("model exploded") != std::string::npos);
    }
  }
}
