#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmr/serializer.hpp"

namespace cmr {

struct GenerationParams {
  int max_length = 30;
  int num_beams = 5;
  bool return_logprobs = false;

  void validate() const;
};

struct ModelOutput {
  std::string text;
  std::optional<std::vector<std::string>> tokens;
  std::optional<std::vector<double>> logprobs;  // natural log
  bool truncated = false;
  bool defaulted = false;  // scripted generator had no entry for the input
};

// Text-to-text model behind an opaque interface. generate() may be called
// from several threads at once, up to max_in_flight().
class Generator {
 public:
  virtual ~Generator() = default;
  virtual ModelOutput generate(const SerializedInstance& instance, const GenerationParams& params) = 0;
  virtual std::size_t max_in_flight() const { return 1; }
};

// Table-driven stand-in for a model. Entries are matched on the exact input
// text first, then on the example id. Output is cut to max_length
// whitespace-delimited words, reporting truncated=true when that happens.
class ScriptedGenerator final : public Generator {
 public:
  explicit ScriptedGenerator(std::string default_output = "Inquire");

  void add_by_input(std::string input, std::string output);
  void add_by_id(std::string example_id, std::string output);

  // JSONL lines of {"input": str, "output": str} or {"id": str, "output": str};
  // an optional {"default": str} line replaces the default output.
  static ScriptedGenerator from_file(const std::filesystem::path& path);

  ModelOutput generate(const SerializedInstance& instance, const GenerationParams& params) override;
  std::size_t max_in_flight() const override;

  std::size_t size() const { return by_input_.size() + by_id_.size(); }

 private:
  std::string default_output_;
  std::unordered_map<std::string, std::string> by_input_;
  std::unordered_map<std::string, std::string> by_id_;
};

// Log-probabilities over candidate tokens at one decoding step.
struct StepDistribution {
  std::unordered_map<std::string, double> logprobs;

  // Throws DomainError unless every entry is finite and sum(exp) <= 1 + 1e-6.
  void validate() const;
};

// -sum_j log P(y_j | y_<j, I) in nats. Throws DomainError when a target token
// is missing from its step or the lengths differ.
double nll_loss(std::span<const StepDistribution> steps, std::span<const std::string> target);

// Same objective from per-token log-probabilities reported by a generator.
double sequence_nll(std::span<const double> logprobs);

}  // namespace cmr
