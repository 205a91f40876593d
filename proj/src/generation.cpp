#include "cmr/generation.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "cmr/error.hpp"
#include "cmr/text.hpp"
#include "json.hpp"

namespace cmr {

void GenerationParams::validate() const {
  if (max_length < 1) throw ValidationError("max_length must be positive");
  if (num_beams < 1) throw ValidationError("num_beams must be positive");
}

ScriptedGenerator::ScriptedGenerator(std::string default_output) : default_output_(std::move(default_output)) {}

void ScriptedGenerator::add_by_input(std::string input, std::string output) {
  by_input_.insert_or_assign(std::move(input), std::move(output));
}

void ScriptedGenerator::add_by_id(std::string example_id, std::string output) {
  by_id_.insert_or_assign(std::move(example_id), std::move(output));
}

ScriptedGenerator ScriptedGenerator::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  ScriptedGenerator gen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    try {
      if (j.contains("default")) {
        gen.default_output_ = j.at("default").get<std::string>();
      } else if (j.contains("input")) {
        gen.add_by_input(j.at("input").get<std::string>(), j.at("output").get<std::string>());
      } else {
        gen.add_by_id(j.at("id").get<std::string>(), j.at("output").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad script entry: ") + e.what(), line_no);
    }
  }
  return gen;
}

ModelOutput ScriptedGenerator::generate(const SerializedInstance& instance, const GenerationParams& params) {
  params.validate();
  ModelOutput out;
  if (auto it = by_input_.find(instance.input_text); it != by_input_.end()) {
    out.text = it->second;
  } else if (auto jt = by_id_.find(instance.example_id); jt != by_id_.end()) {
    out.text = jt->second;
  } else {
    out.text = default_output_;
    out.defaulted = true;
  }
  auto words = text::split_whitespace(out.text);
  if (words.size() > static_cast<std::size_t>(params.max_length)) {
    std::vector<std::string> kept(words.begin(), words.begin() + params.max_length);
    out.text = text::join(kept, " ");
    out.truncated = true;
  }
  return out;
}

std::size_t ScriptedGenerator::max_in_flight() const {
  return std::max(1u, std::thread::hardware_concurrency());
}

void StepDistribution::validate() const {
  double mass = 0.0;
  for (const auto& [token, lp] : logprobs) {
    if (!std::isfinite(lp)) throw DomainError("non-finite log-probability for '" + token + "'");
    mass += std::exp(lp);
  }
  if (mass > 1.0 + 1e-6) throw DomainError("step distribution mass exceeds 1");
}

double nll_loss(std::span<const StepDistribution> steps, std::span<const std::string> target) {
  if (steps.size() != target.size()) throw DomainError("nll_loss: step and target lengths differ");
  double loss = 0.0;
  for (std::size_t j = 0; j < steps.size(); ++j) {
    steps[j].validate();
    auto it = steps[j].logprobs.find(target[j]);
    if (it == steps[j].logprobs.end())
      throw DomainError("nll_loss: target token '" + target[j] + "' absent at step " + std::to_string(j));
    loss -= it->second;
  }
  // -0.0 when every step is certain.
  return loss == 0.0 ? 0.0 : loss;
}

double sequence_nll(std::span<const double> logprobs) {
  double loss = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw DomainError("sequence_nll: non-finite log-probability");
    loss -= lp;
  }
  return loss == 0.0 ? 0.0 : loss;
}

}  // namespace cmr
