#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cmr/corpus.hpp"
#include "cmr/serializer.hpp"
#include "json.hpp"

namespace cmr {

struct BleuOptions {
  // Non-canonical: replaces a zero n-gram precision with epsilon / total.
  bool smoothing = false;
  double epsilon = 0.1;
};

// Lowercase, whitespace split, with each token's trailing . , ! ? ; : split
// off as separate one-character tokens.
std::vector<std::string> bleu_tokenize(std::string_view text);

// Sentence BLEU against a single reference: geometric mean of clipped n-gram
// precisions for n = 1..max_n times exp(min(0, 1 - r/c)). Without smoothing
// any zero precision (including orders the candidate is too short for) gives 0.
double sentence_bleu(std::string_view candidate, std::string_view reference, int max_n,
                     const BleuOptions& opts = {});

struct GoldLabel {
  Decision decision = Decision::Inquire;
  std::optional<std::string> question;
};

struct PairedResult {
  std::string example_id;
  GoldLabel gold;
  ParsedPrediction pred;
  std::optional<bool> seen;
};

struct Accuracy {
  double micro = 0.0;
  double macro = 0.0;
  std::array<std::optional<double>, kDecisionCount> classwise{};  // absent for classes not in gold
};

// Throws DomainError on an empty batch.
Accuracy decision_accuracy(std::span<const PairedResult> results);

struct BleuF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Precision averages BLEU over Inquire predictions, recall over Inquire golds;
// a decision mismatch contributes 0. Throws DomainError on an empty batch.
BleuF1 f1_bleu(std::span<const PairedResult> results, int max_n, const BleuOptions& opts = {});

double harmonic_mean(double p, double r);

struct ConfusionMatrix {
  // counts[gold][pred]
  std::array<std::array<std::size_t, kDecisionCount>, kDecisionCount> counts{};

  std::size_t total() const;
  std::size_t trace() const;
  std::size_t gold_total(Decision gold) const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricSummary {
  std::size_t total = 0;
  Accuracy accuracy;
  BleuF1 bleu1;
  BleuF1 bleu4;
  ConfusionMatrix confusion;
  std::size_t parse_warnings = 0;
  std::size_t empty_reference_flags = 0;
};

struct EvalReport {
  MetricSummary full;
  std::optional<MetricSummary> seen;
  std::optional<MetricSummary> unseen;
  std::size_t untagged = 0;
  std::size_t failures = 0;
};

struct EvalOptions {
  BleuOptions bleu;
};

// Per-example BLEU scoring runs as an OpenMP kernel; sums are then taken in
// input order so the result does not depend on the thread count.
EvalReport evaluate(std::span<const PairedResult> results, const EvalOptions& opts = {});
// Single-threaded reference for evaluate().
EvalReport evaluate_serial(std::span<const PairedResult> results, const EvalOptions& opts = {});

// Fixed key names; numbers rounded to 6 decimals.
nlohmann::json report_to_json(const EvalReport& report);
nlohmann::json summary_to_json(const MetricSummary& summary);
EvalReport report_from_json(const nlohmann::json& j);

// One metric cell of a report table.
enum class TableMetric { Micro, Macro, F1Bleu1, F1Bleu4 };
std::string_view to_string(TableMetric m);
double metric_value(const MetricSummary& s, TableMetric m);

// Rows Full-Dataset / Seen / Unseen; column groups Micro, Macro, F1_BLEU1,
// F1_BLEU4, each with one column per labelled report.
std::string format_report_table(std::span<const std::pair<std::string, EvalReport>> columns,
                                std::string_view parameter = "value");

}  // namespace cmr
