#include "cmr/metrics.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "cmr/error.hpp"
#include "cmr/text.hpp"

namespace cmr {

using nlohmann::json;

namespace {

bool is_terminal_punct(char c) { return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':'; }

using NgramCounts = std::map<std::string, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

std::string lower_name(Decision d) { return text::to_lower(to_string(d)); }

struct ExampleScore {
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  bool empty_reference = false;
};

ExampleScore score_example(const PairedResult& r, const BleuOptions& opts) {
  ExampleScore s;
  if (r.pred.decision != Decision::Inquire || r.gold.decision != Decision::Inquire) return s;
  const std::string& ref = r.gold.question ? *r.gold.question : std::string();
  s.empty_reference = text::trim(ref).empty();
  const std::string cand = r.pred.question.value_or("");
  s.bleu1 = sentence_bleu(cand, ref, 1, opts);
  s.bleu4 = sentence_bleu(cand, ref, 4, opts);
  return s;
}

Accuracy accuracy_from_confusion(const ConfusionMatrix& m) {
  Accuracy a;
  const std::size_t total = m.total();
  if (total == 0) return a;
  a.micro = static_cast<double>(m.trace()) / static_cast<double>(total);
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kDecisionCount; ++c) {
    const std::size_t row = m.gold_total(decision_at(c));
    if (row == 0) continue;
    a.classwise[c] = static_cast<double>(m.counts[c][c]) / static_cast<double>(row);
    sum += *a.classwise[c];
    ++classes;
  }
  a.macro = sum / static_cast<double>(classes);
  return a;
}

MetricSummary summarize(std::span<const PairedResult> results, std::span<const ExampleScore> scores,
                        const std::vector<std::size_t>& members) {
  MetricSummary s;
  s.total = members.size();
  double b1 = 0.0, b4 = 0.0;
  std::size_t pred_inquire = 0, gold_inquire = 0;
  for (std::size_t i : members) {
    const auto& r = results[i];
    ++s.confusion.counts[index_of(r.gold.decision)][index_of(r.pred.decision)];
    if (r.pred.parse_warning) ++s.parse_warnings;
    if (scores[i].empty_reference) ++s.empty_reference_flags;
    pred_inquire += r.pred.decision == Decision::Inquire;
    gold_inquire += r.gold.decision == Decision::Inquire;
    b1 += scores[i].bleu1;
    b4 += scores[i].bleu4;
  }
  s.accuracy = accuracy_from_confusion(s.confusion);
  auto fill = [&](BleuF1& out, double sum) {
    out.precision = pred_inquire ? sum / static_cast<double>(pred_inquire) : 0.0;
    out.recall = gold_inquire ? sum / static_cast<double>(gold_inquire) : 0.0;
    out.f1 = harmonic_mean(out.precision, out.recall);
  };
  fill(s.bleu1, b1);
  fill(s.bleu4, b4);
  return s;
}

EvalReport assemble(std::span<const PairedResult> results, std::span<const ExampleScore> scores) {
  std::vector<std::size_t> all, seen, unseen;
  for (std::size_t i = 0; i < results.size(); ++i) {
    all.push_back(i);
    if (results[i].seen) (*results[i].seen ? seen : unseen).push_back(i);
  }
  EvalReport report;
  report.full = summarize(results, scores, all);
  if (!seen.empty()) report.seen = summarize(results, scores, seen);
  if (!unseen.empty()) report.unseen = summarize(results, scores, unseen);
  report.untagged = results.size() - seen.size() - unseen.size();
  return report;
}

json bleu_json(const BleuF1& b) {
  return {{"precision", round6(b.precision)}, {"recall", round6(b.recall)}, {"f1", round6(b.f1)}};
}

BleuF1 bleu_from_json(const json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

MetricSummary summary_from_json(const json& j) {
  MetricSummary s;
  s.total = j.at("total").get<std::size_t>();
  s.accuracy.micro = j.at("micro").get<double>();
  s.accuracy.macro = j.at("macro").get<double>();
  for (std::size_t c = 0; c < kDecisionCount; ++c) {
    const auto& cw = j.at("classwise");
    auto it = cw.find(lower_name(decision_at(c)));
    if (it != cw.end() && !it->is_null()) s.accuracy.classwise[c] = it->get<double>();
  }
  s.bleu1 = bleu_from_json(j.at("f1_bleu1"));
  s.bleu4 = bleu_from_json(j.at("f1_bleu4"));
  if (auto conf = j.find("confusion"); conf != j.end()) {
    for (std::size_t g = 0; g < kDecisionCount; ++g) {
      auto row = conf->find(lower_name(decision_at(g)));
      if (row == conf->end()) continue;
      for (std::size_t p = 0; p < kDecisionCount; ++p) {
        auto cell = row->find(lower_name(decision_at(p)));
        if (cell != row->end()) s.confusion.counts[g][p] = cell->get<std::size_t>();
      }
    }
  }
  s.parse_warnings = j.value("parse_warnings", std::size_t{0});
  s.empty_reference_flags = j.value("empty_reference_flags", std::size_t{0});
  return s;
}

}  // namespace

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto word : text::split_whitespace(text)) {
    std::size_t core = word.size();
    while (core > 0 && is_terminal_punct(word[core - 1])) --core;
    if (core > 0) out.push_back(text::to_lower(word.substr(0, core)));
    for (std::size_t i = core; i < word.size(); ++i) out.emplace_back(1, word[i]);
  }
  return out;
}

double sentence_bleu(std::string_view candidate, std::string_view reference, int max_n, const BleuOptions& opts) {
  if (max_n < 1) throw DomainError("sentence_bleu: max_n must be at least 1");
  const auto cand = bleu_tokenize(candidate);
  if (cand.empty()) return 0.0;
  const auto ref = bleu_tokenize(reference);
  double product = 1.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto nn = static_cast<std::size_t>(n);
    const auto cand_counts = count_ngrams(cand, nn);
    const auto ref_counts = count_ngrams(ref, nn);
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      if (auto it = ref_counts.find(gram); it != ref_counts.end()) matched += std::min(c, it->second);
    }
    double p;
    if (matched == 0) {
      if (!opts.smoothing) return 0.0;
      p = opts.epsilon / static_cast<double>(std::max<std::size_t>(total, 1));
    } else {
      p = static_cast<double>(matched) / static_cast<double>(total);
    }
    product *= p;
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = std::exp(std::min(0.0, 1.0 - r / c));
  return bp * std::pow(product, 1.0 / max_n);
}

Accuracy decision_accuracy(std::span<const PairedResult> results) {
  if (results.empty()) throw DomainError("decision_accuracy: empty batch");
  std::array<std::size_t, kDecisionCount> gold{}, correct{};
  std::size_t hits = 0;
  for (const auto& r : results) {
    const std::size_t g = index_of(r.gold.decision);
    ++gold[g];
    if (r.pred.decision == r.gold.decision) {
      ++correct[g];
      ++hits;
    }
  }
  Accuracy a;
  a.micro = static_cast<double>(hits) / static_cast<double>(results.size());
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kDecisionCount; ++c) {
    if (gold[c] == 0) continue;
    a.classwise[c] = static_cast<double>(correct[c]) / static_cast<double>(gold[c]);
    sum += *a.classwise[c];
    ++classes;
  }
  a.macro = sum / static_cast<double>(classes);
  return a;
}

BleuF1 f1_bleu(std::span<const PairedResult> results, int max_n, const BleuOptions& opts) {
  if (results.empty()) throw DomainError("f1_bleu: empty batch");
  double p_sum = 0.0, r_sum = 0.0;
  std::size_t p_count = 0, r_count = 0;
  for (const auto& r : results) {
    const bool pred_inquire = r.pred.decision == Decision::Inquire;
    const bool gold_inquire = r.gold.decision == Decision::Inquire;
    const double b = pred_inquire && gold_inquire
                         ? sentence_bleu(r.pred.question.value_or(""), r.gold.question.value_or(""), max_n, opts)
                         : 0.0;
    if (pred_inquire) {
      p_sum += b;
      ++p_count;
    }
    if (gold_inquire) {
      r_sum += b;
      ++r_count;
    }
  }
  BleuF1 out;
  out.precision = p_count ? p_sum / static_cast<double>(p_count) : 0.0;
  out.recall = r_count ? r_sum / static_cast<double>(r_count) : 0.0;
  out.f1 = harmonic_mean(out.precision, out.recall);
  return out;
}

double harmonic_mean(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts)
    for (std::size_t c : row) t += c;
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < kDecisionCount; ++i) t += counts[i][i];
  return t;
}

std::size_t ConfusionMatrix::gold_total(Decision gold) const {
  std::size_t t = 0;
  for (std::size_t c : counts[index_of(gold)]) t += c;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t g = 0; g < kDecisionCount; ++g)
    for (std::size_t p = 0; p < kDecisionCount; ++p) counts[g][p] += other.counts[g][p];
  return *this;
}

EvalReport evaluate(std::span<const PairedResult> results, const EvalOptions& opts) {
  std::vector<ExampleScore> scores(results.size());
  const auto n = static_cast<std::ptrdiff_t>(results.size());
#pragma omp parallel for schedule(dynamic, 32)
  for (std::ptrdiff_t i = 0; i < n; ++i) scores[i] = score_example(results[i], opts.bleu);
  return assemble(results, scores);
}

EvalReport evaluate_serial(std::span<const PairedResult> results, const EvalOptions& opts) {
  std::vector<ExampleScore> scores;
  scores.reserve(results.size());
  for (const auto& r : results) scores.push_back(score_example(r, opts.bleu));
  return assemble(results, scores);
}

json summary_to_json(const MetricSummary& s) {
  json classwise = json::object();
  for (std::size_t c = 0; c < kDecisionCount; ++c) {
    const Decision d = decision_at(c);
    if (d == Decision::Irrelevant && !s.accuracy.classwise[c]) continue;
    classwise[lower_name(d)] = s.accuracy.classwise[c] ? json(round6(*s.accuracy.classwise[c])) : json(nullptr);
  }
  json confusion = json::object();
  for (std::size_t g = 0; g < kDecisionCount; ++g) {
    json row = json::object();
    for (std::size_t p = 0; p < kDecisionCount; ++p) row[lower_name(decision_at(p))] = s.confusion.counts[g][p];
    confusion[lower_name(decision_at(g))] = std::move(row);
  }
  return {{"total", s.total},
          {"micro", round6(s.accuracy.micro)},
          {"macro", round6(s.accuracy.macro)},
          {"classwise", std::move(classwise)},
          {"f1_bleu1", bleu_json(s.bleu1)},
          {"f1_bleu4", bleu_json(s.bleu4)},
          {"confusion", std::move(confusion)},
          {"parse_warnings", s.parse_warnings},
          {"empty_reference_flags", s.empty_reference_flags}};
}

json report_to_json(const EvalReport& report) {
  json j = summary_to_json(report.full);
  j["subsets"] = {{"seen", report.seen ? summary_to_json(*report.seen) : json(nullptr)},
                  {"unseen", report.unseen ? summary_to_json(*report.unseen) : json(nullptr)}};
  j["untagged"] = report.untagged;
  j["failures"] = report.failures;
  return j;
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.full = summary_from_json(j);
    if (auto subsets = j.find("subsets"); subsets != j.end()) {
      if (auto s = subsets->find("seen"); s != subsets->end() && !s->is_null()) r.seen = summary_from_json(*s);
      if (auto s = subsets->find("unseen"); s != subsets->end() && !s->is_null()) r.unseen = summary_from_json(*s);
    }
    r.untagged = j.value("untagged", std::size_t{0});
    r.failures = j.value("failures", std::size_t{0});
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

std::string_view to_string(TableMetric m) {
  switch (m) {
    case TableMetric::Micro: return "Micro";
    case TableMetric::Macro: return "Macro";
    case TableMetric::F1Bleu1: return "F1_BLEU1";
    case TableMetric::F1Bleu4: return "F1_BLEU4";
  }
  return "?";
}

double metric_value(const MetricSummary& s, TableMetric m) {
  switch (m) {
    case TableMetric::Micro: return s.accuracy.micro;
    case TableMetric::Macro: return s.accuracy.macro;
    case TableMetric::F1Bleu1: return s.bleu1.f1;
    case TableMetric::F1Bleu4: return s.bleu4.f1;
  }
  return 0.0;
}

std::string format_report_table(std::span<const std::pair<std::string, EvalReport>> columns,
                                 std::string_view parameter) {
  constexpr TableMetric kMetrics[] = {TableMetric::Micro, TableMetric::Macro, TableMetric::F1Bleu1,
                                      TableMetric::F1Bleu4};
  std::ostringstream out;
  out << "metric";
  for (auto m : kMetrics)
    for (std::size_t c = 0; c < columns.size(); ++c) out << '\t' << to_string(m);
  out << '\n' << parameter;
  for (std::size_t m = 0; m < std::size(kMetrics); ++m)
    for (const auto& col : columns) out << '\t' << col.first;
  out << '\n';

  using Getter = const std::optional<MetricSummary>& (*)(const EvalReport&);
  const std::pair<const char*, Getter> rows[] = {
      {"Full-Dataset", nullptr},
      {"Seen", [](const EvalReport& r) -> const std::optional<MetricSummary>& { return r.seen; }},
      {"Unseen", [](const EvalReport& r) -> const std::optional<MetricSummary>& { return r.unseen; }},
  };
  for (const auto& [name, get] : rows) {
    out << name;
    for (auto m : kMetrics) {
      for (const auto& col : columns) {
        const MetricSummary* s = get ? (get(col.second) ? &*get(col.second) : nullptr) : &col.second.full;
        out << '\t' << (s ? text::format_fixed(round6(metric_value(*s, m))) : std::string("-"));
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cmr
