#include "cmr/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cmr/error.hpp"
#include "cmr/text.hpp"

namespace cmr {

using nlohmann::json;

namespace {

constexpr std::string_view kIndexFormat = "cmr-tfidf-index";
constexpr int kIndexVersion = 1;

double tf_weight(std::size_t count) { return std::log(1.0 + static_cast<double>(count)); }

double idf_weight(std::size_t n, std::size_t df) {
  const double nd = static_cast<double>(n);
  const double dd = static_cast<double>(df);
  return std::max(0.0, std::log((nd - dd + 0.5) / (dd + 0.5)));
}

std::map<std::string, std::size_t> term_counts(std::string_view text) {
  std::map<std::string, std::size_t> counts;
  for (auto& t : tokenize_ngrams(text)) ++counts[std::move(t.surface)];
  return counts;
}

}  // namespace

std::vector<Term> tokenize_ngrams(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !text::is_word_char(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && text::is_word_char(text[i])) ++i;
    if (i > start) words.push_back(text::to_lower(text.substr(start, i - start)));
  }
  std::vector<Term> terms;
  terms.reserve(words.size() * 2);
  for (const auto& w : words) terms.push_back({w, 1});
  for (std::size_t k = 1; k < words.size(); ++k) {
    std::string pair = words[k - 1];
    pair += kPairSeparator;
    pair += words[k];
    terms.push_back({std::move(pair), 2});
  }
  return terms;
}

Index Index::build(const KnowledgeBase& kb) {
  if (kb.empty()) throw ValidationError("cannot index an empty knowledge base");
  Index index;
  std::vector<std::map<std::string, std::size_t>> counts;
  counts.reserve(kb.count());
  for (const auto& rule : kb.rules()) {
    index.doc_ids_.push_back(rule.id);
    counts.push_back(term_counts(rule.body));
    for (const auto& [term, _] : counts.back()) ++index.df_[term];
  }
  const std::size_t n = index.doc_ids_.size();
  index.doc_vectors_.resize(n);
  for (std::size_t d = 0; d < n; ++d) {
    for (const auto& [term, c] : counts[d])
      index.doc_vectors_[d].emplace(term, tf_weight(c) * idf_weight(n, index.df_.at(term)));
  }
  index.finalize();
  return index;
}

void Index::finalize() {
  doc_pos_.clear();
  postings_.clear();
  for (std::size_t d = 0; d < doc_ids_.size(); ++d) {
    doc_pos_.emplace(doc_ids_[d], d);
    for (const auto& [term, w] : doc_vectors_[d]) {
      if (w > 0.0) postings_[term].push_back({static_cast<std::uint32_t>(d), w});
    }
  }
}

std::size_t Index::document_frequency(std::string_view surface) const {
  auto it = df_.find(std::string(surface));
  return it == df_.end() ? 0 : it->second;
}

double Index::idf(std::string_view surface) const {
  const std::size_t df = document_frequency(surface);
  return df == 0 ? 0.0 : idf_weight(doc_count(), df);
}

const SparseVector& Index::doc_vector(std::string_view rule_id) const {
  auto it = doc_pos_.find(std::string(rule_id));
  if (it == doc_pos_.end()) throw ValidationError("rule '" + std::string(rule_id) + "' is not indexed");
  return doc_vectors_[it->second];
}

SparseVector Index::weigh(std::string_view text) const {
  SparseVector v;
  for (const auto& [term, c] : term_counts(text)) {
    auto it = df_.find(term);
    if (it == df_.end()) continue;
    v.emplace(term, tf_weight(c) * idf_weight(doc_count(), it->second));
  }
  return v;
}

std::vector<RetrievalResult> Index::retrieve(std::string_view scenario, std::string_view initial_question,
                                             std::size_t m) const {
  return retrieve_text(query_text(scenario, initial_question), m);
}

std::vector<RetrievalResult> Index::retrieve_text(std::string_view query, std::size_t m) const {
  if (m == 0) throw DomainError("retrieve: m must be positive");
  std::vector<double> scores(doc_count(), 0.0);
  for (const auto& [term, qw] : weigh(query)) {
    if (qw == 0.0) continue;
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    for (const auto& p : it->second) scores[p.doc] += qw * p.weight;
  }
  return rank(scores, m);
}

std::vector<RetrievalResult> Index::rank(std::span<const double> scores, std::size_t m) const {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t k = std::min(m, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return doc_ids_[a] < doc_ids_[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  std::vector<RetrievalResult> out;
  out.reserve(k);
  for (std::size_t r = 0; r < k; ++r) out.push_back({doc_ids_[order[r]], scores[order[r]], r + 1});
  return out;
}

json Index::to_json() const {
  json docs = json::array();
  for (std::size_t d = 0; d < doc_ids_.size(); ++d) {
    json vec = json::object();
    for (const auto& [term, w] : doc_vectors_[d]) vec[term] = w;
    docs.push_back({{"id", doc_ids_[d]}, {"vector", std::move(vec)}});
  }
  json df = json::object();
  for (const auto& [term, count] : df_) df[term] = count;
  return {{"format", kIndexFormat}, {"version", kIndexVersion}, {"doc_count", doc_ids_.size()},
          {"df", std::move(df)},     {"docs", std::move(docs)}};
}

Index Index::from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kIndexFormat) throw ValidationError("not a TF-IDF index dump");
    if (j.at("version").get<int>() != kIndexVersion)
      throw ValidationError("unsupported index version " + j.at("version").dump());
    Index index;
    for (const auto& [term, count] : j.at("df").items()) index.df_.emplace(term, count.get<std::size_t>());
    for (const auto& doc : j.at("docs")) {
      index.doc_ids_.push_back(doc.at("id").get<std::string>());
      SparseVector v;
      for (const auto& [term, w] : doc.at("vector").items()) v.emplace(term, w.get<double>());
      index.doc_vectors_.push_back(std::move(v));
    }
    if (index.doc_ids_.size() != j.at("doc_count").get<std::size_t>())
      throw ValidationError("index doc_count does not match stored documents");
    index.finalize();
    return index;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed index dump: ") + e.what());
  }
}

void Index::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

Index Index::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  return from_json(j);
}

std::vector<std::vector<RetrievalResult>> retrieve_batch(const Index& index, std::span<const RetrievalQuery> queries,
                                                         std::size_t m) {
  if (m == 0) throw DomainError("retrieve: m must be positive");
  std::vector<std::vector<RetrievalResult>> out(queries.size());
  const auto n = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    out[i] = index.retrieve(queries[i].scenario, queries[i].initial_question, m);
  return out;
}

std::vector<std::vector<RetrievalResult>> retrieve_batch_serial(const Index& index,
                                                                std::span<const RetrievalQuery> queries,
                                                                std::size_t m) {
  std::vector<std::vector<RetrievalResult>> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(index.retrieve(q.scenario, q.initial_question, m));
  return out;
}

}  // namespace cmr
