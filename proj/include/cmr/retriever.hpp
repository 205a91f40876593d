#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmr/corpus.hpp"
#include "json.hpp"

namespace cmr {

// Joins the two halves of a bigram surface. Word tokens never contain it.
inline constexpr char kPairSeparator = ' ';

struct Term {
  std::string surface;
  int arity = 1;

  bool operator==(const Term&) const = default;
};

// Lowercased word runs (split on anything non-alphanumeric), all unigrams in
// order followed by all adjacent bigrams in order.
std::vector<Term> tokenize_ngrams(std::string_view text);

// Term surface -> weight. Ordered so that dot products accumulate in a fixed
// term order regardless of hashing.
using SparseVector = std::map<std::string, double>;

struct RetrievalResult {
  std::string rule_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
};

struct RetrievalQuery {
  std::string scenario;
  std::string initial_question;
};

inline std::string query_text(std::string_view scenario, std::string_view initial_question) {
  std::string q(scenario);
  q += ' ';
  q += initial_question;
  return q;
}

// Unigram+bigram TF-IDF index with
//   tf  = ln(1 + count)
//   idf = max(0, ln((N - df + 0.5) / (df + 0.5)))
// and dot-product scoring. Immutable after construction.
class Index {
 public:
  static Index build(const KnowledgeBase& kb);

  std::size_t doc_count() const { return doc_ids_.size(); }
  std::size_t vocabulary_size() const { return df_.size(); }
  std::size_t document_frequency(std::string_view surface) const;
  double idf(std::string_view surface) const;
  std::span<const std::string> doc_ids() const { return doc_ids_; }
  const SparseVector& doc_vector(std::string_view rule_id) const;

  // Weights a text with the index statistics; terms outside the vocabulary drop out.
  SparseVector weigh(std::string_view text) const;

  std::vector<RetrievalResult> retrieve(std::string_view scenario, std::string_view initial_question,
                                        std::size_t m) const;
  std::vector<RetrievalResult> retrieve_text(std::string_view query, std::size_t m) const;

  nlohmann::json to_json() const;
  static Index from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Index load(const std::filesystem::path& path);

 private:
  struct Posting {
    std::uint32_t doc;
    double weight;
  };

  void finalize();
  std::vector<RetrievalResult> rank(std::span<const double> scores, std::size_t m) const;

  std::vector<std::string> doc_ids_;
  std::unordered_map<std::string, std::size_t> doc_pos_;
  std::unordered_map<std::string, std::size_t> df_;
  std::vector<SparseVector> doc_vectors_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

inline Index build_index(const KnowledgeBase& kb) { return Index::build(kb); }

// Batch retrieval. The parallel kernel splits queries across OpenMP threads;
// the serial version is the reference it is tested against.
std::vector<std::vector<RetrievalResult>> retrieve_batch(const Index& index, std::span<const RetrievalQuery> queries,
                                                         std::size_t m);
std::vector<std::vector<RetrievalResult>> retrieve_batch_serial(const Index& index,
                                                                std::span<const RetrievalQuery> queries,
                                                                std::size_t m);

}  // namespace cmr
