#pragma once

// Dense brute-force TF-IDF ranking. Shares no code with the index: it keeps
// its own tokenizer and materializes one vector per document over the full
// sorted vocabulary.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline std::vector<std::string> ngram_terms(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  std::vector<std::string> terms = words;
  for (std::size_t i = 0; i + 1 < words.size(); ++i) terms.push_back(words[i] + " " + words[i + 1]);
  return terms;
}

struct Ranked {
  std::string id;
  double score;
};

inline std::vector<Ranked> rank(const std::vector<std::pair<std::string, std::string>>& docs,
                                const std::string& query, std::size_t m) {
  const std::size_t n = docs.size();
  std::vector<std::map<std::string, int>> counts(n);
  std::set<std::string> vocab;
  for (std::size_t d = 0; d < n; ++d) {
    for (const auto& t : ngram_terms(docs[d].second)) {
      ++counts[d][t];
      vocab.insert(t);
    }
  }
  std::vector<std::string> terms(vocab.begin(), vocab.end());
  std::vector<double> idf(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    int df = 0;
    for (std::size_t d = 0; d < n; ++d) df += counts[d].count(terms[k]) ? 1 : 0;
    idf[k] = std::max(0.0, std::log((static_cast<double>(n) - df + 0.5) / (df + 0.5)));
  }
  std::map<std::string, int> qcounts;
  for (const auto& t : ngram_terms(query)) ++qcounts[t];

  std::vector<double> qvec(terms.size(), 0.0);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    auto it = qcounts.find(terms[k]);
    if (it != qcounts.end()) qvec[k] = std::log(1.0 + it->second) * idf[k];
  }
  std::vector<Ranked> out;
  for (std::size_t d = 0; d < n; ++d) {
    double s = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      auto it = counts[d].find(terms[k]);
      const double w = it == counts[d].end() ? 0.0 : std::log(1.0 + it->second) * idf[k];
      s += qvec[k] * w;
    }
    out.push_back({docs[d].first, s});
  }
  std::sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  out.resize(std::min(m, n));
  return out;
}

}  // namespace oracle
