#include "cmr/synthetic.hpp"

#include <ostream>
#include <random>
#include <string>

#include "cmr/serializer.hpp"
#include "json.hpp"

namespace cmr {

namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  bool chance(double p) { return static_cast<double>(rng_() >> 11) * 0x1.0p-53 < p; }

  std::string word() {
    static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static constexpr const char* kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    std::string w;
    const std::size_t syllables = 2 + below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += kOnsets[below(std::size(kOnsets))];
      w += kNuclei[below(std::size(kNuclei))];
    }
    return w;
  }

  std::string phrase(const std::vector<std::string>& pool, std::size_t words) {
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
      if (i) out += ' ';
      out += pool[below(pool.size())];
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
};

struct RuleVocab {
  std::vector<std::string> words;
};

std::string rule_body(Draw& d, const RuleVocab& v) {
  std::string body = "You can get " + d.phrase(v.words, 2) + " if you " + d.phrase(v.words, 3) + ", but you must " +
                     d.phrase(v.words, 2) + ".";
  if (d.chance(0.5)) body += " This covers " + d.phrase(v.words, 3) + ", and " + d.phrase(v.words, 2) + ".";
  if (d.chance(0.6)) {
    body += "\nYou must also:";
    const std::size_t items = 2 + d.below(2);
    for (std::size_t i = 0; i < items; ++i) body += "\n- " + d.phrase(v.words, 2 + d.below(3));
  }
  return body;
}

Example make_example(Draw& d, const std::string& id, const std::string& rule_id, const RuleVocab& v,
                     std::size_t ordinal, std::size_t max_history) {
  Example e;
  e.id = id;
  e.tree_id = "tree-" + rule_id;
  e.gold_rule_id = rule_id;
  e.scenario = "I " + d.phrase(v.words, 3) + " and my " + d.phrase(v.words, 2) + ".";
  e.initial_question = "Can I get " + d.phrase(v.words, 2) + "?";
  const std::size_t turns = d.below(max_history + 1);
  for (std::size_t t = 0; t < turns; ++t)
    e.history.push_back({"Do you " + d.phrase(v.words, 2) + "?", d.chance(0.5) ? "Yes" : "No"});
  switch (ordinal % 3) {
    case 0: e.gold_decision = Decision::Yes; break;
    case 1: e.gold_decision = Decision::No; break;
    default:
      e.gold_decision = Decision::Inquire;
      e.gold_question = "Do you " + d.phrase(v.words, 1 + d.below(6)) + "?";
      break;
  }
  return e;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, const SyntheticOptions& opts) {
  Draw d(seed);
  SyntheticCorpus corpus;
  const std::size_t n_rules = std::max<std::size_t>(opts.rules, 2);
  std::vector<RuleVocab> vocab(n_rules);
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < n_rules; ++r) {
    for (std::size_t k = 0; k < 8; ++k) vocab[r].words.push_back(d.word());
    ids.push_back("rule-" + std::to_string(1000 + r));
    corpus.kb.add({ids.back(), "synthetic", rule_body(d, vocab[r])});
  }
  // First half backs training; the rest only appears at evaluation time.
  const std::size_t train_rules = n_rules / 2;
  for (std::size_t i = 0; i < opts.train_examples; ++i) {
    const std::size_t r = d.below(train_rules);
    corpus.train.push_back(make_example(d, "train-" + std::to_string(100000 + i), ids[r], vocab[r], i, opts.max_history));
  }
  for (std::size_t i = 0; i < opts.eval_examples; ++i) {
    const bool seen = d.chance(opts.seen_fraction);
    const std::size_t r = seen ? d.below(train_rules) : train_rules + d.below(n_rules - train_rules);
    corpus.eval.push_back(make_example(d, "eval-" + std::to_string(100000 + i), ids[r], vocab[r], i, opts.max_history));
  }
  tag_seen_unseen(corpus.eval, collect_rule_ids(corpus.train));
  return corpus;
}

void write_gold_script(std::ostream& out, std::span<const Example> examples) {
  for (const auto& e : examples)
    out << nlohmann::json{{"id", e.id}, {"output", render(build_target(e, true))}}.dump() << '\n';
}

}  // namespace cmr
