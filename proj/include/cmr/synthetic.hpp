#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "cmr/corpus.hpp"

namespace cmr {

struct SyntheticOptions {
  std::size_t rules = 40;
  std::size_t train_examples = 200;
  std::size_t eval_examples = 120;
  // Share of eval examples whose gold rule also backs training examples.
  double seen_fraction = 0.5;
  std::size_t max_history = 2;
};

struct SyntheticCorpus {
  KnowledgeBase kb;
  std::vector<Example> train;
  std::vector<Example> eval;  // tagged seen/unseen against train
};

// Seeded, platform-independent corpus of rule texts and dialogue states.
// Gold decisions cycle Yes/No/Inquire; gold questions are 3-8 words plus "?".
SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, const SyntheticOptions& opts = {});

// Scripted-generator table mapping each example id to its rendered gold target.
void write_gold_script(std::ostream& out, std::span<const Example> examples);

}  // namespace cmr
