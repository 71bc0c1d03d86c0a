#pragma once

#include <cstdint>

#include "pbmrc/corpus.hpp"
#include "pbmrc/prompting.hpp"
#include "pbmrc/tokenizer.hpp"

namespace pbmrc {

// Deterministic templated corpus over two labels (Drug, ADR); every word
// is covered by make_synthetic_vocab so tokenization is UNK-free.
AnnotatedCorpus make_synthetic_corpus(std::uint64_t seed, std::size_t n_sentences);

Vocabulary make_synthetic_vocab();

PromptRegistry make_synthetic_registry(PromptMode mode = PromptMode::Hard);

}  // namespace pbmrc
