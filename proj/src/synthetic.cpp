#include "pbmrc/synthetic.hpp"

#include <sstream>
#include <array>

#include "pbmrc/rng.hpp"

namespace pbmrc {

namespace {

const std::array<const char*, 8> kDrugs = {"aspirin",   "ibuprofen", "paracetamol", "insulin",
                                           "metformin", "warfarin",  "codeine",     "morphine"};
const std::array<const char*, 8> kAdrs = {"nausea", "headache", "dizziness", "rash",
                                          "fatigue", "vomiting", "insomnia",  "fever"};

struct Slot {
  std::string text;
  std::size_t drug_pos;  // index of the drug word slot (word index)
  std::size_t adr_pos;
};

// word-level templates; %D and %A mark entity slots
const std::array<const char*, 4> kTemplates = {
    "the patient took %D and reported %A",
    "%D caused severe %A in the patient",
    "after taking %D the patient developed %A",
    "doctors prescribed %D despite known %A",
};

}  // namespace

AnnotatedCorpus make_synthetic_corpus(std::uint64_t seed, std::size_t n_sentences) {
  Rng rng(seed, 0x5f47);
  AnnotatedCorpus corpus;
  corpus.label_set.labels = {"ADR", "Drug"};
  for (std::size_t i = 0; i < n_sentences; ++i) {
    const std::string tmpl = kTemplates[rng.uniform_int(kTemplates.size())];
    const std::string drug = kDrugs[rng.uniform_int(kDrugs.size())];
    const std::string adr = kAdrs[rng.uniform_int(kAdrs.size())];

    Sentence s;
    s.id = "syn" + std::to_string(i);
    std::string text;
    std::size_t pos = 0;
    std::istringstream words(tmpl);
    std::string w;
    while (words >> w) {
      if (!text.empty()) {
        text += ' ';
        ++pos;
      }
      std::string word = w;
      std::string label;
      if (w == "%D") {
        word = drug;
        label = "Drug";
      } else if (w == "%A") {
        word = adr;
        label = "ADR";
      }
      if (!label.empty()) s.mentions.push_back({pos, pos + word.size(), label});
      text += word;
      pos += word.size();  // all synthetic words are ASCII
    }
    s.text = std::move(text);
    corpus.sentences.push_back(std::move(s));
  }
  validate_corpus(corpus);
  return corpus;
}

Vocabulary make_synthetic_vocab() {
  std::vector<std::string> tokens = {"the",     "patient",  "took",      "and",   "reported",
                                     "caused",  "severe",   "in",        "after", "taking",
                                     "developed", "doctors", "prescribed", "despite", "known",
                                     "find",    "all",      "entities",  "text",  "ADR",
                                     "Drug"};
  for (const char* d : kDrugs) tokens.push_back(d);
  for (const char* a : kAdrs) tokens.push_back(a);
  return make_vocab(tokens);
}

PromptRegistry make_synthetic_registry(PromptMode mode) {
  LabelSet ls{{"ADR", "Drug"}};
  return default_registry(ls, {}, mode);
}

}  // namespace pbmrc
