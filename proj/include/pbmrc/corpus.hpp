#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pbmrc/util.hpp"

namespace pbmrc {

// Ordered set of entity label names. Order defines the label index used
// everywhere downstream.
struct LabelSet {
  std::vector<std::string> labels;

  bool contains(const std::string& label) const;
  std::size_t index_of(const std::string& label) const;  // throws if absent
  void validate() const;  // unique, non-empty, no whitespace
};

// A labeled character span inside one sentence. Offsets count Unicode
// scalar values; end is exclusive. Overlapping and nested mentions are
// permitted.
struct EntityMention {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;

  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

struct Sentence {
  std::string id;
  std::string text;  // UTF-8
  std::vector<EntityMention> mentions;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

enum class SplitTag { Train, Dev, Test, Unsplit };

struct AnnotatedCorpus {
  LabelSet label_set;
  std::vector<Sentence> sentences;
  SplitTag split_tag = SplitTag::Unsplit;

  std::size_t mention_count() const;
};

struct ParseReport {
  std::size_t sentences = 0;
  std::size_t mentions = 0;
  std::size_t bio_repairs = 0;  // orphan I- retagged as B-
};

struct ValidateOptions {
  bool flat_only = false;  // reject overlapping/nested mentions
};

// Checks all corpus invariants; throws ValidationError on the first failure.
void validate_corpus(const AnnotatedCorpus& corpus, const ValidateOptions& opts = {});

// Standoff JSONL: one object per line:
//   {"id": str, "text": str, "entities": [{"start": int, "end": int, "label": str}]}
// label_set defaults to the sorted set of labels encountered unless
// explicit_labels is non-empty.
AnnotatedCorpus parse_standoff_jsonl(std::istream& in,
                                     const std::vector<std::string>& explicit_labels = {},
                                     ParseReport* report = nullptr);

void write_standoff_jsonl(const AnnotatedCorpus& corpus, std::ostream& out);

// CoNLL BIO: TOKEN<TAB>TAG lines, blank-line sentence separator. Sentence
// text is tokens joined by single spaces. Orphan I- tags are repaired to B-
// and counted in the report.
AnnotatedCorpus parse_conll_bio(std::istream& in,
                                const std::vector<std::string>& explicit_labels = {},
                                ParseReport* report = nullptr);

// Emits BIO tags over the space-joined tokens. Mentions that do not align
// to token boundaries or conflict with an already-tagged token are skipped
// and counted via dropped (may be null).
void write_conll_bio(const AnnotatedCorpus& corpus, std::ostream& out,
                     std::size_t* dropped = nullptr);

// Deterministic shuffle by seed, then contiguous partition: train gets
// floor(n*f0), dev floor(n*f1), test the remainder.
struct CorpusSplits {
  AnnotatedCorpus train, dev, test;
};
CorpusSplits split_corpus(const AnnotatedCorpus& corpus, double train_frac, double dev_frac,
                          double test_frac, std::uint64_t seed);

}  // namespace pbmrc
