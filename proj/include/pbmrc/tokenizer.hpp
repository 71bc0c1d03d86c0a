#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pbmrc/prompting.hpp"
#include "pbmrc/util.hpp"

namespace pbmrc {

// BERT-compatible vocabulary: one token per line, id = line index.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> ids;
  int pad_id = -1, unk_id = -1, cls_id = -1, sep_id = -1, mask_id = -1;
  bool lowercase = false;

  std::size_t size() const { return tokens.size(); }
  int id_of(const std::string& token) const;  // -1 when absent
};

Vocabulary load_vocab(std::istream& in, bool lowercase = false);
Vocabulary make_vocab(const std::vector<std::string>& extra_tokens, bool lowercase = false);

// Character offsets count Unicode scalar values, end-exclusive.
struct TokenizedText {
  std::vector<std::string> tokens;
  std::vector<int> ids;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;

  std::size_t size() const { return tokens.size(); }
};

// Whitespace + punctuation pre-split, then greedy longest-match-first
// WordPiece with "##" continuation pieces; words with an unmatchable
// remainder (or longer than 100 chars) become a single [UNK].
TokenizedText wordpiece_tokenize(const std::string& text, const Vocabulary& vocab);

struct TokenSpan {
  std::size_t tok_start = 0;  // inclusive
  std::size_t tok_end = 0;    // inclusive
  bool exact = false;
};

// Minimal contiguous token range whose character coverage contains the
// span; exact iff coverage equals the span. Throws AlignmentError when the
// span touches no token (whitespace-only).
struct AlignmentError : ValidationError {
  using ValidationError::ValidationError;
};
TokenSpan align_char_span_to_tokens(std::pair<std::size_t, std::size_t> span,
                                    const TokenizedText& tk);

// [CLS] q1..qm [SEP] x1..xn [SEP] (+ optional [PAD] tail).
struct EncodedInput {
  std::vector<int> ids;
  std::vector<int> segment_ids;      // 0 up to and incl. first [SEP], then 1
  std::vector<int> attention_mask;   // prefix of ones
  std::pair<std::size_t, std::size_t> prompt_range;   // [lo, hi) token indices
  std::pair<std::size_t, std::size_t> context_range;  // [lo, hi)
  std::vector<std::pair<std::size_t, std::size_t>> context_offsets;  // into sentence text
  std::string sentence_id;
  std::string label;

  std::size_t length() const { return ids.size(); }
  std::size_t prompt_len() const { return prompt_range.second - prompt_range.first; }
  std::size_t context_len() const { return context_range.second - context_range.first; }
};

struct EncodedAnswer {
  std::size_t tok_start = 0;  // absolute, inclusive
  std::size_t tok_end = 0;    // absolute, inclusive
  bool exact = false;
};

struct EncodeResult {
  EncodedInput input;
  std::vector<EncodedAnswer> answers;
  std::size_t dropped_answers = 0;  // truncated out of the context window
};

// Truncates the context (never the prompt) to fit max_len. pad_to > 0 pads
// with [PAD] up to that length. Throws when the prompt alone plus specials
// exceeds max_len or the prompt is empty after tokenization.
EncodeResult encode_instance(const MrcInstance& inst, const Vocabulary& vocab,
                             std::size_t max_len, std::size_t pad_to = 0);

}  // namespace pbmrc
