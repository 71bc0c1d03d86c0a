#include "pbmrc/tokenizer.hpp"

#include <sstream>
#include <algorithm>
#include <istream>

namespace pbmrc {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

bool is_ws(char32_t c) { return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r'; }

// ASCII punctuation, per the BERT basic tokenizer ranges.
bool is_punct(char32_t c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

char32_t fold(char32_t c, bool lowercase) {
  if (lowercase && c >= U'A' && c <= U'Z') return c - U'A' + U'a';
  return c;
}

}  // namespace

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids.find(token);
  return it == ids.end() ? -1 : it->second;
}

Vocabulary load_vocab(std::istream& in, bool lowercase) {
  Vocabulary v;
  v.lowercase = lowercase;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (v.ids.count(line)) throw ValidationError("duplicate vocabulary token: " + line);
    v.ids[line] = static_cast<int>(v.tokens.size());
    v.tokens.push_back(line);
  }
  const std::pair<const char*, int*> specials[] = {
      {"[PAD]", &v.pad_id}, {"[UNK]", &v.unk_id}, {"[CLS]", &v.cls_id},
      {"[SEP]", &v.sep_id}, {"[MASK]", &v.mask_id}};
  for (const auto& [name, slot] : specials) {
    int id = v.id_of(name);
    if (id < 0) throw ValidationError(std::string("vocabulary missing special token ") + name);
    *slot = id;
  }
  return v;
}

Vocabulary make_vocab(const std::vector<std::string>& extra_tokens, bool lowercase) {
  std::string joined = "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n";
  for (const auto& t : extra_tokens) joined += t + "\n";
  std::istringstream in(joined);
  return load_vocab(in, lowercase);
}

TokenizedText wordpiece_tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenizedText out;
  std::u32string u = utf8_decode(text);

  // pre-split into words: maximal runs of non-ws non-punct, and single
  // punctuation characters
  std::vector<std::pair<std::size_t, std::size_t>> words;
  std::size_t i = 0;
  while (i < u.size()) {
    if (is_ws(u[i])) {
      ++i;
      continue;
    }
    if (is_punct(u[i])) {
      words.emplace_back(i, i + 1);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < u.size() && !is_ws(u[j]) && !is_punct(u[j])) ++j;
    words.emplace_back(i, j);
    i = j;
  }

  auto emit = [&](std::string token, int id, std::size_t s, std::size_t e) {
    out.tokens.push_back(std::move(token));
    out.ids.push_back(id);
    out.offsets.emplace_back(s, e);
  };

  for (const auto& [ws, we] : words) {
    if (we - ws > kMaxCharsPerWord) {
      emit("[UNK]", vocab.unk_id, ws, we);
      continue;
    }
    std::u32string word;
    word.reserve(we - ws);
    for (std::size_t k = ws; k < we; ++k) word.push_back(fold(u[k], vocab.lowercase));

    std::vector<std::tuple<std::string, int, std::size_t, std::size_t>> pieces;
    std::size_t start = 0;
    bool bad = false;
    while (start < word.size()) {
      std::size_t end = word.size();
      int found = -1;
      std::string found_piece;
      while (start < end) {
        std::string piece = (start > 0 ? "##" : "") +
                            utf8_encode(std::u32string_view(word).substr(start, end - start));
        int id = vocab.id_of(piece);
        if (id >= 0) {
          found = id;
          found_piece = std::move(piece);
          break;
        }
        --end;
      }
      if (found < 0) {
        bad = true;
        break;
      }
      pieces.emplace_back(std::move(found_piece), found, ws + start, ws + end);
      start = end;
    }
    if (bad) {
      emit("[UNK]", vocab.unk_id, ws, we);
    } else {
      for (auto& [tok, id, s, e] : pieces) emit(std::move(tok), id, s, e);
    }
  }
  return out;
}

TokenSpan align_char_span_to_tokens(std::pair<std::size_t, std::size_t> span,
                                    const TokenizedText& tk) {
  const auto [cs, ce] = span;
  if (ce <= cs) throw AlignmentError("align: empty span");
  std::size_t first = tk.size(), last = tk.size();
  for (std::size_t i = 0; i < tk.size(); ++i) {
    const auto [ts, te] = tk.offsets[i];
    // token overlaps the span?
    if (ts < ce && te > cs) {
      if (first == tk.size()) first = i;
      last = i;
    }
  }
  if (first == tk.size())
    throw AlignmentError("align: span covers no token (whitespace only)");
  TokenSpan out;
  out.tok_start = first;
  out.tok_end = last;
  out.exact = tk.offsets[first].first == cs && tk.offsets[last].second == ce;
  return out;
}

EncodeResult encode_instance(const MrcInstance& inst, const Vocabulary& vocab,
                             std::size_t max_len, std::size_t pad_to) {
  TokenizedText prompt = wordpiece_tokenize(inst.prompt_text, vocab);
  if (prompt.size() == 0) throw ValidationError("prompt tokenizes to zero tokens");
  TokenizedText context = wordpiece_tokenize(inst.context_text, vocab);

  const std::size_t specials = 3;  // [CLS], two [SEP]
  if (prompt.size() + specials > max_len)
    throw ValidationError("prompt plus special tokens exceeds max_len");
  std::size_t ctx_keep = std::min(context.size(), max_len - specials - prompt.size());

  EncodeResult res;
  EncodedInput& e = res.input;
  e.sentence_id = inst.sentence_id;
  e.label = inst.label;

  e.ids.push_back(vocab.cls_id);
  for (std::size_t i = 0; i < prompt.size(); ++i) e.ids.push_back(prompt.ids[i]);
  e.ids.push_back(vocab.sep_id);
  const std::size_t ctx_base = e.ids.size();
  for (std::size_t i = 0; i < ctx_keep; ++i) {
    e.ids.push_back(context.ids[i]);
    e.context_offsets.push_back(context.offsets[i]);
  }
  e.ids.push_back(vocab.sep_id);

  e.prompt_range = {1, 1 + prompt.size()};
  e.context_range = {ctx_base, ctx_base + ctx_keep};

  const std::size_t seg_boundary = 1 + prompt.size() + 1;  // first [SEP] inclusive in seg 0
  for (std::size_t i = 0; i < e.ids.size(); ++i)
    e.segment_ids.push_back(i < seg_boundary ? 0 : 1);
  e.attention_mask.assign(e.ids.size(), 1);

  if (pad_to > e.ids.size()) {
    while (e.ids.size() < pad_to) {
      e.ids.push_back(vocab.pad_id);
      e.segment_ids.push_back(1);
      e.attention_mask.push_back(0);
    }
  }

  // answers -> token spans over the kept context, re-based to absolute
  TokenizedText kept;
  kept.tokens.assign(context.tokens.begin(), context.tokens.begin() + ctx_keep);
  kept.ids.assign(context.ids.begin(), context.ids.begin() + ctx_keep);
  kept.offsets.assign(context.offsets.begin(), context.offsets.begin() + ctx_keep);
  for (const auto& span : inst.answers) {
    TokenSpan full = align_char_span_to_tokens(span, context);
    if (full.tok_end >= ctx_keep) {
      ++res.dropped_answers;
      continue;
    }
    TokenSpan ts = align_char_span_to_tokens(span, kept);
    res.answers.push_back({ctx_base + ts.tok_start, ctx_base + ts.tok_end, ts.exact});
  }
  return res;
}

}  // namespace pbmrc
