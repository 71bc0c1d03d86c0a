#include "pbmrc/corpus.hpp"

#include <cmath>
#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pbmrc/rng.hpp"

namespace pbmrc {

using nlohmann::json;

bool LabelSet::contains(const std::string& label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::size_t LabelSet::index_of(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw ValidationError("label not in label set: " + label);
  return static_cast<std::size_t>(it - labels.begin());
}

void LabelSet::validate() const {
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) throw ValidationError("empty label name");
    for (char c : l)
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
        throw ValidationError("label contains whitespace: '" + l + "'");
    if (!seen.insert(l).second) throw ValidationError("duplicate label: " + l);
  }
}

std::size_t AnnotatedCorpus::mention_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.mentions.size();
  return n;
}

namespace {

bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t\r") == std::string::npos;
}

void validate_sentence(const Sentence& s, const LabelSet& labels, bool flat_only) {
  if (is_blank(s.text)) throw ValidationError("sentence '" + s.id + "': text is empty");
  const std::size_t len = utf8_length(s.text);
  std::set<std::tuple<std::size_t, std::size_t, std::string>> seen;
  for (const auto& m : s.mentions) {
    if (m.end <= m.start)
      throw ValidationError("sentence '" + s.id + "': mention end <= start");
    if (m.end > len)
      throw ValidationError("sentence '" + s.id + "': mention offset out of bounds");
    if (!labels.contains(m.label))
      throw ValidationError("sentence '" + s.id + "': unknown label '" + m.label + "'");
    if (!seen.insert({m.start, m.end, m.label}).second)
      throw ValidationError("sentence '" + s.id + "': duplicate mention");
  }
  if (flat_only) {
    auto sorted = s.mentions;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.start < b.start || (a.start == b.start && a.end < b.end);
    });
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i].start < sorted[i - 1].end)
        throw ValidationError("sentence '" + s.id + "': overlapping mentions (flat_only)");
  }
}

}  // namespace

void validate_corpus(const AnnotatedCorpus& corpus, const ValidateOptions& opts) {
  corpus.label_set.validate();
  std::set<std::string> ids;
  for (const auto& s : corpus.sentences) {
    if (!ids.insert(s.id).second) throw ValidationError("duplicate sentence id: " + s.id);
    validate_sentence(s, corpus.label_set, opts.flat_only);
  }
}

AnnotatedCorpus parse_standoff_jsonl(std::istream& in,
                                     const std::vector<std::string>& explicit_labels,
                                     ParseReport* report) {
  AnnotatedCorpus corpus;
  std::set<std::string> label_pool;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    Sentence s;
    try {
      s.id = obj.at("id").get<std::string>();
      s.text = obj.at("text").get<std::string>();
      if (obj.contains("entities")) {
        for (const auto& e : obj.at("entities")) {
          EntityMention m;
          auto start = e.at("start").get<long long>();
          auto end = e.at("end").get<long long>();
          if (start < 0 || end < 0)
            throw ValidationError("negative offset");
          m.start = static_cast<std::size_t>(start);
          m.end = static_cast<std::size_t>(end);
          m.label = e.at("label").get<std::string>();
          s.mentions.push_back(m);
        }
      }
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": bad record: " + e.what());
    }
    for (const auto& m : s.mentions) label_pool.insert(m.label);
    corpus.sentences.push_back(std::move(s));
  }
  if (!explicit_labels.empty())
    corpus.label_set.labels = explicit_labels;
  else
    corpus.label_set.labels.assign(label_pool.begin(), label_pool.end());
  validate_corpus(corpus);
  if (report) {
    report->sentences = corpus.sentences.size();
    report->mentions = corpus.mention_count();
  }
  return corpus;
}

void write_standoff_jsonl(const AnnotatedCorpus& corpus, std::ostream& out) {
  for (const auto& s : corpus.sentences) {
    json entities = json::array();
    for (const auto& m : s.mentions)
      entities.push_back({{"start", m.start}, {"end", m.end}, {"label", m.label}});
    json obj = {{"id", s.id}, {"text", s.text}, {"entities", entities}};
    out << obj.dump() << "\n";
  }
}

AnnotatedCorpus parse_conll_bio(std::istream& in,
                                const std::vector<std::string>& explicit_labels,
                                ParseReport* report) {
  AnnotatedCorpus corpus;
  std::set<std::string> label_pool;
  std::size_t repairs = 0;
  std::size_t lineno = 0;
  std::size_t sent_idx = 0;

  std::vector<std::pair<std::string, std::string>> rows;  // (token, tag)
  auto flush = [&]() {
    if (rows.empty()) return;
    Sentence s;
    s.id = "s" + std::to_string(sent_idx++);
    std::string text;
    std::vector<std::pair<std::size_t, std::size_t>> tok_spans;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0) {
        text += ' ';
        ++pos;
      }
      std::size_t len = utf8_length(rows[i].first);
      tok_spans.emplace_back(pos, pos + len);
      text += rows[i].first;
      pos += len;
    }
    s.text = text;
    // BIO runs -> mentions, repairing orphan I- to B-
    std::string open_label;
    std::size_t open_start = 0, open_end = 0;
    auto close = [&]() {
      if (!open_label.empty()) {
        s.mentions.push_back({open_start, open_end, open_label});
        label_pool.insert(open_label);
        open_label.clear();
      }
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::string& tag = rows[i].second;
      if (tag == "O") {
        close();
        continue;
      }
      char prefix = tag[0];
      std::string label = tag.substr(2);
      if (prefix == 'I' && open_label != label) {
        ++repairs;  // orphan I-: treat as B-
        prefix = 'B';
      }
      if (prefix == 'B') {
        close();
        open_label = label;
        open_start = tok_spans[i].first;
      }
      open_end = tok_spans[i].second;
    }
    close();
    corpus.sentences.push_back(std::move(s));
    rows.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || is_blank(line)) {
      flush();
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || line.find('\t', tab + 1) != std::string::npos)
      throw ValidationError("line " + std::to_string(lineno) +
                            ": expected exactly two tab-separated columns");
    std::string token = line.substr(0, tab);
    std::string tag = line.substr(tab + 1);
    if (tag != "O") {
      if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-')
        throw ValidationError("line " + std::to_string(lineno) + ": invalid tag '" + tag + "'");
    }
    rows.emplace_back(std::move(token), std::move(tag));
  }
  flush();

  if (!explicit_labels.empty())
    corpus.label_set.labels = explicit_labels;
  else
    corpus.label_set.labels.assign(label_pool.begin(), label_pool.end());
  validate_corpus(corpus);
  if (report) {
    report->sentences = corpus.sentences.size();
    report->mentions = corpus.mention_count();
    report->bio_repairs = repairs;
  }
  return corpus;
}

void write_conll_bio(const AnnotatedCorpus& corpus, std::ostream& out, std::size_t* dropped) {
  std::size_t skipped = 0;
  for (const auto& s : corpus.sentences) {
    // token boundaries of the space-joined view
    std::u32string u = utf8_decode(s.text);
    std::vector<std::pair<std::size_t, std::size_t>> toks;
    std::size_t i = 0;
    while (i < u.size()) {
      if (u[i] == U' ') {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < u.size() && u[j] != U' ') ++j;
      toks.emplace_back(i, j);
      i = j;
    }
    std::vector<std::string> tags(toks.size(), "O");
    auto sorted = s.mentions;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.start < b.start || (a.start == b.start && a.end > b.end);
    });
    for (const auto& m : sorted) {
      // must start/end exactly on token boundaries and not collide
      std::size_t first = toks.size(), last = toks.size();
      for (std::size_t t = 0; t < toks.size(); ++t) {
        if (toks[t].first == m.start) first = t;
        if (toks[t].second == m.end) last = t;
      }
      bool ok = first < toks.size() && last < toks.size() && first <= last;
      if (ok)
        for (std::size_t t = first; t <= last; ++t)
          if (tags[t] != "O") ok = false;
      if (!ok) {
        ++skipped;
        continue;
      }
      tags[first] = "B-" + m.label;
      for (std::size_t t = first + 1; t <= last; ++t) tags[t] = "I-" + m.label;
    }
    for (std::size_t t = 0; t < toks.size(); ++t) {
      out << utf8_encode(std::u32string_view(u).substr(toks[t].first,
                                                       toks[t].second - toks[t].first))
          << '\t' << tags[t] << "\n";
    }
    out << "\n";
  }
  if (dropped) *dropped = skipped;
}

CorpusSplits split_corpus(const AnnotatedCorpus& corpus, double train_frac, double dev_frac,
                          double test_frac, std::uint64_t seed) {
  for (double f : {train_frac, dev_frac, test_frac})
    if (f < 0.0 || f > 1.0) throw ValidationError("split fraction outside [0,1]");
  if (std::abs(train_frac + dev_frac + test_frac - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");

  std::vector<std::size_t> order(corpus.sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed, /*stream=*/0x5e17);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  const std::size_t n = order.size();
  const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
  const auto n_dev = static_cast<std::size_t>(std::floor(dev_frac * static_cast<double>(n)));

  CorpusSplits out;
  out.train.label_set = out.dev.label_set = out.test.label_set = corpus.label_set;
  out.train.split_tag = SplitTag::Train;
  out.dev.split_tag = SplitTag::Dev;
  out.test.split_tag = SplitTag::Test;
  for (std::size_t i = 0; i < n; ++i) {
    const Sentence& s = corpus.sentences[order[i]];
    if (i < n_train)
      out.train.sentences.push_back(s);
    else if (i < n_train + n_dev)
      out.dev.sentences.push_back(s);
    else
      out.test.sentences.push_back(s);
  }
  return out;
}

}  // namespace pbmrc
