#pragma once

#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pbmrc/corpus.hpp"
#include "pbmrc/model.hpp"

namespace pbmrc {

// Character-offset span with label; the unit of strict matching.
using LabeledSpan = std::tuple<std::size_t, std::size_t, std::string>;

struct LabelCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// precision = TP/(TP+FP), recall = TP/(TP+FN), 0/0 := 0;
// F1 = harmonic mean, 0 when P+R = 0.
Prf prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

struct EvalReport {
  std::map<std::string, LabelCounts> per_label;
  std::map<std::string, Prf> per_label_metrics;
  LabelCounts micro_counts;
  Prf micro;
  double macro_f1 = 0.0;  // unweighted mean of per-label F1
};

// Strict exact-match per label: TP iff (start, end, label) equals a gold
// span exactly. Both arguments are sets over the same text.
std::map<std::string, LabelCounts> match_spans(const std::set<LabeledSpan>& gold,
                                               const std::set<LabeledSpan>& pred);

EvalReport compute_metrics(const std::map<std::string, LabelCounts>& counts);

// Prediction dump entry: standoff entity plus a score.
struct ScoredSentence {
  std::string id;
  std::string text;
  std::vector<SpanPrediction> predictions;
};

struct EvalResult {
  EvalReport report;
  std::vector<ScoredSentence> dump;
};

// End-to-end: build instances, encode, forward, decode, score against the
// corpus gold mentions.
EvalResult evaluate_model(const ModelParams& params, const AnnotatedCorpus& corpus,
                          const PromptRegistry& registry, const Vocabulary& vocab,
                          PromptMode mode, std::size_t max_len,
                          const DecodeThresholds& thresholds, std::size_t max_span_len);

std::string report_to_json(const EvalReport& report);
void write_prediction_dump(const std::vector<ScoredSentence>& dump, std::ostream& out);

}  // namespace pbmrc
