#include "pbmrc/evaluation.hpp"

#include <algorithm>
#include <ostream>

#include <json.hpp>

namespace pbmrc {

using nlohmann::json;

Prf prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf out;
  const double tpd = static_cast<double>(tp);
  out.precision = (tp + fp) == 0 ? 0.0 : tpd / static_cast<double>(tp + fp);
  out.recall = (tp + fn) == 0 ? 0.0 : tpd / static_cast<double>(tp + fn);
  out.f1 = (out.precision + out.recall) == 0.0
               ? 0.0
               : 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

std::map<std::string, LabelCounts> match_spans(const std::set<LabeledSpan>& gold,
                                               const std::set<LabeledSpan>& pred) {
  std::map<std::string, LabelCounts> out;
  for (const auto& g : gold) {
    auto& c = out[std::get<2>(g)];
    if (pred.count(g))
      ++c.tp;
    else
      ++c.fn;
  }
  for (const auto& p : pred) {
    if (!gold.count(p)) ++out[std::get<2>(p)].fp;
  }
  return out;
}

EvalReport compute_metrics(const std::map<std::string, LabelCounts>& counts) {
  EvalReport r;
  r.per_label = counts;
  double f1_sum = 0.0;
  for (const auto& [label, c] : counts) {
    r.per_label_metrics[label] = prf_from_counts(c.tp, c.fp, c.fn);
    f1_sum += r.per_label_metrics[label].f1;
    r.micro_counts.tp += c.tp;
    r.micro_counts.fp += c.fp;
    r.micro_counts.fn += c.fn;
  }
  r.micro = prf_from_counts(r.micro_counts.tp, r.micro_counts.fp, r.micro_counts.fn);
  r.macro_f1 = counts.empty() ? 0.0 : f1_sum / static_cast<double>(counts.size());
  return r;
}

EvalResult evaluate_model(const ModelParams& params, const AnnotatedCorpus& corpus,
                          const PromptRegistry& registry, const Vocabulary& vocab,
                          PromptMode mode, std::size_t max_len,
                          const DecodeThresholds& thresholds, std::size_t max_span_len) {
  for (const auto& label : corpus.label_set.labels) {
    if (std::find(params.labels.begin(), params.labels.end(), label) == params.labels.end())
      throw ValidationError("checkpoint does not cover corpus label: " + label);
  }

  std::map<std::string, LabelCounts> counts;
  // seed counts so labels with no activity still report zeros
  for (const auto& label : corpus.label_set.labels) counts[label];

  EvalResult out;
  for (const auto& sentence : corpus.sentences) {
    ScoredSentence scored;
    scored.id = sentence.id;
    scored.text = sentence.text;

    std::set<LabeledSpan> gold, pred;
    for (const auto& m : sentence.mentions) gold.insert({m.start, m.end, m.label});

    for (const auto& label : corpus.label_set.labels) {
      MrcInstance inst;
      inst.sentence_id = sentence.id;
      inst.label = label;
      inst.prompt_text = registry.for_label(label).text;
      inst.context_text = sentence.text;
      auto preds =
          predict_instance(params, inst, vocab, mode, max_len, thresholds, max_span_len);
      for (const auto& p : preds) {
        pred.insert({p.char_start, p.char_end, p.label});
        scored.predictions.push_back(p);
      }
    }
    for (const auto& [label, c] : match_spans(gold, pred)) {
      counts[label].tp += c.tp;
      counts[label].fp += c.fp;
      counts[label].fn += c.fn;
    }
    out.dump.push_back(std::move(scored));
  }
  out.report = compute_metrics(counts);
  return out;
}

std::string report_to_json(const EvalReport& report) {
  json per_label = json::object();
  for (const auto& [label, c] : report.per_label) {
    const Prf& m = report.per_label_metrics.at(label);
    per_label[label] = {{"tp", c.tp},           {"fp", c.fp},
                        {"fn", c.fn},           {"precision", m.precision},
                        {"recall", m.recall},   {"f1", m.f1}};
  }
  json j = {{"per_label", per_label},
            {"micro", {{"tp", report.micro_counts.tp},
                       {"fp", report.micro_counts.fp},
                       {"fn", report.micro_counts.fn},
                       {"precision", report.micro.precision},
                       {"recall", report.micro.recall},
                       {"f1", report.micro.f1}}},
            {"macro_f1", report.macro_f1}};
  return j.dump(2);
}

void write_prediction_dump(const std::vector<ScoredSentence>& dump, std::ostream& out) {
  for (const auto& s : dump) {
    json entities = json::array();
    for (const auto& p : s.predictions)
      entities.push_back({{"start", p.char_start},
                          {"end", p.char_end},
                          {"label", p.label},
                          {"score", p.score}});
    json obj = {{"id", s.id}, {"text", s.text}, {"entities", entities}};
    out << obj.dump() << "\n";
  }
}

}  // namespace pbmrc
