#include "pbmrc/prompting.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace pbmrc {

using nlohmann::json;

const PromptTemplate& PromptRegistry::for_label(const std::string& label) const {
  auto it = templates.find(label);
  if (it == templates.end()) throw ValidationError("no prompt template for label: " + label);
  return it->second;
}

PromptRegistry default_registry(const LabelSet& labels,
                                const std::map<std::string, std::string>& glosses,
                                PromptMode mode) {
  PromptRegistry reg;
  reg.mode = mode;
  for (const auto& label : labels.labels) {
    auto it = glosses.find(label);
    const std::string gloss = it != glosses.end() ? it->second : label;
    reg.templates[label] = {label, "find all " + gloss + " entities in the text"};
  }
  return reg;
}

PromptRegistry load_registry(std::istream& in, PromptMode mode) {
  json obj;
  try {
    obj = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("template file: malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ValidationError("template file must be a JSON object");
  PromptRegistry reg;
  reg.mode = mode;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!it.value().is_string())
      throw ValidationError("template for '" + it.key() + "' must be a string");
    reg.templates[it.key()] = {it.key(), it.value().get<std::string>()};
  }
  return reg;
}

std::map<std::string, std::string> load_gloss_map(std::istream& in) {
  json obj;
  try {
    obj = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("gloss file: malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ValidationError("gloss file must be a JSON object");
  std::map<std::string, std::string> out;
  for (auto it = obj.begin(); it != obj.end(); ++it)
    out[it.key()] = it.value().get<std::string>();
  return out;
}

std::vector<MrcInstance> build_instances(const AnnotatedCorpus& corpus,
                                         const PromptRegistry& registry) {
  for (const auto& label : corpus.label_set.labels) registry.for_label(label);
  std::vector<MrcInstance> out;
  out.reserve(corpus.sentences.size() * corpus.label_set.labels.size());
  for (const auto& s : corpus.sentences) {
    for (const auto& label : corpus.label_set.labels) {
      MrcInstance inst;
      inst.sentence_id = s.id;
      inst.label = label;
      inst.prompt_text = registry.for_label(label).text;
      inst.context_text = s.text;
      for (const auto& m : s.mentions)
        if (m.label == label) inst.answers.emplace_back(m.start, m.end);
      out.push_back(std::move(inst));
    }
  }
  return out;
}

LintReport lint_registry(const PromptRegistry& registry, const LabelSet& labels) {
  LintReport report;
  for (const auto& label : labels.labels)
    if (!registry.templates.count(label)) report.missing_labels.push_back(label);
  for (const auto& [label, tmpl] : registry.templates) {
    if (!labels.contains(label)) report.unused_templates.push_back(label);
    if (tmpl.text.empty()) report.empty_texts.push_back(label);
  }
  std::map<std::string, std::vector<std::string>> by_text;
  for (const auto& [label, tmpl] : registry.templates) by_text[tmpl.text].push_back(label);
  for (const auto& [text, ls] : by_text) {
    if (ls.size() < 2) continue;
    std::string joined;
    for (const auto& l : ls) {
      if (!joined.empty()) joined += ", ";
      joined += l;
    }
    report.duplicate_texts.push_back(joined + ": " + text);
  }
  return report;
}

void write_instances_jsonl(const std::vector<MrcInstance>& instances, std::ostream& out) {
  for (const auto& inst : instances) {
    json answers = json::array();
    for (const auto& [s, e] : inst.answers) answers.push_back({s, e});
    json obj = {{"sentence_id", inst.sentence_id},
                {"label", inst.label},
                {"prompt", inst.prompt_text},
                {"context", inst.context_text},
                {"answers", answers}};
    out << obj.dump() << "\n";
  }
}

}  // namespace pbmrc
