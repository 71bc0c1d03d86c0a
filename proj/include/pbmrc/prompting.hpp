#pragma once

#include <map>
#include <string>
#include <vector>

#include "pbmrc/corpus.hpp"

namespace pbmrc {

struct PromptTemplate {
  std::string label;
  std::string text;  // non-empty
};

enum class PromptMode { Hard, Soft };

// One template per label. Soft mode still needs templates: they seed the
// learnable prompt vectors and fix their length.
struct PromptRegistry {
  std::map<std::string, PromptTemplate> templates;
  PromptMode mode = PromptMode::Hard;

  const PromptTemplate& for_label(const std::string& label) const;  // throws if missing
};

// One (prompt, context, answer-spans) unit. Zero-answer instances are kept
// and act as negatives.
struct MrcInstance {
  std::string sentence_id;
  std::string label;
  std::string prompt_text;
  std::string context_text;
  std::vector<std::pair<std::size_t, std::size_t>> answers;  // char spans, end-exclusive
};

// Default templates: "find all <gloss> entities in the text", gloss taken
// from the gloss map when present, else the label itself.
PromptRegistry default_registry(const LabelSet& labels,
                                const std::map<std::string, std::string>& glosses = {},
                                PromptMode mode = PromptMode::Hard);

// Template file: JSON object mapping label -> prompt string.
PromptRegistry load_registry(std::istream& in, PromptMode mode = PromptMode::Hard);
std::map<std::string, std::string> load_gloss_map(std::istream& in);

// Emits |sentences| x |labels| instances, sentence-major then label-index
// order. Throws if the registry misses a corpus label.
std::vector<MrcInstance> build_instances(const AnnotatedCorpus& corpus,
                                         const PromptRegistry& registry);

struct LintReport {
  std::vector<std::string> missing_labels;
  std::vector<std::string> unused_templates;
  std::vector<std::string> empty_texts;
  std::vector<std::string> duplicate_texts;  // "labelA, labelB: <text>"

  bool clean() const {
    return missing_labels.empty() && unused_templates.empty() && empty_texts.empty() &&
           duplicate_texts.empty();
  }
};

LintReport lint_registry(const PromptRegistry& registry, const LabelSet& labels);

// JSONL dump of instances (one object per line).
void write_instances_jsonl(const std::vector<MrcInstance>& instances, std::ostream& out);

}  // namespace pbmrc
