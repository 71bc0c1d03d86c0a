// pbmrc: prompt-conditioned MRC named entity recognition pipeline.
// Subcommands: convert, lint-templates, train, predict, evaluate, gradcheck.
// Exit codes: 0 ok, 1 validation failure, 2 I/O failure, 3 non-finite loss,
// 4 gradient check failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pbmrc/corpus.hpp"
#include "pbmrc/evaluation.hpp"
#include "pbmrc/model.hpp"
#include "pbmrc/prompting.hpp"
#include "pbmrc/synthetic.hpp"
#include "pbmrc/tokenizer.hpp"
#include "pbmrc/training.hpp"
#include "pbmrc/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pbmrc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitNonFinite = 3;
constexpr int kExitGradcheck = 4;

struct RunConfig {
  EncoderConfig encoder = desk_config();
  TrainConfig train;
  std::string prompt_mode = "hard";
  DecodeThresholds thresholds;
  std::size_t max_span_len = 16;
  std::size_t max_len = 64;
  bool lowercase = false;
  // paths
  std::string vocab, templates, glosses, train_corpus, dev_corpus, out_dir;
};

void reject_unknown(const json& obj, const std::vector<std::string>& known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ValidationError("config: unknown key '" + it.key() + "' in " + where);
  }
}

void apply_encoder_json(EncoderConfig& c, const json& j) {
  reject_unknown(j,
                 {"hidden_size", "num_layers", "num_heads", "intermediate_size", "vocab_size",
                  "max_position_embeddings", "layer_norm_eps", "dropout_prob", "num_segments"},
                 "encoder");
  if (j.contains("hidden_size")) c.hidden_size = j["hidden_size"].get<std::size_t>();
  if (j.contains("num_layers")) c.num_layers = j["num_layers"].get<std::size_t>();
  if (j.contains("num_heads")) c.num_heads = j["num_heads"].get<std::size_t>();
  if (j.contains("intermediate_size")) c.intermediate_size = j["intermediate_size"].get<std::size_t>();
  if (j.contains("vocab_size")) c.vocab_size = j["vocab_size"].get<std::size_t>();
  if (j.contains("max_position_embeddings"))
    c.max_position_embeddings = j["max_position_embeddings"].get<std::size_t>();
  if (j.contains("layer_norm_eps")) c.layer_norm_eps = j["layer_norm_eps"].get<double>();
  if (j.contains("dropout_prob")) c.dropout_prob = j["dropout_prob"].get<double>();
  if (j.contains("num_segments")) c.num_segments = j["num_segments"].get<std::size_t>();
}

void apply_train_json(TrainConfig& t, const json& j) {
  reject_unknown(j,
                 {"max_epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2",
                  "adam_eps", "weight_decay", "grad_clip_norm", "freeze_policy", "loss_alpha",
                  "loss_beta", "loss_gamma", "selection_metric", "patience", "seed"},
                 "training");
  if (j.contains("max_epochs")) t.max_epochs = j["max_epochs"].get<std::size_t>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("adam_beta1")) t.adam_beta1 = j["adam_beta1"].get<double>();
  if (j.contains("adam_beta2")) t.adam_beta2 = j["adam_beta2"].get<double>();
  if (j.contains("adam_eps")) t.adam_eps = j["adam_eps"].get<double>();
  if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("grad_clip_norm")) t.grad_clip_norm = j["grad_clip_norm"].get<double>();
  if (j.contains("freeze_policy"))
    t.freeze = freeze_policy_from_string(j["freeze_policy"].get<std::string>());
  if (j.contains("loss_alpha")) t.loss_alpha = j["loss_alpha"].get<double>();
  if (j.contains("loss_beta")) t.loss_beta = j["loss_beta"].get<double>();
  if (j.contains("loss_gamma")) t.loss_gamma = j["loss_gamma"].get<double>();
  if (j.contains("selection_metric")) t.selection_metric = j["selection_metric"].get<std::string>();
  if (j.contains("patience")) t.patience = j["patience"].get<std::size_t>();
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("config file " + path + ": " + e.what());
  }
  reject_unknown(j,
                 {"encoder", "training", "paths", "prompt_mode", "thresholds", "max_span_len",
                  "max_len", "lowercase"},
                 "top level");
  if (j.contains("encoder")) apply_encoder_json(rc.encoder, j["encoder"]);
  if (j.contains("training")) apply_train_json(rc.train, j["training"]);
  if (j.contains("prompt_mode")) rc.prompt_mode = j["prompt_mode"].get<std::string>();
  if (j.contains("max_span_len")) rc.max_span_len = j["max_span_len"].get<std::size_t>();
  if (j.contains("max_len")) rc.max_len = j["max_len"].get<std::size_t>();
  if (j.contains("lowercase")) rc.lowercase = j["lowercase"].get<bool>();
  if (j.contains("thresholds")) {
    const json& t = j["thresholds"];
    reject_unknown(t, {"start", "end", "match"}, "thresholds");
    if (t.contains("start")) rc.thresholds.start = t["start"].get<double>();
    if (t.contains("end")) rc.thresholds.end = t["end"].get<double>();
    if (t.contains("match")) rc.thresholds.match = t["match"].get<double>();
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    reject_unknown(p, {"vocab", "templates", "glosses", "train_corpus", "dev_corpus", "out_dir"},
                   "paths");
    if (p.contains("vocab")) rc.vocab = p["vocab"].get<std::string>();
    if (p.contains("templates")) rc.templates = p["templates"].get<std::string>();
    if (p.contains("glosses")) rc.glosses = p["glosses"].get<std::string>();
    if (p.contains("train_corpus")) rc.train_corpus = p["train_corpus"].get<std::string>();
    if (p.contains("dev_corpus")) rc.dev_corpus = p["dev_corpus"].get<std::string>();
    if (p.contains("out_dir")) rc.out_dir = p["out_dir"].get<std::string>();
  }
  return rc;
}

json run_config_to_json(const RunConfig& rc) {
  return {
      {"encoder",
       {{"hidden_size", rc.encoder.hidden_size},
        {"num_layers", rc.encoder.num_layers},
        {"num_heads", rc.encoder.num_heads},
        {"intermediate_size", rc.encoder.intermediate_size},
        {"vocab_size", rc.encoder.vocab_size},
        {"max_position_embeddings", rc.encoder.max_position_embeddings},
        {"layer_norm_eps", rc.encoder.layer_norm_eps},
        {"dropout_prob", rc.encoder.dropout_prob},
        {"num_segments", rc.encoder.num_segments}}},
      {"training",
       {{"max_epochs", rc.train.max_epochs},
        {"batch_size", rc.train.batch_size},
        {"learning_rate", rc.train.learning_rate},
        {"adam_beta1", rc.train.adam_beta1},
        {"adam_beta2", rc.train.adam_beta2},
        {"adam_eps", rc.train.adam_eps},
        {"weight_decay", rc.train.weight_decay},
        {"grad_clip_norm", rc.train.grad_clip_norm},
        {"freeze_policy", to_string(rc.train.freeze)},
        {"loss_alpha", rc.train.loss_alpha},
        {"loss_beta", rc.train.loss_beta},
        {"loss_gamma", rc.train.loss_gamma},
        {"selection_metric", rc.train.selection_metric},
        {"patience", rc.train.patience},
        {"seed", rc.train.seed}}},
      {"prompt_mode", rc.prompt_mode},
      {"thresholds",
       {{"start", rc.thresholds.start}, {"end", rc.thresholds.end}, {"match", rc.thresholds.match}}},
      {"max_span_len", rc.max_span_len},
      {"max_len", rc.max_len},
      {"lowercase", rc.lowercase},
      {"paths",
       {{"vocab", rc.vocab},
        {"templates", rc.templates},
        {"glosses", rc.glosses},
        {"train_corpus", rc.train_corpus},
        {"dev_corpus", rc.dev_corpus},
        {"out_dir", rc.out_dir}}}};
}

void apply_preset(RunConfig& rc, const std::string& preset) {
  if (preset.empty()) return;
  if (preset == "table1-base")
    rc.encoder = table1_base_config();
  else if (preset == "table1-large")
    rc.encoder = table1_large_config();
  else if (preset == "desk")
    rc.encoder = desk_config();
  else
    throw ValidationError("unknown preset: " + preset);
}

AnnotatedCorpus load_corpus(const std::string& path, std::string format) {
  if (format.empty()) {
    if (path.ends_with(".jsonl")) format = "standoff";
    else if (path.ends_with(".bio") || path.ends_with(".conll") || path.ends_with(".tsv"))
      format = "bio";
    else
      throw ValidationError("cannot infer corpus format from " + path +
                            "; pass --in-format bio|standoff");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + path);
  ParseReport report;
  AnnotatedCorpus c = format == "bio" ? parse_conll_bio(in, {}, &report)
                                      : parse_standoff_jsonl(in, {}, &report);
  if (report.bio_repairs)
    std::cerr << "note: repaired " << report.bio_repairs << " orphan I- tags\n";
  return c;
}

PromptRegistry load_registry_or_default(const RunConfig& rc, const LabelSet& labels,
                                        PromptMode mode) {
  if (!rc.templates.empty()) {
    std::ifstream in(rc.templates, std::ios::binary);
    if (!in) throw IoError("cannot open template file: " + rc.templates);
    PromptRegistry reg = load_registry(in, mode);
    return reg;
  }
  std::map<std::string, std::string> glosses;
  if (!rc.glosses.empty()) {
    std::ifstream in(rc.glosses, std::ios::binary);
    if (!in) throw IoError("cannot open gloss file: " + rc.glosses);
    glosses = load_gloss_map(in);
  }
  return default_registry(labels, glosses, mode);
}

Vocabulary load_vocab_file(const std::string& path, bool lowercase) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocab file: " + path);
  return pbmrc::load_vocab(in, lowercase);
}

PromptMode parse_mode(const std::string& s) {
  if (s == "hard") return PromptMode::Hard;
  if (s == "soft") return PromptMode::Soft;
  throw ValidationError("prompt mode must be hard or soft, got: " + s);
}

// ---- subcommand bodies -------------------------------------------------

int cmd_convert(const std::string& in_path, const std::string& out_path,
                const std::string& in_format, const std::string& out_format,
                const std::string& templates, const std::string& glosses) {
  AnnotatedCorpus corpus = load_corpus(in_path, in_format);
  std::ostringstream out;
  std::size_t dropped = 0;
  if (out_format == "standoff") {
    write_standoff_jsonl(corpus, out);
  } else if (out_format == "bio") {
    write_conll_bio(corpus, out, &dropped);
  } else if (out_format == "instances") {
    RunConfig rc;
    rc.templates = templates;
    rc.glosses = glosses;
    if (templates.empty() && glosses.empty() && corpus.label_set.labels.empty())
      throw ValidationError("no labels found; nothing to build instances from");
    PromptRegistry reg = load_registry_or_default(rc, corpus.label_set, PromptMode::Hard);
    write_instances_jsonl(build_instances(corpus, reg), out);
  } else {
    throw ValidationError("out format must be standoff, bio or instances");
  }
  write_file(out_path, out.str());
  std::cerr << "sentences=" << corpus.sentences.size() << " mentions=" << corpus.mention_count()
            << " dropped=" << dropped << "\n";
  return kExitOk;
}

int cmd_lint_templates(const std::string& templates, const std::string& corpus_path,
                       const std::string& labels_csv) {
  LabelSet labels;
  if (!corpus_path.empty()) {
    labels = load_corpus(corpus_path, "").label_set;
  } else if (!labels_csv.empty()) {
    std::istringstream ss(labels_csv);
    std::string item;
    while (std::getline(ss, item, ',')) labels.labels.push_back(item);
    labels.validate();
  } else {
    throw ValidationError("lint-templates needs --corpus or --labels");
  }
  std::ifstream in(templates, std::ios::binary);
  if (!in) throw IoError("cannot open template file: " + templates);
  PromptRegistry reg = load_registry(in);
  LintReport report = lint_registry(reg, labels);
  json j = {{"missing_labels", report.missing_labels},
            {"unused_templates", report.unused_templates},
            {"empty_texts", report.empty_texts},
            {"duplicate_texts", report.duplicate_texts},
            {"clean", report.clean()}};
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& rc, const std::string& init_checkpoint) {
  if (rc.train_corpus.empty()) throw ValidationError("train corpus path missing (--train)");
  if (rc.out_dir.empty()) throw ValidationError("output directory missing (--out)");
  PromptMode mode = parse_mode(rc.prompt_mode);
  if (rc.train.freeze == FreezePolicy::PromptOnly && mode != PromptMode::Soft)
    throw ValidationError("--freeze prompt_only requires --prompt-mode soft");

  AnnotatedCorpus train_c = load_corpus(rc.train_corpus, "");
  AnnotatedCorpus dev_c = rc.dev_corpus.empty() ? train_c : load_corpus(rc.dev_corpus, "");
  if (rc.vocab.empty()) throw ValidationError("vocab path missing (--vocab)");
  Vocabulary vocab = load_vocab_file(rc.vocab, rc.lowercase);
  PromptRegistry registry = load_registry_or_default(rc, train_c.label_set, mode);

  TrainRun run;
  run.encoder = rc.encoder;
  run.train = rc.train;
  run.prompt_mode = mode;
  run.max_len = rc.max_len;
  run.thresholds = rc.thresholds;
  run.max_span_len = rc.max_span_len;

  ModelParams warm_start;
  if (!init_checkpoint.empty()) {
    warm_start = load_params_file(init_checkpoint);
    run.encoder = warm_start.config;
    if (run.prompt_mode == PromptMode::Soft)
      init_soft_prompts_from_templates(warm_start, registry, vocab);
    run.initial_params = &warm_start;
  }

  TrainResult result = train(train_c, dev_c, registry, vocab, run);

  fs::create_directories(rc.out_dir);
  save_params_file(result.best_params, (fs::path(rc.out_dir) / "checkpoint.pbmrc").string());
  write_file((fs::path(rc.out_dir) / "epochs.jsonl").string(), epoch_log_to_jsonl(result.log));
  write_file((fs::path(rc.out_dir) / "config.json").string(),
             run_config_to_json(rc).dump(2) + "\n");
  std::cout << "best_epoch=" << result.best_epoch << " dev_f1="
            << result.log[result.best_epoch - 1].dev_f1 << "\n";
  return kExitOk;
}

int cmd_predict(const RunConfig& rc, const std::string& checkpoint, const std::string& corpus_path,
                const std::string& out_path, bool have_encoder_override) {
  ModelParams params = load_params_file(checkpoint);
  if (have_encoder_override && !(params.config == rc.encoder)) {
    if (params.config.hidden_size != rc.encoder.hidden_size)
      throw ValidationError("checkpoint hidden_size " + std::to_string(params.config.hidden_size) +
                            " conflicts with requested " + std::to_string(rc.encoder.hidden_size));
    throw ValidationError("checkpoint encoder config conflicts with requested config");
  }
  AnnotatedCorpus corpus = load_corpus(corpus_path, "");
  Vocabulary vocab = load_vocab_file(rc.vocab, rc.lowercase);
  PromptMode mode = parse_mode(rc.prompt_mode);
  PromptRegistry registry = load_registry_or_default(rc, corpus.label_set, mode);
  for (const auto& [label, digest] : params.template_digests) {
    if (registry.templates.count(label) &&
        fnv1a_hex(registry.for_label(label).text) != digest)
      throw ValidationError("template for '" + label +
                            "' differs from the one the checkpoint was trained with");
  }
  EvalResult res = evaluate_model(params, corpus, registry, vocab, mode, rc.max_len,
                                  rc.thresholds, rc.max_span_len);
  std::ostringstream out;
  write_prediction_dump(res.dump, out);
  if (out_path.empty() || out_path == "-")
    std::cout << out.str();
  else
    write_file(out_path, out.str());
  return kExitOk;
}

int cmd_evaluate(const RunConfig& rc, const std::string& checkpoint,
                 const std::string& corpus_path, const std::string& report_path,
                 const std::string& dump_path) {
  ModelParams params = load_params_file(checkpoint);
  AnnotatedCorpus corpus = load_corpus(corpus_path, "");
  Vocabulary vocab = load_vocab_file(rc.vocab, rc.lowercase);
  PromptMode mode = parse_mode(rc.prompt_mode);
  PromptRegistry registry = load_registry_or_default(rc, corpus.label_set, mode);
  EvalResult res = evaluate_model(params, corpus, registry, vocab, mode, rc.max_len,
                                  rc.thresholds, rc.max_span_len);
  if (!report_path.empty()) write_file(report_path, report_to_json(res.report) + "\n");
  if (!dump_path.empty()) {
    std::ostringstream out;
    write_prediction_dump(res.dump, out);
    write_file(dump_path, out.str());
  }
  char line[128];
  std::snprintf(line, sizeof(line), "P=%.4f R=%.4f F1=%.4f\n", res.report.micro.precision,
                res.report.micro.recall, res.report.micro.f1);
  std::cout << line;
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& rc, double tolerance) {
  GradCheckReport report = gradient_check_model(rc.encoder, rc.train.seed, tolerance);
  for (const auto& g : report.groups) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-28s max_rel_err=%.3e coords=%zu %s\n", g.group.c_str(),
                  g.max_rel_err, g.coords_checked, g.pass ? "ok" : "FAIL");
    std::cout << line;
  }
  std::cout << (report.pass ? "gradcheck: PASS" : "gradcheck: FAIL") << "\n";
  return report.pass ? kExitOk : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt-conditioned MRC for named entity recognition"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path, preset;

  // convert
  auto* convert = app.add_subcommand("convert", "convert between corpus formats");
  std::string cv_in, cv_out, cv_in_format, cv_out_format = "standoff", cv_templates, cv_glosses;
  convert->add_option("--in", cv_in, "input corpus")->required();
  convert->add_option("--out", cv_out, "output path")->required();
  convert->add_option("--in-format", cv_in_format, "bio|standoff (default: by extension)");
  convert->add_option("--out-format", cv_out_format, "standoff|bio|instances");
  convert->add_option("--templates", cv_templates, "template JSON (for instances)");
  convert->add_option("--glosses", cv_glosses, "gloss JSON (for default templates)");

  // lint-templates
  auto* lint = app.add_subcommand("lint-templates", "check a template file against a label set");
  std::string lt_templates, lt_corpus, lt_labels;
  lint->add_option("--templates", lt_templates)->required();
  lint->add_option("--corpus", lt_corpus, "corpus supplying the label set");
  lint->add_option("--labels", lt_labels, "comma-separated label list");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config; flags override it");
    sub->add_option("--preset", preset, "desk|table1-base|table1-large");
    sub->add_option("--vocab", rc.vocab);
    sub->add_option("--templates", rc.templates);
    sub->add_option("--glosses", rc.glosses);
    sub->add_option("--prompt-mode", rc.prompt_mode, "hard|soft");
    sub->add_option("--max-len", rc.max_len);
    sub->add_option("--max-span-len", rc.max_span_len);
    sub->add_option("--seed", rc.train.seed);
    sub->add_option("--threshold-start", rc.thresholds.start);
    sub->add_option("--threshold-end", rc.thresholds.end);
    sub->add_option("--threshold-match", rc.thresholds.match);
    sub->add_flag("--lowercase", rc.lowercase);
  };

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  std::string freeze_str, init_checkpoint;
  tr->add_option("--init-checkpoint", init_checkpoint,
                 "warm-start from an existing checkpoint (e.g. prompt tuning "
                 "with --freeze prompt_and_heads)");
  tr->add_option("--train", rc.train_corpus, "training corpus");
  tr->add_option("--dev", rc.dev_corpus, "dev corpus (default: train)");
  tr->add_option("--out", rc.out_dir, "output directory");
  tr->add_option("--max-epochs", rc.train.max_epochs);
  tr->add_option("--batch-size", rc.train.batch_size);
  tr->add_option("--lr", rc.train.learning_rate);
  tr->add_option("--weight-decay", rc.train.weight_decay);
  tr->add_option("--patience", rc.train.patience);
  tr->add_option("--freeze", freeze_str, "full|prompt_only|prompt_and_heads");
  tr->add_option("--selection-metric", rc.train.selection_metric, "f1|precision");
  tr->add_option("--dropout", rc.encoder.dropout_prob);
  tr->add_option("--hidden-size", rc.encoder.hidden_size);
  tr->add_option("--num-layers", rc.encoder.num_layers);
  tr->add_option("--num-heads", rc.encoder.num_heads);
  tr->add_option("--vocab-size", rc.encoder.vocab_size);

  // predict
  auto* pr = app.add_subcommand("predict", "write scored predictions");
  add_common(pr);
  std::string pd_checkpoint, pd_corpus, pd_out;
  pr->add_option("--checkpoint", pd_checkpoint)->required();
  pr->add_option("--corpus", pd_corpus)->required();
  pr->add_option("--out", pd_out, "output path or - for stdout");
  pr->add_option("--hidden-size", rc.encoder.hidden_size);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score predictions against gold");
  add_common(ev);
  std::string ev_checkpoint, ev_corpus, ev_report, ev_dump;
  ev->add_option("--checkpoint", ev_checkpoint)->required();
  ev->add_option("--corpus", ev_corpus)->required();
  ev->add_option("--report", ev_report, "report JSON path");
  ev->add_option("--dump", ev_dump, "prediction dump path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gc);
  double gc_tolerance = 1e-4;
  gc->add_option("--tolerance", gc_tolerance);
  gc->add_option("--hidden-size", rc.encoder.hidden_size);
  gc->add_option("--num-layers", rc.encoder.num_layers);
  gc->add_option("--num-heads", rc.encoder.num_heads);

  CLI11_PARSE(app, argc, argv);

  try {
    // precedence: defaults < config file < preset < explicit flags
    {
      RunConfig flags = rc;  // values as set by CLI11 (defaults or overrides)
      rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      apply_preset(rc, preset);
      for (CLI::App* sub : {tr, pr, ev, gc}) {
        if (!sub->parsed()) continue;
        auto touched = [&](const std::string& flag) {
          const CLI::Option* o = sub->get_option_no_throw(flag);
          return o != nullptr && o->count() > 0;
        };
        if (touched("--vocab")) rc.vocab = flags.vocab;
        if (touched("--templates")) rc.templates = flags.templates;
        if (touched("--glosses")) rc.glosses = flags.glosses;
        if (touched("--prompt-mode")) rc.prompt_mode = flags.prompt_mode;
        if (touched("--max-len")) rc.max_len = flags.max_len;
        if (touched("--max-span-len")) rc.max_span_len = flags.max_span_len;
        if (touched("--seed")) rc.train.seed = flags.train.seed;
        if (touched("--threshold-start")) rc.thresholds.start = flags.thresholds.start;
        if (touched("--threshold-end")) rc.thresholds.end = flags.thresholds.end;
        if (touched("--threshold-match")) rc.thresholds.match = flags.thresholds.match;
        if (touched("--lowercase")) rc.lowercase = flags.lowercase;
        if (touched("--train")) rc.train_corpus = flags.train_corpus;
        if (touched("--dev")) rc.dev_corpus = flags.dev_corpus;
        if (touched("--out") && sub == tr) rc.out_dir = flags.out_dir;
        if (touched("--max-epochs")) rc.train.max_epochs = flags.train.max_epochs;
        if (touched("--batch-size")) rc.train.batch_size = flags.train.batch_size;
        if (touched("--lr")) rc.train.learning_rate = flags.train.learning_rate;
        if (touched("--weight-decay")) rc.train.weight_decay = flags.train.weight_decay;
        if (touched("--patience")) rc.train.patience = flags.train.patience;
        if (touched("--selection-metric"))
          rc.train.selection_metric = flags.train.selection_metric;
        if (touched("--dropout")) rc.encoder.dropout_prob = flags.encoder.dropout_prob;
        if (touched("--hidden-size")) rc.encoder.hidden_size = flags.encoder.hidden_size;
        if (touched("--num-layers")) rc.encoder.num_layers = flags.encoder.num_layers;
        if (touched("--num-heads")) rc.encoder.num_heads = flags.encoder.num_heads;
        if (touched("--vocab-size")) rc.encoder.vocab_size = flags.encoder.vocab_size;
      }
    }
    if (!freeze_str.empty()) rc.train.freeze = freeze_policy_from_string(freeze_str);

    if (convert->parsed())
      return cmd_convert(cv_in, cv_out, cv_in_format, cv_out_format, cv_templates, cv_glosses);
    if (lint->parsed()) return cmd_lint_templates(lt_templates, lt_corpus, lt_labels);
    if (tr->parsed()) return cmd_train(rc, init_checkpoint);
    if (pr->parsed()) {
      const CLI::Option* hs = pr->get_option_no_throw("--hidden-size");
      return cmd_predict(rc, pd_checkpoint, pd_corpus, pd_out, hs && hs->count() > 0);
    }
    if (ev->parsed()) return cmd_evaluate(rc, ev_checkpoint, ev_corpus, ev_report, ev_dump);
    if (gc->parsed()) return cmd_gradcheck(rc, gc_tolerance);
  } catch (const NonFiniteLossError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
