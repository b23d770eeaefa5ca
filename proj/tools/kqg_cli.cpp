// kqg: extraction, statistics, training, generation, evaluation and
// gradient checking.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include "json.hpp"
#include "kqg/errors.hpp"
#include "kqg/kb_extract.hpp"
#include "kqg/metrics.hpp"
#include "kqg/nn/gradcheck.hpp"
#include "kqg/pipeline.hpp"
#include "kqg/text.hpp"

namespace {

using namespace kqg;

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<long> seed;
  std::vector<std::string> overrides;
  std::string out;

  std::string conceptnet, wordnet, corpus, stopwords;
  std::string dev, mode, model_dir, hyp, ref, task;
  bool no_tg = false, no_rc = false, no_knowledge = false;
  std::optional<int> beam;
};

Config resolve_config(const Options& o) {
  Config cfg;
  try {
    if (!o.config_path.empty()) cfg.load_file(o.config_path);
    cfg.apply_env([](const char* name) { return std::getenv(name); });
    for (const auto& kv : o.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) cfg.set("seed", std::to_string(*o.seed));
    if (!o.mode.empty()) cfg.set("mode", o.mode);
    if (o.no_tg) cfg.set("no_tg", "true");
    if (o.no_rc) cfg.set("no_rc", "true");
    if (o.no_knowledge) cfg.set("no_knowledge", "true");
    if (o.beam) cfg.set("beam", std::to_string(*o.beam));
    // Fail early on malformed values.
    train_config_from(cfg);
    ablation_from(cfg);
    beam_config_from(cfg);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void emit_json(const nlohmann::json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw ParseError("cannot write '" + out + "'");
  f << j.dump(2) << '\n';
}

int cmd_extract(const Options& o) {
  if (o.conceptnet.empty() && o.wordnet.empty()) throw UsageError("extract needs --conceptnet and/or --wordnet");
  std::vector<TripleStore> stores;
  if (!o.conceptnet.empty()) stores.push_back(load_knowledge_base(o.conceptnet, KbSource::ConceptNet));
  if (!o.wordnet.empty()) stores.push_back(load_knowledge_base(o.wordnet, KbSource::WordNet));
  std::vector<const TripleStore*> ptrs;
  for (const auto& s : stores) ptrs.push_back(&s);
  const StopWords stop = o.stopwords.empty() ? default_stopwords() : load_stopwords(o.stopwords);

  auto samples = load_samples(o.corpus);
  const auto summary = annotate_corpus(samples, ptrs, stop);
  write_samples(o.out, samples);

  const auto parts = partition_dataset(samples);
  nlohmann::json manifest;
  manifest["equipped"] = nlohmann::json::array();
  manifest["pure"] = nlohmann::json::array();
  for (const auto& s : parts.equipped) manifest["equipped"].push_back(s.id);
  for (const auto& s : parts.pure) manifest["pure"].push_back(s.id);
  emit_json(manifest, o.out + ".partition.json");
  std::cerr << "extract: " << parts.equipped.size() << " equipped, " << parts.pure.size() << " pure";
  for (const auto& [src, n] : summary.equipped_by_source) std::cerr << ", " << source_name(src) << ' ' << n;
  std::cerr << '\n';
  return 0;
}

int cmd_stats(const Options& o) {
  const auto parts = partition_dataset(load_samples(o.corpus));
  emit_json(stats_to_json(stats_report(parts.equipped, parts.pure)), o.out);
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto samples = load_samples(o.corpus);
  const auto dev = o.dev.empty() ? std::vector<TrainingSample>{} : load_samples(o.dev);
  const auto vocabs = build_vocabularies(samples, static_cast<int>(cfg.integer("max_vocab")));
  UnifiedModel model(model_config_from(cfg, vocabs), ablation_from(cfg), static_cast<std::uint64_t>(cfg.integer("seed")),
                     cfg.real("init_range"));
  auto parts = partition_dataset(samples);
  const auto tcfg = train_config_from(cfg);
  Trainer trainer(model, tcfg, vocabs, std::move(parts.equipped), std::move(parts.pure), dev);
  const auto result = trainer.run([](const StepLog& l) {
    if (l.step % 50 == 0 || l.dev_bleu4)
      std::cerr << "step " << l.step << ' ' << phase_name(l.phase) << " L=" << l.loss.total << " L_q=" << l.loss.q
                << " L_r=" << l.loss.r << " L_t=" << l.loss.t << (l.dev_bleu4 ? " dev_bleu4=" + std::to_string(*l.dev_bleu4) : "")
                << '\n';
  });
  save_model(o.out, cfg, vocabs, model);
  write_metrics_csv(std::filesystem::path(o.out) / "metrics.csv", result.log);
  if (result.best_dev_bleu4)
    std::cerr << "best dev BLEU-4 " << *result.best_dev_bleu4 << " at step " << result.best_step << ", averaged "
              << result.averaged_steps.size() << " checkpoints\n";
  return 0;
}

int cmd_generate(const Options& o) {
  auto loaded = load_model(o.model_dir);
  auto beam = beam_config_from(loaded.config);
  if (o.beam) beam.beam = *o.beam;
  std::ofstream out(o.out);
  if (!out) throw ParseError("cannot write '" + o.out + "'");
  for (const auto& s : load_samples(o.corpus)) {
    nlohmann::json j;
    j["id"] = s.id;
    j["question"] = generate_question(*loaded.model, loaded.vocabs, s, beam);
    out << j.dump() << '\n';
  }
  return 0;
}

std::vector<std::pair<std::string, Tokens>> read_questions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::vector<std::pair<std::string, Tokens>> out;
  std::size_t line = 0;
  for (std::string text; std::getline(in, text);) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what(), line);
    }
    if (!j.is_object() || !j.contains("question") || !j["question"].is_array())
      throw ParseError(path + ": expected an object with a 'question' token list", line);
    Tokens toks;
    for (const auto& t : j["question"]) {
      if (!t.is_string()) throw ParseError(path + ": question tokens must be strings", line);
      toks.push_back(normalize_token(t.get<std::string>()));
    }
    std::erase(toks, std::string());
    out.emplace_back(j.value("id", std::to_string(out.size())), std::move(toks));
  }
  return out;
}

int cmd_evaluate(const Options& o) {
  if (!o.task.empty()) {
    if (o.model_dir.empty() || o.corpus.empty()) throw UsageError("--task needs --model and --corpus");
    auto loaded = load_model(o.model_dir);
    const auto parts = partition_dataset(load_samples(o.corpus));
    EvalReport report;
    report.samples = parts.equipped.size();
    if (o.task == "rc") {
      std::vector<int> pred, gold;
      for (const auto& s : parts.equipped) {
        pred.push_back(static_cast<int>(predict_relation(*loaded.model, loaded.vocabs, s)));
        gold.push_back(static_cast<int>(select_training_triple(s.triples)->triple.relation));
      }
      report.rc_accuracy = rc_accuracy(pred, gold);
    } else if (o.task == "tg") {
      std::vector<Tokens> hyp, ref;
      const int max_len = static_cast<int>(loaded.config.integer("max_len"));
      for (const auto& s : parts.equipped) {
        hyp.push_back(generate_tail(*loaded.model, loaded.vocabs, s, max_len));
        ref.push_back(select_training_triple(s.triples)->triple.tail_tokens);
      }
      report.tg_bleu1 = tg_bleu1(hyp, ref);
    } else {
      throw UsageError("--task must be rc or tg");
    }
    nlohmann::json j = {{"samples", report.samples}};
    if (report.rc_accuracy) j["rc_accuracy"] = *report.rc_accuracy;
    if (report.tg_bleu1) j["tg_bleu1"] = *report.tg_bleu1;
    emit_json(j, o.out);
    return 0;
  }
  if (o.hyp.empty() || o.ref.empty()) throw UsageError("evaluate needs --hyp and --ref (or --task)");
  const auto hyp = read_questions(o.hyp);
  const auto ref = read_questions(o.ref);
  if (hyp.size() != ref.size())
    throw ValidationError("evaluate: " + std::to_string(hyp.size()) + " hypotheses vs " + std::to_string(ref.size()) +
                          " references");
  std::vector<Tokens> h, r;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (hyp[i].first != ref[i].first)
      throw ValidationError("evaluate: id mismatch at line " + std::to_string(i + 1) + ": '" + hyp[i].first + "' vs '" +
                            ref[i].first + "'");
    h.push_back(hyp[i].second);
    r.push_back(ref[i].second);
  }
  emit_json(report_to_json(evaluate_questions(h, r)), o.out);
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const auto cfg = resolve_config(o);
  auto samples = partition_dataset(load_samples(o.corpus)).equipped;
  if (samples.size() < 2) throw ValidationError("gradcheck needs at least 2 knowledge-equipped samples");
  samples.resize(2);
  const auto vocabs = build_vocabularies(samples, static_cast<int>(cfg.integer("max_vocab")));
  UnifiedModel model(model_config_from(cfg, vocabs), ablation_from(cfg), static_cast<std::uint64_t>(cfg.integer("seed")),
                     cfg.real("init_range"));
  const auto batch = encode_batch(samples, vocabs.words, vocabs.pos, vocabs.ner);

  nn::GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.floor = 1e-4;
  opts.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  const std::vector<std::pair<std::string, Var LossVars::*>> parts = {
      {"L_q", &LossVars::q}, {"L_r", &LossVars::r}, {"L_t", &LossVars::t}, {"L", &LossVars::total}};
  nlohmann::json report;
  bool ok = true;
  for (const auto& [name, member] : parts) {
    const auto res = nn::grad_check<double>(
        model.params(), [&, member = member](Tape& tape) { return model.forward(tape, batch, true).*member; }, opts);
    report[name] = {{"max_rel_error", res.max_rel_error}, {"worst_param", res.worst_param}, {"checked", res.checked}};
    ok = ok && res.max_rel_error < 1e-4;
  }
  emit_json(report, o.out);
  return ok ? 0 : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-aware question generation toolkit"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "random seed (overrides config)");
    sub->add_option("--set", o.overrides, "key=value config override (repeatable)");
    sub->add_option("--out", o.out, "output path");
  };

  auto* extract = app.add_subcommand("extract", "annotate a corpus with aligned knowledge triples");
  common(extract);
  extract->add_option("--conceptnet", o.conceptnet, "ConceptNet TSV dump");
  extract->add_option("--wordnet", o.wordnet, "WordNet TSV dump");
  extract->add_option("--corpus", o.corpus, "input samples (JSONL)")->required();
  extract->add_option("--stopwords", o.stopwords, "stopword list, one per line");
  extract->get_option("--out")->required();

  auto* stats = app.add_subcommand("stats", "corpus statistics as JSON");
  common(stats);
  stats->add_option("--corpus", o.corpus, "annotated samples (JSONL)")->required();

  auto* train = app.add_subcommand("train", "train a model directory");
  common(train);
  train->add_option("--corpus", o.corpus, "annotated training samples (JSONL)")->required();
  train->add_option("--dev", o.dev, "dev samples for checkpoint selection");
  train->add_option("--mode", o.mode, "itf | equipped-only | pure-only");
  train->add_flag("--no-tg", o.no_tg, "drop tail concept generation");
  train->add_flag("--no-rc", o.no_rc, "drop relation classification");
  train->add_flag("--no-knowledge", o.no_knowledge, "plain QG baseline");
  train->get_option("--out")->required();

  auto* generate = app.add_subcommand("generate", "generate questions with beam search");
  common(generate);
  generate->add_option("--model", o.model_dir, "model directory")->required();
  generate->add_option("--corpus", o.corpus, "samples (JSONL)")->required();
  generate->add_option("--beam", o.beam, "beam width");
  generate->get_option("--out")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score questions or auxiliary tasks");
  common(evaluate);
  evaluate->add_option("--hyp", o.hyp, "hypotheses (JSONL with id, question)");
  evaluate->add_option("--ref", o.ref, "references (JSONL with id, question)");
  evaluate->add_option("--task", o.task, "rc | tg");
  evaluate->add_option("--model", o.model_dir, "model directory for --task");
  evaluate->add_option("--corpus", o.corpus, "annotated samples for --task");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss component");
  common(gradcheck);
  gradcheck->add_option("--corpus", o.corpus, "annotated samples (JSONL)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (extract->parsed()) return cmd_extract(o);
    if (stats->parsed()) return cmd_stats(o);
    if (train->parsed()) return cmd_train(o);
    if (generate->parsed()) return cmd_generate(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (gradcheck->parsed()) return cmd_gradcheck(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
