// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kqg/checkpoint.hpp"
#include "kqg/config.hpp"
#include "kqg/kb_extract.hpp"
#include "kqg/metrics.hpp"
#include "kqg/nn/gradcheck.hpp"
#include "kqg/pipeline.hpp"
#include "kqg/trainer.hpp"

using namespace kqg;
using Mat = Eigen::MatrixXd;
using Clock = std::chrono::steady_clock;

namespace {

std::string data(const std::string& name) { return std::string(KQG_DATA_DIR) + "/" + name; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<TrainingSample> equipped_samples() {
  return partition_dataset(load_samples(data("mini_annotated.jsonl"))).equipped;
}

Config toy_config() {
  Config cfg;
  cfg.load_file(data("toy.cfg"));
  return cfg;
}

std::span<const int> copy_row(const Batch& b, int row) {
  return {b.copy_ids.row(row).data(), static_cast<std::size_t>(b.copy_ids.cols())};
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto cfg = toy_config();
  auto samples = equipped_samples();
  samples.resize(2);
  const auto vocabs = build_vocabularies(samples, 5000);
  UnifiedModel model(model_config_from(cfg, vocabs), {}, 7, 0.1);
  const auto batch = encode_batch(samples, vocabs.words, vocabs.pos, vocabs.ner);
  nn::GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.floor = 1e-4;
  opts.coords_per_param = 4;
  std::ostringstream detail;
  double worst = 0.0;
  const std::vector<std::pair<const char*, Var LossVars::*>> parts = {
      {"L_q", &LossVars::q}, {"L_r", &LossVars::r}, {"L_t", &LossVars::t}, {"L", &LossVars::total}};
  for (const auto& [name, member] : parts) {
    const auto res = nn::grad_check<double>(
        model.params(), [&, member = member](Tape& tape) { return model.forward(tape, batch, true).*member; }, opts);
    worst = std::max(worst, res.max_rel_error);
    detail << name << ' ' << fmt("%.2e", res.max_rel_error) << ", ";
  }
  const double secs = seconds_since(t0);
  detail << fmt("%.1f s", secs);
  return {worst < 1e-4 && secs < 60.0, detail.str()};
}

Outcome loss_additivity() {
  const auto cfg = toy_config();
  const auto samples = equipped_samples();
  const auto vocabs = build_vocabularies(samples, 5000);
  std::mt19937_64 rng(17);
  std::unique_ptr<UnifiedModel> model;
  int exact = 0;
  const int total = 1000;
  for (int i = 0; i < total; ++i) {
    if (i % 100 == 0) model = std::make_unique<UnifiedModel>(model_config_from(cfg, vocabs), Ablation{}, rng(), 0.3);
    std::vector<TrainingSample> pick;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < n; ++k) pick.push_back(samples[rng() % samples.size()]);
    Tape tape;
    tape.set_grad_enabled(false);
    const auto loss = model->forward(tape, encode_batch(pick, vocabs.words, vocabs.pos, vocabs.ner), true).values();
    if (loss.total == (loss.q + loss.r) + loss.t) ++exact;
  }
  return {exact == total, std::to_string(exact) + "/" + std::to_string(total) + " batches exact"};
}

// Independent scan: every triple of every dump, both orientations.
std::vector<std::string> brute_force_alignment(const TrainingSample& s,
                                               const std::vector<std::pair<std::string, KbSource>>& dumps,
                                               const StopWords& stop) {
  std::set<std::string> passage_keys;
  for (const auto& w : s.passage) {
    const auto t = normalize_token(w);
    if (!t.empty() && !stop.count(t)) passage_keys.insert(t);
  }
  const auto passage = normalize_tokens(s.passage);
  const auto question = normalize_tokens(s.question);
  const auto occurs = [](const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
      bool all = true;
      for (std::size_t k = 0; k < needle.size() && all; ++k) all = hay[i + k] == needle[k];
      if (all) return true;
    }
    return false;
  };
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& [path, source] : dumps) {
    std::ifstream in(path);
    std::set<std::string> in_dump;
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#') continue;
      const auto a = line.find('\t'), b = line.find('\t', a + 1);
      const auto head = concept_tokens(line.substr(0, a));
      const auto rel = std::string(relation_name(parse_relation(line.substr(a + 1, b - a - 1))));
      const auto tail = concept_tokens(line.substr(b + 1));
      const auto join = [](const std::vector<std::string>& v) {
        std::string r;
        for (const auto& w : v) r += (r.empty() ? "" : " ") + w;
        return r;
      };
      if (!in_dump.insert(join(head) + "|" + rel + "|" + join(tail)).second) continue;
      bool retrieved = false;
      for (const auto* c : {&head, &tail})
        for (const auto& w : *c) retrieved = retrieved || passage_keys.count(w);
      if (!retrieved) continue;
      std::string key;
      if (occurs(passage, head) && occurs(question, tail))
        key = join(head) + "|" + rel + "|" + join(tail) + "|fwd";
      else if (occurs(passage, tail) && occurs(question, head))
        key = join(tail) + "|" + rel + "|" + join(head) + "|swap";
      if (key.empty()) continue;
      if (seen.insert(key.substr(0, key.rfind('|'))).second)
        out.push_back(key + "|" + std::string(source_name(source)));
    }
  }
  return out;
}

Outcome extraction_oracle() {
  const auto t0 = Clock::now();
  const std::vector<std::pair<std::string, KbSource>> dumps = {{data("conceptnet_mini.tsv"), KbSource::ConceptNet},
                                                                {data("wordnet_mini.tsv"), KbSource::WordNet}};
  std::vector<TripleStore> stores;
  for (const auto& [path, src] : dumps) stores.push_back(load_knowledge_base(path, src));
  const std::vector<const TripleStore*> ptrs{&stores[0], &stores[1]};
  auto samples = load_samples(data("mini_corpus.jsonl"));
  annotate_corpus(samples, ptrs, default_stopwords());
  int agree = 0;
  bool table1 = false, city_dropped = true;
  for (const auto& s : samples) {
    std::vector<std::string> got;
    for (const auto& a : s.triples)
      got.push_back(a.triple.head + "|" + std::string(relation_name(a.triple.relation)) + "|" + a.triple.tail + "|" +
                    (a.swapped ? "swap" : "fwd") + "|" + std::string(source_name(a.triple.source)));
    if (got == brute_force_alignment(s, dumps, default_stopwords())) ++agree;
    if (s.id == "s01")
      for (const auto& a : s.triples) {
        if (a.triple.head == "council" && a.triple.relation == Relation::RelatedTo && a.triple.tail == "governing")
          table1 = true;
        if (a.triple.head == "council" && a.triple.tail == "city") city_dropped = false;
      }
  }
  const double secs = seconds_since(t0);
  const bool ok = agree == static_cast<int>(samples.size()) && table1 && city_dropped && secs < 5.0;
  return {ok, std::to_string(agree) + "/" + std::to_string(samples.size()) + " samples agree, table-1 triple " +
                  (table1 ? "kept" : "missing") + ", city " + (city_dropped ? "dropped" : "kept") + ", " +
                  fmt("%.2f s", secs)};
}

Outcome itf_invariants() {
  const auto cfg = toy_config();
  const auto parts = partition_dataset(load_samples(data("mini_annotated.jsonl")));
  const auto vocabs = build_vocabularies(load_samples(data("mini_annotated.jsonl")), 5000);
  UnifiedModel model(model_config_from(cfg, vocabs), {}, 3, 0.1);
  auto tc = train_config_from(cfg);
  tc.itf = {5, 3};
  tc.mode = TrainMode::Itf;
  tc.eval_every = 0;
  Trainer trainer(model, tc, vocabs, parts.equipped, parts.pure);
  std::vector<Phase> phases;
  int frozen_ok = 0, pure_steps = 0, core_moved = 0;
  auto know = model.params().group_hash(nn::Group::Knowledge);
  auto core = model.params().group_hash(nn::Group::QgCore);
  trainer.run([&](const StepLog& log) {
    phases.push_back(log.phase);
    const auto k = model.params().group_hash(nn::Group::Knowledge);
    const auto c = model.params().group_hash(nn::Group::QgCore);
    if (log.phase == Phase::Pure) {
      ++pure_steps;
      if (k == know) ++frozen_ok;
    }
    if (c != core && log.grad_norm > 0) ++core_moved;
    know = k;
    core = c;
  });
  const bool same = phases == itf_schedule({5, 3});
  const bool ok = same && frozen_ok == pure_steps && core_moved == static_cast<int>(phases.size());
  return {ok, std::string("schedule ") + (same ? "matches" : "differs") + ", knowledge frozen in " +
                  std::to_string(frozen_ok) + "/" + std::to_string(pure_steps) + " pure steps, qg_core moved in " +
                  std::to_string(core_moved) + "/" + std::to_string(phases.size()) + " steps"};
}

// Shared by the overfit and copy criteria.
struct OverfitRun {
  bool ran = false;
  double l_q = 0.0;
  int exact = 0;
  long steps = 0;
  double secs = 0.0;
  std::string copy_sample;
  std::string copy_token;
  bool copy_reproduced = false;
  bool copy_used_extended_id = false;
  double copy_p_gen = 1.0;
  std::size_t vocab_size = 0;
};

OverfitRun& overfit_run() {
  static OverfitRun run;
  if (run.ran) return run;
  run.ran = true;
  const auto t0 = Clock::now();
  auto samples = equipped_samples();
  samples.resize(10);

  // A question token that occurs only in its own passage becomes out of vocabulary.
  std::map<std::string, int> owners;
  for (const auto& s : samples) {
    std::set<std::string> toks(s.passage.begin(), s.passage.end());
    toks.insert(s.question.begin(), s.question.end());
    for (const auto& t : toks) ++owners[t];
  }
  for (const auto& s : samples) {
    for (const auto& q : s.question)
      if (owners[q] == 1 && std::find(s.passage.begin(), s.passage.end(), q) != s.passage.end() &&
          std::isalpha(static_cast<unsigned char>(q[0]))) {
        run.copy_sample = s.id;
        run.copy_token = q;
        break;
      }
    if (!run.copy_sample.empty()) break;
  }
  auto vocabs = build_vocabularies(samples, 200);
  std::vector<std::string> regular(vocabs.words.tokens().begin() + Vocabulary::kReserved, vocabs.words.tokens().end());
  std::erase(regular, run.copy_token);
  vocabs.words = Vocabulary(regular);
  run.vocab_size = static_cast<std::size_t>(vocabs.words.size());

  ModelConfig mc;
  mc.vocab_size = vocabs.words.size();
  mc.pos_tags = vocabs.pos.size();
  mc.ner_tags = vocabs.ner.size();
  mc.hidden_size = 64;
  mc.layers = 2;
  mc.word_dim = 32;
  mc.bio_dim = mc.ner_dim = mc.pos_dim = 4;
  mc.dropout = 0.0;
  UnifiedModel model(mc, {}, 11, 0.1);
  TrainConfig tc;
  tc.mode = TrainMode::EquippedOnly;
  tc.steps = 2000;
  tc.batch_size = 10;
  tc.adam.lr = 0.005;
  tc.seed = 11;
  Trainer trainer(model, tc, vocabs, samples, {});
  const auto batch = encode_batch(samples, vocabs.words, vocabs.pos, vocabs.ner);

  const auto evaluate = [&] {
    Tape tape;
    tape.set_grad_enabled(false);
    run.l_q = model.forward(tape, batch, true).q.scalar();
    run.exact = 0;
    for (const auto& s : samples) {
      const auto q = generate_question(model, vocabs, s, BeamConfig{1, 30, 0.7});
      if (q == s.question) ++run.exact;
      if (s.id == run.copy_sample) run.copy_reproduced = q == s.question;
    }
  };
  for (long step = 1; step <= tc.steps; ++step) {
    trainer.step(Phase::Equipped);
    run.steps = step;
    if (step % 50 == 0) {
      evaluate();
      if (run.l_q < 0.1 && run.exact >= 9 && run.copy_reproduced) break;
    }
  }

  // Inspect the copy step of the chosen sample.
  for (int row = 0; row < batch.size(); ++row) {
    if (samples[static_cast<std::size_t>(row)].id != run.copy_sample) continue;
    Tape tape;
    tape.set_grad_enabled(false);
    const auto enc = model.qg().encode_passage(tape, batch, row);
    const auto trip = model.aux().encode_triple(tape, *batch.triples[static_cast<std::size_t>(row)]);
    const auto hyp =
        greedy_decode(model.qg(), tape, enc, &trip.K, copy_row(batch, row), batch.extended_size(row), 30);
    auto state = model.qg().initial_state(tape, enc);
    int prev = Vocabulary::kBos;
    for (int id : hyp.ids) {
      auto [dist, next] =
          model.qg().decode_step(tape, prev, state, enc, &trip.K, copy_row(batch, row), batch.extended_size(row));
      if (id >= batch.vocab_size) {
        run.copy_used_extended_id = true;
        run.copy_p_gen = next.p_gen.scalar();
      }
      state = next;
      prev = id;
    }
  }
  run.secs = seconds_since(t0);
  return run;
}

Outcome overfit() {
  const auto& r = overfit_run();
  const bool ok = r.l_q < 0.1 && r.exact >= 9 && r.steps <= 2000 && r.secs < 600.0 && r.vocab_size <= 200;
  return {ok, "L_q " + fmt("%.4f", r.l_q) + ", " + std::to_string(r.exact) + "/10 exact after " +
                  std::to_string(r.steps) + " steps, vocab " + std::to_string(r.vocab_size) + ", " +
                  fmt("%.0f s", r.secs)};
}

Outcome copy_mechanism() {
  const auto& r = overfit_run();
  const bool ok = !r.copy_token.empty() && r.copy_reproduced && r.copy_used_extended_id && r.copy_p_gen < 1.0;
  return {ok, "sample " + r.copy_sample + " token '" + r.copy_token + "' " +
                  (r.copy_reproduced ? "reproduced" : "not reproduced") + ", p_g at copy step " +
                  fmt("%.3f", r.copy_p_gen)};
}

Outcome ablation_structure() {
  const auto cfg = toy_config();
  const auto samples = equipped_samples();
  const auto vocabs = build_vocabularies(samples, 5000);
  struct Variant {
    const char* name;
    Ablation ablation;
  };
  const std::vector<Variant> variants = {
      {"-TG", {true, true, false}}, {"-RC", {true, false, true}}, {"-TG-RC", {true, false, false}}};
  bool ok = true;
  std::ostringstream detail;
  for (const auto& v : variants) {
    UnifiedModel model(model_config_from(cfg, vocabs), v.ablation, 5, 0.1);
    auto tc = train_config_from(cfg);
    tc.mode = TrainMode::EquippedOnly;
    Trainer trainer(model, tc, vocabs, samples, {});
    const auto log = trainer.step(Phase::Equipped);
    const bool r_ok = v.ablation.rc ? log.loss.r > 0 : log.loss.r == 0.0;
    const bool t_ok = v.ablation.tg ? log.loss.t > 0 : log.loss.t == 0.0;
    ok = ok && r_ok && t_ok && log.loss.q > 0;
    detail << v.name << " (L_r " << log.loss.r << ", L_t " << log.loss.t << ") ";
  }
  return {ok, detail.str()};
}

Outcome metric_oracles() {
  const auto split = [](const std::string& s) {
    std::istringstream in(s);
    Tokens out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  const std::vector<std::pair<std::string, std::string>> toy = {
      {"what is the capital of france ?", "what is the capital city of france ?"},
      {"who wrote the essay about climate change ?", "what did the pupil write about climate change ?"},
      {"when did marie curie win the prize ?", "when did marie curie win the nobel prize ?"},
      {"where does the river flow ?", "where does the river flow ?"},
      {"how many cities did the torch pass ?", "how many cities did the olympic flame pass through ?"},
  };
  std::vector<Tokens> h, r;
  for (const auto& [a, b] : toy) {
    h.push_back(split(a));
    r.push_back(split(b));
  }
  // Reference values from nltk corpus_bleu.
  const double ref[4] = {77.91548391424212, 69.94498691331982, 63.26939095050774, 56.31414040364503};
  double worst = 0.0;
  for (int n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(bleu(h, r, n) - ref[n - 1]));
  const double rl = rouge_l({split("a b c")}, {split("a c d")});
  const auto id = evaluate_questions(r, r);
  const bool identical = std::abs(id.bleu[3] - 100) < 1e-9 && std::abs(id.rouge_l - 100) < 1e-9 &&
                         std::abs(id.meteor - 100) < 1e-9;
  const bool ok = worst < 0.1 && std::abs(rl - 66.67) <= 0.01 && identical;
  return {ok, "max BLEU deviation " + fmt("%.2e", worst) + ", ROUGE-L " + fmt("%.4f", rl) + ", identical corpus " +
                  (identical ? "100" : "below 100")};
}

Outcome distribution_hygiene() {
  const auto cfg = toy_config();
  const auto all = load_samples(data("mini_annotated.jsonl"));
  const auto vocabs = build_vocabularies(all, 5000);
  std::mt19937_64 rng(23);
  int steps = 0, bad_sum = 0, bad_pad = 0, beam_mismatch = 0, beam_runs = 0;
  std::unique_ptr<UnifiedModel> model;
  while (steps < 1000) {
    if (steps % 200 == 0) model = std::make_unique<UnifiedModel>(model_config_from(cfg, vocabs), Ablation{}, rng(), 0.5);
    std::vector<TrainingSample> pick;
    for (int k = 0; k < 4; ++k) pick.push_back(all[rng() % all.size()]);
    const auto batch = encode_batch(pick, vocabs.words, vocabs.pos, vocabs.ner);
    Tape tape;
    tape.set_grad_enabled(false);
    for (int row = 0; row < batch.size() && steps < 1000; ++row) {
      const auto enc = model->qg().encode_passage(tape, batch, row);
      std::optional<TripleEncoding> trip;
      if (batch.triples[static_cast<std::size_t>(row)])
        trip = model->aux().encode_triple(tape, *batch.triples[static_cast<std::size_t>(row)]);
      const Var* memory = trip ? &trip->K : nullptr;
      const int ext = batch.extended_size(row);
      auto state = model->qg().initial_state(tape, enc);
      std::optional<DecoderState> tg_state;
      if (trip) tg_state = model->aux().tg_initial_state(tape, trip->T);
      for (int t = 0; t < 10 && steps < 1000; ++t, ++steps) {
        const int prev = static_cast<int>(rng() % static_cast<std::uint64_t>(ext));
        auto [dist, next] = model->qg().decode_step(tape, prev, state, enc, memory, copy_row(batch, row), ext);
        std::vector<std::pair<OutputDistribution, DecoderState>> emitted{{dist, next}};
        if (tg_state) {
          auto [tdist, tnext] = model->aux().tg_decode_step(tape, prev, *tg_state, enc, trip->T, copy_row(batch, row), ext);
          emitted.emplace_back(tdist, tnext);
          tg_state = tnext;
        }
        for (const auto& [d, s] : emitted) {
          if (std::abs(d.mixture.value().sum() - 1.0) > 1e-9 || std::abs(d.p_vocab.value().sum() - 1.0) > 1e-9) ++bad_sum;
          for (int i = enc.length; i < static_cast<int>(enc.mask.size()); ++i)
            if (s.alpha.value()(i, 0) != 0.0) ++bad_pad;
        }
        state = next;
      }
      const auto beam = beam_search(model->qg(), tape, enc, memory, copy_row(batch, row), ext, BeamConfig{1, 15, 0.7});
      const auto greedy = greedy_decode(model->qg(), tape, enc, memory, copy_row(batch, row), ext, 15);
      ++beam_runs;
      if (beam.ids != greedy.ids) ++beam_mismatch;
    }
  }
  const bool ok = bad_sum == 0 && bad_pad == 0 && beam_mismatch == 0;
  return {ok, std::to_string(steps) + " steps: " + std::to_string(bad_sum) + " unnormalized, " +
                  std::to_string(bad_pad) + " pad leaks, beam-1 vs greedy " +
                  std::to_string(beam_runs - beam_mismatch) + "/" + std::to_string(beam_runs) + " equal"};
}

// Synthetic relation data: the tail concept carries the class.
struct RcSet {
  std::vector<TrainingSample> train, held_out;
};

RcSet synthetic_rc() {
  const std::vector<std::string> heads = {"stone", "river", "cloud", "lamp",  "chair", "garden", "window", "bottle",
                                          "field", "road",  "tower", "shell", "coin",  "mirror", "basket", "rope"};
  const std::vector<std::string> fillers = {"the", "a", "near", "old", "big", "small", "was", "seen"};
  const std::array<int, kRelationCount> counts = {36, 30, 24, 18, 15, 12};
  std::mt19937_64 rng(31);
  RcSet out;
  int id = 0;
  for (int c = 0; c < kRelationCount; ++c) {
    for (int i = 0; i < counts[static_cast<std::size_t>(c)] + 6; ++i) {
      TrainingSample s;
      s.id = "rc" + std::to_string(id++);
      const auto head = heads[rng() % heads.size()];
      const auto tail = "cls" + std::to_string(c) + "w" + std::to_string(i % 3);
      s.passage = {fillers[rng() % fillers.size()], head, fillers[rng() % fillers.size()], tail,
                   fillers[rng() % fillers.size()]};
      s.question = {"what", "about", tail, "?"};
      s.answer = {3, 3};
      s.pos.assign(s.passage.size(), "NN");
      s.ner.assign(s.passage.size(), "O");
      auto triple = make_triple(head, kAllRelations[static_cast<std::size_t>(c)], tail, KbSource::ConceptNet);
      s.triples = align_filter({*triple}, s.passage, s.question);
      (i < counts[static_cast<std::size_t>(c)] ? out.train : out.held_out).push_back(s);
    }
  }
  return out;
}

Outcome rc_separability() {
  const auto data_set = synthetic_rc();
  const auto vocabs = build_vocabularies(data_set.train, 5000);
  ModelConfig mc;
  mc.vocab_size = vocabs.words.size();
  mc.pos_tags = vocabs.pos.size();
  mc.ner_tags = vocabs.ner.size();
  mc.hidden_size = 16;
  mc.layers = 1;
  mc.word_dim = 12;
  mc.bio_dim = mc.ner_dim = mc.pos_dim = 2;
  mc.dropout = 0.0;
  UnifiedModel model(mc, {}, 13, 0.1);
  auto state = nn::make_adam_state(model.params());
  nn::AdamConfig adam;
  adam.lr = 0.01;

  const auto accuracy = [&](const std::vector<TrainingSample>& set) {
    std::vector<int> pred, gold;
    for (const auto& s : set) {
      pred.push_back(static_cast<int>(predict_relation(model, vocabs, s)));
      gold.push_back(static_cast<int>(s.triples[0].triple.relation));
    }
    return rc_accuracy(pred, gold);
  };

  std::mt19937_64 rng(37);
  double train_acc = 0.0, held = 0.0;
  int step = 0;
  for (step = 1; step <= 1000; ++step) {
    std::vector<TrainingSample> batch_samples;
    for (int k = 0; k < 8; ++k) batch_samples.push_back(data_set.train[rng() % data_set.train.size()]);
    const auto batch = encode_batch(batch_samples, vocabs.words, vocabs.pos, vocabs.ner);
    Tape tape(true, static_cast<std::uint64_t>(step));
    std::vector<Var> losses;
    for (int row = 0; row < batch.size(); ++row) {
      const auto enc = model.qg().encode_passage(tape, batch, row);
      const auto& triple = *batch.triples[static_cast<std::size_t>(row)];
      const auto R = model.aux().encode_head_tail(tape, triple.head_ids, triple.tail_ids);
      const auto co = model.aux().coattend(R, enc.H_hat, enc.mask);
      losses.push_back(rc_loss(model.aux().classify_relation(co.R_hat), triple.relation));
    }
    const auto loss = nn::affine(nn::sum(nn::concat_rows(losses)), 1.0 / double(losses.size()));
    model.params().zero_grad();
    tape.backward(loss);
    nn::clip_grad_norm<double>(model.params(), 5.0);
    nn::adam_step<double>(model.params(), state, adam);
    if (step % 50 == 0) {
      train_acc = accuracy(data_set.train);
      held = accuracy(data_set.held_out);
      if (train_acc == 100.0 && held > 90.0) break;
    }
  }

  // Majority baseline: the most frequent training class, scored on held-out labels.
  std::array<int, kRelationCount> freq{};
  for (const auto& s : data_set.train) ++freq[static_cast<std::size_t>(s.triples[0].triple.relation)];
  const int majority = static_cast<int>(std::max_element(freq.begin(), freq.end()) - freq.begin());
  std::vector<int> gold;
  for (const auto& s : data_set.held_out) gold.push_back(static_cast<int>(s.triples[0].triple.relation));
  const double baseline = rc_accuracy(std::vector<int>(gold.size(), majority), gold);
  const bool ok = train_acc == 100.0 && held > 90.0 && held > baseline && step <= 1000;
  return {ok, "train " + fmt("%.1f", train_acc) + "%, held-out " + fmt("%.1f", held) + "% vs majority " +
                  fmt("%.1f", baseline) + "% after " + std::to_string(std::min(step, 1000)) + " steps"};
}

Outcome checkpoint_averaging() {
  const auto cfg = toy_config();
  const auto samples = equipped_samples();
  const auto vocabs = build_vocabularies(samples, 5000);
  std::vector<Checkpoint> ckpts;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    UnifiedModel model(model_config_from(cfg, vocabs), {}, seed, 0.5);
    ckpts.push_back(snapshot(model.params()));
  }
  const auto avg = average_checkpoints(ckpts);
  std::size_t mismatched = 0, checked = 0;
  for (std::size_t t = 0; t < avg.size(); ++t)
    for (Eigen::Index i = 0; i < avg[t].value.size(); ++i) {
      // Running mean, one element at a time.
      double m = ckpts[0][t].value.data()[i];
      for (std::size_t k = 1; k < ckpts.size(); ++k) {
        const double x = ckpts[k][t].value.data()[i];
        if (x != m) m = m + (x - m) / double(k + 1);
      }
      const double got = avg[t].value.data()[i];
      if (std::memcmp(&m, &got, sizeof m) != 0) ++mismatched;
      ++checked;
    }
  const std::vector<Checkpoint> same(5, ckpts[2]);
  const auto identity = average_checkpoints(same);
  bool id_ok = true;
  for (std::size_t t = 0; t < identity.size(); ++t)
    id_ok = id_ok && std::memcmp(identity[t].value.data(), ckpts[2][t].value.data(),
                                 sizeof(double) * static_cast<std::size_t>(ckpts[2][t].value.size())) == 0;
  const bool ok = mismatched == 0 && id_ok;
  return {ok, std::to_string(checked - mismatched) + "/" + std::to_string(checked) + " elements bitwise equal, identity " +
                  (id_ok ? "holds" : "broken")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"loss additivity", loss_additivity},
      {"extraction oracle", extraction_oracle},
      {"itf invariants", itf_invariants},
      {"overfit capability", overfit},
      {"copy mechanism", copy_mechanism},
      {"ablation structure", ablation_structure},
      {"metric oracles", metric_oracles},
      {"distribution hygiene", distribution_hygiene},
      {"rc separability", rc_separability},
      {"checkpoint averaging", checkpoint_averaging},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
