#include "kqg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "kqg/errors.hpp"
#include "kqg/kb_extract.hpp"
#include "kqg/metrics.hpp"

namespace kqg {

namespace {

using Mat = Eigen::MatrixXd;

Var zero_scalar(Tape& tape) { return tape.constant(Mat::Zero(1, 1)); }

Var batch_mean(const std::vector<Var>& rows) {
  return nn::affine(nn::sum(nn::concat_rows(rows)), 1.0 / double(rows.size()));
}

std::span<const int> copy_row(const Batch& batch, int row) {
  return {batch.copy_ids.row(row).data(), static_cast<std::size_t>(batch.copy_ids.cols())};
}

}  // namespace

Vocabularies build_vocabularies(const std::vector<TrainingSample>& samples, int max_vocab) {
  return {build_vocab(samples, max_vocab), build_tag_vocab(samples, TagField::Pos),
          build_tag_vocab(samples, TagField::Ner)};
}

UnifiedModel::UnifiedModel(const ModelConfig& cfg, const Ablation& ablation, std::uint64_t seed, double init_range)
    : ablation_(ablation) {
  qg_ = std::make_unique<QgModel>(params_, cfg);
  aux_ = std::make_unique<AuxTasks>(params_, *qg_);
  params_.initialize(seed, init_range);
}

LossVars UnifiedModel::pure_row(Tape& tape, const Batch& batch, int row) const {
  const auto enc = qg_->encode_passage(tape, batch, row);
  LossVars out;
  out.q = qg_->qg_loss(tape, batch, row, enc, nullptr);
  out.r = zero_scalar(tape);
  out.t = zero_scalar(tape);
  out.total = nn::add(nn::add(out.q, out.r), out.t);
  return out;
}

LossVars UnifiedModel::unified_row(Tape& tape, const Batch& batch, int row) const {
  const auto& triple = batch.triples[static_cast<std::size_t>(row)];
  if (!triple) throw ValidationError("unified forward: sample in row " + std::to_string(row) + " has no triple");
  const auto enc = qg_->encode_passage(tape, batch, row);
  const auto trip = aux_->encode_triple(tape, *triple);
  LossVars out;
  out.q = qg_->qg_loss(tape, batch, row, enc, &trip.K);
  if (ablation_.rc) {
    const auto co = aux_->coattend(trip.R, enc.H_hat, enc.mask);
    out.r = rc_loss(aux_->classify_relation(co.R_hat), triple->relation);
  } else {
    out.r = zero_scalar(tape);
  }
  out.t = ablation_.tg ? aux_->tg_loss(tape, *triple, enc, trip.T, copy_row(batch, row), batch.extended_size(row))
                       : zero_scalar(tape);
  out.total = nn::add(nn::add(out.q, out.r), out.t);
  return out;
}

LossVars UnifiedModel::forward(Tape& tape, const Batch& batch, bool equipped) const {
  std::vector<Var> q, r, t;
  for (int b = 0; b < batch.size(); ++b) {
    const auto row = equipped && ablation_.knowledge ? unified_row(tape, batch, b) : pure_row(tape, batch, b);
    q.push_back(row.q);
    r.push_back(row.r);
    t.push_back(row.t);
  }
  LossVars out;
  out.q = batch_mean(q);
  out.r = batch_mean(r);
  out.t = batch_mean(t);
  out.total = nn::add(nn::add(out.q, out.r), out.t);
  return out;
}

const char* phase_name(Phase phase) { return phase == Phase::Equipped ? "equipped" : "pure"; }

std::vector<Phase> itf_schedule(const ItfConfig& cfg) {
  if (cfg.n < 1 || cfg.cycles < 1) throw ValidationError("itf: n and cycles must be >= 1");
  std::vector<Phase> out;
  out.reserve(static_cast<std::size_t>(2 * cfg.n * cfg.cycles));
  for (int c = 0; c < cfg.cycles; ++c) {
    out.insert(out.end(), static_cast<std::size_t>(cfg.n), Phase::Equipped);
    out.insert(out.end(), static_cast<std::size_t>(cfg.n), Phase::Pure);
  }
  return out;
}

FreezeMask freeze_mask(Phase phase) {
  FreezeMask mask;
  mask.knowledge = phase == Phase::Equipped;
  return mask;
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "itf") return TrainMode::Itf;
  if (name == "equipped-only") return TrainMode::EquippedOnly;
  if (name == "pure-only") return TrainMode::PureOnly;
  throw ValidationError("unknown training mode '" + name + "' (itf | equipped-only | pure-only)");
}

std::vector<Phase> phase_plan(const TrainConfig& cfg) {
  if (cfg.mode == TrainMode::Itf) return itf_schedule(cfg.itf);
  const long steps = cfg.steps > 0 ? cfg.steps : 2L * cfg.itf.n * cfg.itf.cycles;
  return std::vector<Phase>(static_cast<std::size_t>(steps),
                            cfg.mode == TrainMode::EquippedOnly ? Phase::Equipped : Phase::Pure);
}

CheckpointWindow::CheckpointWindow(int k) : k_(k) {
  if (k < 1) throw ValidationError("checkpoint window: k must be >= 1");
}

void CheckpointWindow::offer(Checkpoint ckpt, double score, long step) {
  Entry e{next_index_++, step, std::move(ckpt)};
  if (!best_ || score > best_score_) {
    best_score_ = score;
    before_.assign(history_.begin(), history_.end());
    after_.clear();
    best_ = e;
  } else if (static_cast<int>(after_.size()) < k_ - 1) {
    after_.push_back(e);
  }
  history_.push_back(std::move(e));
  while (static_cast<int>(history_.size()) > k_ - 1) history_.pop_front();
}

long CheckpointWindow::best_step() const { return best_ ? best_->step : 0; }

std::size_t CheckpointWindow::stored() const {
  return history_.size() + before_.size() + after_.size() + (best_ ? 1 : 0);
}

std::vector<const CheckpointWindow::Entry*> CheckpointWindow::chosen() const {
  if (!best_) return {};
  std::vector<const Entry*> pool;
  for (const auto& e : before_) pool.push_back(&e);
  pool.push_back(&*best_);
  for (const auto& e : after_) pool.push_back(&e);
  const long b = best_->index;
  std::stable_sort(pool.begin(), pool.end(),
                   [b](const Entry* x, const Entry* y) { return std::labs(x->index - b) < std::labs(y->index - b); });
  pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(k_)));
  std::sort(pool.begin(), pool.end(), [](const Entry* x, const Entry* y) { return x->index < y->index; });
  return pool;
}

std::vector<long> CheckpointWindow::selection() const {
  std::vector<long> steps;
  for (const auto* e : chosen()) steps.push_back(e->step);
  return steps;
}

Checkpoint CheckpointWindow::average() const {
  if (!best_) throw ValidationError("checkpoint window is empty");
  std::vector<Checkpoint> picked;
  for (const auto* e : chosen()) picked.push_back(e->ckpt);
  return average_checkpoints(picked);
}

Trainer::Cycler::Cycler(std::vector<TrainingSample> data, std::uint64_t seed) : data_(std::move(data)), rng_(seed) {
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<TrainingSample> Trainer::Cycler::next(int n) {
  if (data_.empty()) throw ValidationError("training data for this phase is empty");
  std::vector<TrainingSample> out;
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(n), data_.size());
  while (out.size() < take) {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    out.push_back(data_[order_[pos_++]]);
  }
  return out;
}

Trainer::Trainer(UnifiedModel& model, const TrainConfig& cfg, const Vocabularies& vocabs,
                 std::vector<TrainingSample> equipped, std::vector<TrainingSample> pure,
                 std::vector<TrainingSample> dev)
    : model_(model),
      cfg_(cfg),
      vocabs_(vocabs),
      equipped_(std::move(equipped), cfg.seed * 2 + 1),
      pure_(std::move(pure), cfg.seed * 2 + 2),
      dev_(std::move(dev)),
      adam_(nn::make_adam_state(model.params())) {
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (cfg.mode == TrainMode::Itf && (equipped_.empty() || pure_.empty()))
    throw ValidationError("itf training needs both equipped and pure samples");
  if (cfg.mode == TrainMode::EquippedOnly && equipped_.empty())
    throw ValidationError("equipped-only training needs equipped samples");
  if (cfg.mode == TrainMode::PureOnly && pure_.empty()) throw ValidationError("pure-only training needs pure samples");
}

StepLog Trainer::step(Phase phase) {
  const long index = ++steps_done_;
  const auto samples = (phase == Phase::Equipped ? equipped_ : pure_).next(cfg_.batch_size);
  const auto batch = encode_batch(samples, vocabs_.words, vocabs_.pos, vocabs_.ner);
  const auto mask = freeze_mask(phase);
  auto& params = model_.params();
  const auto trainable = [&](const Param& p) { return mask.trainable(p.group); };

  StepLog log;
  log.step = index;
  log.phase = phase;
  try {
    Tape tape(true, cfg_.seed * 1000003ULL + static_cast<std::uint64_t>(index));
    const auto loss = model_.forward(tape, batch, phase == Phase::Equipped);
    log.loss = loss.values();
    params.zero_grad();
    tape.backward(loss.total);
  } catch (const NumericalError& e) {
    throw NumericalError("training diverged at step " + std::to_string(index) + " (" + phase_name(phase) +
                         "): " + e.what());
  }
  log.grad_norm = nn::clip_grad_norm<double>(params, cfg_.clip, trainable);
  if (!std::isfinite(log.grad_norm))
    throw NumericalError("training diverged at step " + std::to_string(index) + ": non-finite gradient norm");
  nn::adam_step<double>(params, adam_, cfg_.adam, trainable);
  return log;
}

double Trainer::dev_bleu4() const {
  std::vector<Tokens> hyps, refs;
  const BeamConfig greedy{1, cfg_.max_len, 0.0};
  for (const auto& s : dev_) {
    hyps.push_back(generate_question(model_, vocabs_, s, greedy));
    refs.push_back(s.question);
  }
  return bleu(hyps, refs, 4);
}

TrainResult Trainer::run(const StepCallback& on_step) {
  const auto plan = phase_plan(cfg_);
  CheckpointWindow window(cfg_.avg_k);
  TrainResult result;
  const bool evaluate = cfg_.eval_every > 0 && !dev_.empty();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    auto log = step(plan[i]);
    const bool last = i + 1 == plan.size();
    if (evaluate && (log.step % cfg_.eval_every == 0 || last)) {
      log.dev_bleu4 = dev_bleu4();
      window.offer(snapshot(model_.params()), *log.dev_bleu4, log.step);
    }
    if (on_step) on_step(log);
    result.log.push_back(log);
  }
  if (!window.empty()) {
    result.best_dev_bleu4 = window.best_score();
    result.best_step = window.best_step();
    result.averaged_steps = window.selection();
    restore(model_.params(), window.average());
  }
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write metrics log '" + path.string() + "'");
  out << "step,phase,L_q,L_r,L_t,L,dev_bleu4\n" << std::setprecision(10);
  for (const auto& l : log) {
    out << l.step << ',' << phase_name(l.phase) << ',' << l.loss.q << ',' << l.loss.r << ',' << l.loss.t << ','
        << l.loss.total << ',';
    if (l.dev_bleu4) out << *l.dev_bleu4;
    out << '\n';
  }
}

namespace {

struct InferenceContext {
  Batch batch;
  Tape tape;
  EncoderOutput enc;
  std::optional<TripleEncoding> triple;

  InferenceContext(const UnifiedModel& model, const Vocabularies& vocabs, const TrainingSample& sample)
      : batch(encode_batch({sample}, vocabs.words, vocabs.pos, vocabs.ner)) {
    tape.set_grad_enabled(false);
    enc = model.qg().encode_passage(tape, batch, 0);
    if (batch.triples[0]) triple = model.aux().encode_triple(tape, *batch.triples[0]);
  }

  std::vector<std::string> surface(const std::vector<int>& ids, const Vocabularies& vocabs) const {
    std::vector<std::string> out;
    for (int id : ids) out.push_back(batch.surface(0, id, vocabs.words));
    return out;
  }
};

}  // namespace

std::vector<std::string> generate_question(const UnifiedModel& model, const Vocabularies& vocabs,
                                           const TrainingSample& sample, const BeamConfig& beam) {
  InferenceContext ctx(model, vocabs, sample);
  const Var* memory = model.ablation().knowledge && ctx.triple ? &ctx.triple->K : nullptr;
  const auto hyp = beam_search(model.qg(), ctx.tape, ctx.enc, memory, copy_row(ctx.batch, 0),
                               ctx.batch.extended_size(0), beam);
  return ctx.surface(hyp.ids, vocabs);
}

Relation predict_relation(const UnifiedModel& model, const Vocabularies& vocabs, const TrainingSample& sample) {
  InferenceContext ctx(model, vocabs, sample);
  if (!ctx.triple) throw ValidationError("predict_relation: sample '" + sample.id + "' has no triple");
  const auto co = model.aux().coattend(ctx.triple->R, ctx.enc.H_hat, ctx.enc.mask);
  return model.aux().classify_relation(co.R_hat).predicted;
}

std::vector<std::string> generate_tail(const UnifiedModel& model, const Vocabularies& vocabs,
                                       const TrainingSample& sample, int max_len) {
  InferenceContext ctx(model, vocabs, sample);
  if (!ctx.triple) throw ValidationError("generate_tail: sample '" + sample.id + "' has no triple");
  const auto hyp =
      model.aux().tg_greedy(ctx.tape, ctx.enc, ctx.triple->T, copy_row(ctx.batch, 0), ctx.batch.extended_size(0), max_len);
  return ctx.surface(hyp.ids, vocabs);
}

}  // namespace kqg
