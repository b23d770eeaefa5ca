#pragma once

// Unified multi-task model, iterative training schedule with knowledge
// freezing, and checkpoint averaging around the best dev score.

#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kqg/aux_tasks.hpp"
#include "kqg/checkpoint.hpp"
#include "kqg/nn/optim.hpp"
#include "kqg/qg_model.hpp"

namespace kqg {

struct Vocabularies {
  Vocabulary words;
  TagVocabulary pos;
  TagVocabulary ner;
};

Vocabularies build_vocabularies(const std::vector<TrainingSample>& samples, int max_vocab);

/// Which knowledge components are active. `knowledge = false` is the plain
/// QG baseline; rc/tg toggle the auxiliary losses only.
struct Ablation {
  bool knowledge = true;
  bool rc = true;
  bool tg = true;
};

struct LossBundle {
  double q = 0.0;
  double r = 0.0;
  double t = 0.0;
  double total = 0.0;
};

struct LossVars {
  Var q;
  Var r;
  Var t;
  Var total;  // (q + r) + t

  LossBundle values() const { return {q.scalar(), r.scalar(), t.scalar(), total.scalar()}; }
};

class UnifiedModel {
 public:
  UnifiedModel(const ModelConfig& cfg, const Ablation& ablation, std::uint64_t seed, double init_range = 0.1);
  UnifiedModel(const UnifiedModel&) = delete;
  UnifiedModel& operator=(const UnifiedModel&) = delete;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const QgModel& qg() const { return *qg_; }
  const AuxTasks& aux() const { return *aux_; }
  const Ablation& ablation() const { return ablation_; }
  const ModelConfig& config() const { return qg_->config(); }

  /// Losses for one row carrying a selected triple.
  LossVars unified_row(Tape& tape, const Batch& batch, int row) const;
  /// QG-only losses; L_r and L_t are constant zeros.
  LossVars pure_row(Tape& tape, const Batch& batch, int row) const;

  /// Per-component means over the batch, then L = (L_q + L_r) + L_t.
  /// Equipped batches require a triple on every row unless knowledge is ablated.
  LossVars forward(Tape& tape, const Batch& batch, bool equipped) const;

 private:
  ParameterSet params_;
  Ablation ablation_;
  std::unique_ptr<QgModel> qg_;
  std::unique_ptr<AuxTasks> aux_;
};

enum class Phase { Equipped, Pure };
const char* phase_name(Phase phase);

struct ItfConfig {
  int n = 3000;
  int cycles = 3;
};

/// [Equipped x n, Pure x n] repeated `cycles` times.
std::vector<Phase> itf_schedule(const ItfConfig& cfg);

struct FreezeMask {
  bool qg_core = true;
  bool knowledge = true;
  bool trainable(nn::Group g) const { return g == nn::Group::QgCore ? qg_core : knowledge; }
};

FreezeMask freeze_mask(Phase phase);

enum class TrainMode { Itf, EquippedOnly, PureOnly };
TrainMode parse_train_mode(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::Itf;
  ItfConfig itf;
  long steps = 0;  // single-corpus modes; 0 means 2 * n * cycles
  int batch_size = 16;
  nn::AdamConfig adam;
  double clip = 5.0;
  int eval_every = 0;
  int avg_k = 5;
  int max_len = 30;
  std::uint64_t seed = 1;
};

/// Phase executed at each step under `cfg`.
std::vector<Phase> phase_plan(const TrainConfig& cfg);

struct StepLog {
  long step = 0;  // 1-based
  Phase phase = Phase::Equipped;
  LossBundle loss;
  double grad_norm = 0.0;
  std::optional<double> dev_bleu4;
};

/// Keeps the snapshots needed to average the best checkpoint with its
/// nearest neighbours by save order. Holds at most 3k - 2 snapshots.
class CheckpointWindow {
 public:
  explicit CheckpointWindow(int k);

  void offer(Checkpoint ckpt, double score, long step);
  bool empty() const { return !best_; }
  double best_score() const { return best_score_; }
  long best_step() const;
  std::size_t stored() const;
  /// Save-order steps of the checkpoints that `average` would combine.
  std::vector<long> selection() const;
  Checkpoint average() const;

 private:
  struct Entry {
    long index;
    long step;
    Checkpoint ckpt;
  };
  std::vector<const Entry*> chosen() const;

  int k_;
  long next_index_ = 0;
  std::deque<Entry> history_;
  std::vector<Entry> before_;
  std::optional<Entry> best_;
  std::vector<Entry> after_;
  double best_score_ = 0.0;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::optional<double> best_dev_bleu4;
  long best_step = 0;
  std::vector<long> averaged_steps;
};

class Trainer {
 public:
  using StepCallback = std::function<void(const StepLog&)>;

  Trainer(UnifiedModel& model, const TrainConfig& cfg, const Vocabularies& vocabs,
          std::vector<TrainingSample> equipped, std::vector<TrainingSample> pure,
          std::vector<TrainingSample> dev = {});

  /// Runs the full plan; restores averaged weights when dev evaluation ran.
  TrainResult run(const StepCallback& on_step = {});

  /// One optimisation step in `phase` on the next batch of that phase's data.
  StepLog step(Phase phase);

  double dev_bleu4() const;
  const nn::AdamState<double>& optimizer() const { return adam_; }

 private:
  class Cycler {
   public:
    Cycler(std::vector<TrainingSample> data, std::uint64_t seed);
    std::vector<TrainingSample> next(int n);
    bool empty() const { return data_.empty(); }

   private:
    std::vector<TrainingSample> data_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::mt19937_64 rng_;
  };

  UnifiedModel& model_;
  TrainConfig cfg_;
  const Vocabularies& vocabs_;
  Cycler equipped_;
  Cycler pure_;
  std::vector<TrainingSample> dev_;
  nn::AdamState<double> adam_;
  long steps_done_ = 0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log);

/// Inference helpers. The sample's selected triple feeds the knowledge
/// memory when the model uses knowledge.
std::vector<std::string> generate_question(const UnifiedModel& model, const Vocabularies& vocabs,
                                           const TrainingSample& sample, const BeamConfig& beam);
Relation predict_relation(const UnifiedModel& model, const Vocabularies& vocabs, const TrainingSample& sample);
std::vector<std::string> generate_tail(const UnifiedModel& model, const Vocabularies& vocabs,
                                       const TrainingSample& sample, int max_len);

}  // namespace kqg
