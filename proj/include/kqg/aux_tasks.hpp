#pragma once

// Auxiliary heads over a single knowledge triple: relation classification
// with passage coattention, and tail-concept generation.

#include <array>
#include <span>
#include <vector>

#include "kqg/knowledge.hpp"
#include "kqg/qg_model.hpp"

namespace kqg {

struct TripleEncoding {
  Var R;  // [Lr x h] over head, separator, tail
  Var T;  // [Lt x h] over head, relation token
  Var K;  // [(Lt + Lr) x h], T rows first
};

/// Row-major coattention. L = R H^T is [Lr x Lp].
struct CoattentionOutput {
  Var A_H;    // [Lp x Lr], softmax over triple positions for each passage row
  Var A_R;    // [Lr x Lp], softmax over passage positions for each triple row
  Var R_hat;  // [Lr x 2h], A_R [H_hat | A_H R]
};

struct RelationPrediction {
  Var probs;  // [6 x 1]
  Relation predicted = Relation::Others;
};

class AuxTasks {
 public:
  /// Word embeddings are borrowed from `qg`; everything else is registered
  /// in the knowledge group.
  AuxTasks(ParameterSet& params, const QgModel& qg);

  Var encode_head_tail(Tape& tape, std::span<const int> head_ids, std::span<const int> tail_ids) const;
  Var encode_head_relation(Tape& tape, std::span<const int> head_ids, Relation relation) const;
  TripleEncoding encode_triple(Tape& tape, const EncodedTriple& triple) const;

  CoattentionOutput coattend(const Var& R, const Var& H_hat, std::span<const std::uint8_t> passage_mask) const;
  RelationPrediction classify_relation(const Var& R_hat) const;

  DecoderState tg_initial_state(Tape& tape, const Var& T) const;
  std::pair<OutputDistribution, DecoderState> tg_decode_step(Tape& tape, int y_prev, const DecoderState& state,
                                                             const EncoderOutput& enc, const Var& T,
                                                             std::span<const int> copy_ids, int extended_size,
                                                             const DecodeHooks& hooks = {}) const;
  /// Teacher-forced L_t over the tail tokens followed by EOS.
  Var tg_loss(Tape& tape, const EncodedTriple& triple, const EncoderOutput& enc, const Var& T,
              std::span<const int> copy_ids, int extended_size, int* clamped = nullptr) const;
  Hypothesis tg_greedy(Tape& tape, const EncoderOutput& enc, const Var& T, std::span<const int> copy_ids,
                       int extended_size, int max_len) const;

  Param& classifier_weight() const { return *rc_w_; }
  Param& classifier_bias() const { return *rc_b_; }

  /// Row of the knowledge token table: 0 is the separator, 1 + relation otherwise.
  static int relation_token(Relation r) { return 1 + static_cast<int>(r); }
  static constexpr int kSeparatorToken = 0;

 private:
  const QgModel& qg_;
  Param* tokens_;
  nn::BiLstm<double> rc_encoder_;
  nn::BiLstm<double> tg_encoder_;
  Param* rc_w_;
  Param* rc_b_;
  std::vector<Param*> tg_init_w_;
  std::vector<Param*> tg_init_b_;
  nn::StackedLstm<double> tg_decoder_;
  Param* tg_know_attn_;  // over T
  Param* tg_wt_;         // W^t over [c; k; s]
  ReadoutParams tg_readout_;
};

/// Cross-entropy against the gold relation.
Var rc_loss(const RelationPrediction& pred, Relation gold);

}  // namespace kqg
