#pragma once

// Question-generation network: feature-rich passage encoder with gated
// self-attention, attention decoder with maxout readout and a copy gate.

#include <optional>
#include <span>
#include <vector>

#include "kqg/corpus.hpp"
#include "kqg/nn/layers.hpp"
#include "kqg/search.hpp"

namespace kqg {

using Tape = nn::Tape<double>;
using Var = nn::Var<double>;
using ParameterSet = nn::ParameterSet<double>;
using Param = nn::Parameter<double>;
using LstmState = nn::LstmState<double>;

struct ModelConfig {
  int vocab_size = 0;
  int pos_tags = 0;  // including padding
  int ner_tags = 0;  // including padding
  int hidden_size = 600;  // encoder output width and decoder state; each encoder direction gets half
  int layers = 2;
  int word_dim = 100;
  int bio_dim = 8;
  int ner_dim = 8;
  int pos_dim = 8;
  double dropout = 0.3;
};

void validate_model_config(const ModelConfig& cfg);

struct EncoderOutput {
  Var H;       // [Lp x h], zero rows past the passage length
  Var H_hat;   // [Lp x h]
  Var gates;   // [Lp x 1]
  Var match;   // [Lp x h], self-matched context f
  std::vector<std::uint8_t> mask;  // 1 for real tokens
  int length = 0;
};

struct DecoderState {
  std::vector<LstmState> lstm;
  Var s;            // top-layer output
  Var s_tilde;      // fed to the next step
  Var context;      // c_t
  Var alpha;        // [Lp x 1]
  Var knowledge;    // k_t, zero without a memory
  Var p_gen;        // [1 x 1]
};

struct OutputDistribution {
  Var p_vocab;   // [V x 1]
  Var p_copy;    // [V_ext x 1]
  Var mixture;   // [V_ext x 1]
};

/// Test hooks for pinning the copy gate.
struct DecodeHooks {
  std::optional<double> p_gen;
};

/// Attention-weight aggregation over source positions into the extended vocabulary.
Var copy_distribution(const Var& alpha, std::span<const int> copy_ids, int extended_size);

/// Mean -log P(target_t) over teacher-forced steps; zero probabilities are
/// clamped at 1e-12 and counted in `clamped`.
Var sequence_nll(const std::vector<OutputDistribution>& steps, std::span<const int> targets, int* clamped = nullptr);

/// Readout and copy machinery shared by the QG and tail-generation decoders.
struct ReadoutParams {
  Param* readout = nullptr;   // W^d  [h x 2h]
  Param* output = nullptr;    // W^o  [V x h/2]
  Param* gate_w = nullptr;    // [1 x (2h + word_dim)]
  Param* gate_b = nullptr;    // [1 x 1]
};

ReadoutParams make_readout(ParameterSet& params, const std::string& prefix, nn::Group group, const ModelConfig& cfg);

/// P_vocab via maxout readout over [c; s], copy gate over [c; s; y_prev], mixture.
OutputDistribution output_distribution(Tape& tape, const ReadoutParams& rp, const Var& context, const Var& s,
                                       const Var& prev_embedding, const Var& alpha, std::span<const int> copy_ids,
                                       int extended_size, double dropout, const DecodeHooks& hooks, Var* p_gen_out);

class QgModel {
 public:
  QgModel(ParameterSet& params, const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  EncoderOutput encode_passage(Tape& tape, const Batch& batch, int row) const;

  /// Self-matching on H: returns (f, g).
  std::pair<Var, Var> self_match(const Var& H, std::span<const std::uint8_t> mask) const;

  DecoderState initial_state(Tape& tape, const EncoderOutput& enc) const;

  /// One decoder step consuming `y_prev` (extended ids map to UNK). `memory`
  /// is the optional knowledge memory K.
  std::pair<OutputDistribution, DecoderState> decode_step(Tape& tape, int y_prev, const DecoderState& state,
                                                          const EncoderOutput& enc, const Var* memory,
                                                          std::span<const int> copy_ids, int extended_size,
                                                          const DecodeHooks& hooks = {}) const;

  /// Teacher-forced L_q for one batch row.
  Var qg_loss(Tape& tape, const Batch& batch, int row, const EncoderOutput& enc, const Var* memory,
              int* clamped = nullptr) const;

  Var word_embeddings(Tape& tape, std::span<const int> ids) const;

  Param& word_table() const { return *word_; }
  Param& passage_attention() const { return *attn_; }

  // Self-attention gate bias; tests saturate it to pin the gate.
  Param& gate_bias() const { return *self_gb_; }
  /// W^e, whose middle column block multiplies the knowledge context.
  Param& state_combiner() const { return *we_; }

 private:
  ModelConfig cfg_;
  Param* word_;
  Param* bio_;
  Param* ner_;
  Param* pos_;
  nn::BiLstm<double> encoder_;
  Param* self_ws_;
  Param* self_gw_;
  Param* self_gb_;
  std::vector<Param*> init_w_;
  std::vector<Param*> init_b_;
  nn::StackedLstm<double> decoder_;
  Param* attn_;       // W^h
  Param* know_attn_;  // projection for attention over K (knowledge group)
  Param* we_;         // W^e over [c; k; s]
  ReadoutParams readout_;
};

/// Beam search over the QG mixture distribution; `memory` may be null.
Hypothesis beam_search(const QgModel& model, Tape& tape, const EncoderOutput& enc, const Var* memory,
                       std::span<const int> copy_ids, int extended_size, const BeamConfig& cfg);

/// Argmax decoding (lowest id wins ties).
Hypothesis greedy_decode(const QgModel& model, Tape& tape, const EncoderOutput& enc, const Var* memory,
                         std::span<const int> copy_ids, int extended_size, int max_len);

}  // namespace kqg
