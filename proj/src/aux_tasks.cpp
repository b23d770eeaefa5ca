#include "kqg/aux_tasks.hpp"

#include <string>

#include "kqg/errors.hpp"

namespace kqg {

namespace {

using nn::Group;
using Mat = Eigen::MatrixXd;

}  // namespace

AuxTasks::AuxTasks(ParameterSet& params, const QgModel& qg) : qg_(qg) {
  const auto& cfg = qg.config();
  const int h = cfg.hidden_size;
  tokens_ = &params.add("know.emb.tokens", Group::Knowledge, 1 + kRelationCount, cfg.word_dim);
  rc_encoder_ = nn::make_bilstm(params, "know.rc.enc", Group::Knowledge, cfg.word_dim, h / 2, cfg.layers);
  tg_encoder_ = nn::make_bilstm(params, "know.tg.enc", Group::Knowledge, cfg.word_dim, h / 2, cfg.layers);
  rc_w_ = &params.add("know.rc.W", Group::Knowledge, kRelationCount, 2 * h);
  rc_b_ = &params.add("know.rc.b", Group::Knowledge, kRelationCount, 1, nn::Init::Zero);
  for (int l = 0; l < cfg.layers; ++l) {
    const auto tag = "know.tg.init.l" + std::to_string(l);
    tg_init_w_.push_back(&params.add(tag + ".W", Group::Knowledge, h, h));
    tg_init_b_.push_back(&params.add(tag + ".b", Group::Knowledge, h, 1, nn::Init::Zero));
  }
  tg_decoder_ = nn::make_stacked_lstm(params, "know.tg.dec", Group::Knowledge, cfg.word_dim + h, h, cfg.layers);
  tg_know_attn_ = &params.add("know.tg.attn.Wk", Group::Knowledge, h, h);
  tg_wt_ = &params.add("know.tg.Wt", Group::Knowledge, h, 3 * h);
  tg_readout_ = make_readout(params, "know.tg.out", Group::Knowledge, cfg);
}

Var AuxTasks::encode_head_tail(Tape& tape, std::span<const int> head_ids, std::span<const int> tail_ids) const {
  if (head_ids.empty() || tail_ids.empty()) throw ValidationError("encode_head_tail: empty concept");
  const std::array<int, 1> sep{kSeparatorToken};
  const auto x = nn::concat_rows<double>({qg_.word_embeddings(tape, head_ids), nn::embedding(tape.param(*tokens_), sep),
                                          qg_.word_embeddings(tape, tail_ids)});
  const double rate = qg_.config().dropout;
  return nn::run_bilstm(rc_encoder_, nn::dropout(x, rate), rate);
}

Var AuxTasks::encode_head_relation(Tape& tape, std::span<const int> head_ids, Relation relation) const {
  if (head_ids.empty()) throw ValidationError("encode_head_relation: empty head");
  const int r = static_cast<int>(relation);
  if (r < 0 || r >= kRelationCount) throw ValidationError("encode_head_relation: unknown relation");
  const std::array<int, 1> rel{relation_token(relation)};
  const auto x =
      nn::concat_rows<double>({qg_.word_embeddings(tape, head_ids), nn::embedding(tape.param(*tokens_), rel)});
  const double rate = qg_.config().dropout;
  return nn::run_bilstm(tg_encoder_, nn::dropout(x, rate), rate);
}

TripleEncoding AuxTasks::encode_triple(Tape& tape, const EncodedTriple& triple) const {
  TripleEncoding enc;
  enc.R = encode_head_tail(tape, triple.head_ids, triple.tail_ids);
  enc.T = encode_head_relation(tape, triple.head_ids, triple.relation);
  enc.K = nn::concat_rows<double>({enc.T, enc.R});
  return enc;
}

CoattentionOutput AuxTasks::coattend(const Var& R, const Var& H_hat, std::span<const std::uint8_t> passage_mask) const {
  if (R.rows() == 0 || H_hat.rows() == 0) throw ValidationError("coattend: empty input");
  if (R.cols() != H_hat.cols()) throw ShapeError("coattend: width " + shape_str(R) + " vs " + shape_str(H_hat));
  const auto L = nn::matmul(R, nn::transpose(H_hat));
  CoattentionOutput out;
  out.A_H = nn::softmax_rows(nn::transpose(L));
  out.A_R = nn::softmax_rows(L, passage_mask);
  const auto C = nn::concat_cols<double>({H_hat, nn::matmul(out.A_H, R)});
  out.R_hat = nn::matmul(out.A_R, C);
  return out;
}

RelationPrediction AuxTasks::classify_relation(const Var& R_hat) const {
  auto& tape = R_hat.tape();
  const auto pooled = nn::mean_rows(R_hat);
  RelationPrediction pred;
  pred.probs = nn::softmax(nn::linear(tape.param(*rc_w_), pooled, tape.param(*rc_b_)));
  Eigen::Index best = 0;
  pred.probs.value().col(0).maxCoeff(&best);
  pred.predicted = static_cast<Relation>(best);
  return pred;
}

Var rc_loss(const RelationPrediction& pred, Relation gold) {
  return nn::nll(pred.probs, static_cast<Eigen::Index>(gold));
}

DecoderState AuxTasks::tg_initial_state(Tape& tape, const Var& T) const {
  const int h = qg_.config().hidden_size;
  const auto last = nn::row_vector(T, T.rows() - 1);
  const auto first = nn::row_vector(T, 0);
  const auto summary = nn::concat_rows<double>({nn::slice_rows(last, 0, h / 2), nn::slice_rows(first, h / 2, h / 2)});
  DecoderState st;
  for (std::size_t l = 0; l < tg_init_w_.size(); ++l) {
    auto hidden = nn::tanh(nn::linear(tape.param(*tg_init_w_[l]), summary, tape.param(*tg_init_b_[l])));
    st.lstm.push_back({hidden, tape.constant(Mat::Zero(h, 1))});
  }
  st.s = st.lstm.back().h;
  st.s_tilde = tape.constant(Mat::Zero(h, 1));
  return st;
}

std::pair<OutputDistribution, DecoderState> AuxTasks::tg_decode_step(Tape& tape, int y_prev, const DecoderState& state,
                                                                     const EncoderOutput& enc, const Var& T,
                                                                     std::span<const int> copy_ids, int extended_size,
                                                                     const DecodeHooks& hooks) const {
  const auto& cfg = qg_.config();
  const std::array<int, 1> ids{y_prev >= cfg.vocab_size ? Vocabulary::kUnk : y_prev};
  const auto emb = nn::transpose(qg_.word_embeddings(tape, ids));
  DecoderState next;
  next.lstm = state.lstm;
  const auto x = nn::dropout(nn::concat_rows<double>({emb, state.s_tilde}), cfg.dropout);
  next.s = nn::step_stacked(tg_decoder_, x, next.lstm, cfg.dropout);
  const auto attn = nn::bilinear_attention(enc.H_hat, tape.param(qg_.passage_attention()), next.s, enc.mask);
  next.alpha = attn.weights;
  next.context = attn.context;
  next.knowledge = nn::bilinear_attention(T, tape.param(*tg_know_attn_), next.s).context;
  next.s_tilde =
      nn::tanh(nn::matmul(tape.param(*tg_wt_), nn::concat_rows<double>({next.context, next.knowledge, next.s})));
  auto dist = output_distribution(tape, tg_readout_, next.context, next.s, emb, next.alpha, copy_ids, extended_size,
                                  cfg.dropout, hooks, &next.p_gen);
  return {std::move(dist), std::move(next)};
}

Var AuxTasks::tg_loss(Tape& tape, const EncodedTriple& triple, const EncoderOutput& enc, const Var& T,
                      std::span<const int> copy_ids, int extended_size, int* clamped) const {
  if (triple.tail_targets.empty()) throw ValidationError("tg_loss: empty tail");
  auto state = tg_initial_state(tape, T);
  std::vector<OutputDistribution> steps;
  int prev = Vocabulary::kBos;
  for (std::size_t j = 0; j < triple.tail_targets.size(); ++j) {
    auto [dist, next] = tg_decode_step(tape, prev, state, enc, T, copy_ids, extended_size);
    steps.push_back(std::move(dist));
    state = std::move(next);
    if (j < triple.tail_ids.size()) prev = triple.tail_ids[j];
  }
  return sequence_nll(steps, triple.tail_targets, clamped);
}

Hypothesis AuxTasks::tg_greedy(Tape& tape, const EncoderOutput& enc, const Var& T, std::span<const int> copy_ids,
                               int extended_size, int max_len) const {
  auto step = [&](int prev, const DecoderState& st) {
    auto [dist, next] = tg_decode_step(tape, prev, st, enc, T, copy_ids, extended_size);
    return std::pair<Mat, DecoderState>(dist.mixture.value(), std::move(next));
  };
  return greedy_search_with(tg_initial_state(tape, T), step, max_len);
}

}  // namespace kqg
