#include "kqg/qg_model.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "kqg/errors.hpp"

namespace kqg {

namespace {

using nn::Group;
using Mat = Eigen::MatrixXd;

std::vector<int> row_ids(const IdMatrix& m, int row, int len) {
  std::vector<int> out(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) out[static_cast<std::size_t>(i)] = m(row, i);
  return out;
}

}  // namespace

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.vocab_size <= Vocabulary::kEos) throw ValidationError("model: vocab_size must exceed the reserved ids");
  if (cfg.pos_tags < 1 || cfg.ner_tags < 1) throw ValidationError("model: tag vocabularies must be non-empty");
  if (cfg.hidden_size < 4 || cfg.hidden_size % 4 != 0)
    throw ValidationError("model: hidden_size must be a positive multiple of 4");
  if (cfg.layers < 1) throw ValidationError("model: layers must be >= 1");
  if (cfg.word_dim < 1 || cfg.bio_dim < 0 || cfg.ner_dim < 0 || cfg.pos_dim < 0)
    throw ValidationError("model: embedding sizes must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ValidationError("model: dropout must lie in [0, 1)");
}

Var copy_distribution(const Var& alpha, std::span<const int> copy_ids, int extended_size) {
  return nn::scatter_sum(alpha, copy_ids, extended_size);
}

Var sequence_nll(const std::vector<OutputDistribution>& steps, std::span<const int> targets, int* clamped) {
  if (steps.empty() || steps.size() != targets.size())
    throw ShapeError("sequence_nll: " + std::to_string(steps.size()) + " steps for " + std::to_string(targets.size()) +
                     " targets");
  std::vector<Var> terms;
  terms.reserve(steps.size());
  for (std::size_t t = 0; t < steps.size(); ++t) terms.push_back(nn::nll(steps[t].mixture, targets[t], 1e-12, clamped));
  return nn::affine(nn::sum(nn::concat_rows(terms)), 1.0 / double(terms.size()));
}

ReadoutParams make_readout(ParameterSet& params, const std::string& prefix, Group group, const ModelConfig& cfg) {
  const int h = cfg.hidden_size;
  ReadoutParams rp;
  rp.readout = &params.add(prefix + ".Wd", group, h, 2 * h);
  rp.output = &params.add(prefix + ".Wo", group, cfg.vocab_size, h / 2);
  rp.gate_w = &params.add(prefix + ".gate.w", group, 1, 2 * h + cfg.word_dim);
  rp.gate_b = &params.add(prefix + ".gate.b", group, 1, 1, nn::Init::Zero);
  return rp;
}

OutputDistribution output_distribution(Tape& tape, const ReadoutParams& rp, const Var& context, const Var& s,
                                       const Var& prev_embedding, const Var& alpha, std::span<const int> copy_ids,
                                       int extended_size, double dropout, const DecodeHooks& hooks, Var* p_gen_out) {
  const auto cs = nn::dropout(nn::concat_rows<double>({context, s}), dropout);
  const auto u = nn::maxout(nn::tanh(nn::matmul(tape.param(*rp.readout), cs)));
  OutputDistribution out;
  out.p_vocab = nn::softmax(nn::matmul(tape.param(*rp.output), u));
  Var p_gen;
  if (hooks.p_gen) {
    if (*hooks.p_gen < 0.0 || *hooks.p_gen > 1.0) throw ValidationError("p_gen hook must lie in [0, 1]");
    p_gen = tape.constant(Mat::Constant(1, 1, *hooks.p_gen));
  } else {
    const auto gate_in = nn::concat_rows<double>({context, s, prev_embedding});
    p_gen = nn::sigmoid(nn::add(nn::matmul(tape.param(*rp.gate_w), gate_in), tape.param(*rp.gate_b)));
  }
  out.p_copy = copy_distribution(alpha, copy_ids, extended_size);
  out.mixture = nn::add(nn::scale_by(p_gen, nn::pad_rows(out.p_vocab, extended_size)),
                        nn::scale_by(nn::affine(p_gen, -1.0, 1.0), out.p_copy));
  if (p_gen_out) *p_gen_out = p_gen;
  return out;
}

QgModel::QgModel(ParameterSet& params, const ModelConfig& cfg) : cfg_(cfg) {
  validate_model_config(cfg);
  const int h = cfg.hidden_size;
  word_ = &params.add("qg.emb.word", Group::QgCore, cfg.vocab_size, cfg.word_dim);
  bio_ = &params.add("qg.emb.bio", Group::QgCore, 4, cfg.bio_dim);
  ner_ = &params.add("qg.emb.ner", Group::QgCore, cfg.ner_tags, cfg.ner_dim);
  pos_ = &params.add("qg.emb.pos", Group::QgCore, cfg.pos_tags, cfg.pos_dim);
  const int input = cfg.word_dim + cfg.bio_dim + cfg.ner_dim + cfg.pos_dim;
  encoder_ = nn::make_bilstm(params, "qg.enc", Group::QgCore, input, h / 2, cfg.layers);
  self_ws_ = &params.add("qg.self.Ws", Group::QgCore, h, h);
  self_gw_ = &params.add("qg.self.gate.w", Group::QgCore, 2 * h, 1);
  self_gb_ = &params.add("qg.self.gate.b", Group::QgCore, 1, 1, nn::Init::Zero);
  for (int l = 0; l < cfg.layers; ++l) {
    const auto tag = "qg.init.l" + std::to_string(l);
    init_w_.push_back(&params.add(tag + ".W", Group::QgCore, h, h / 2));
    init_b_.push_back(&params.add(tag + ".b", Group::QgCore, h, 1, nn::Init::Zero));
  }
  decoder_ = nn::make_stacked_lstm(params, "qg.dec", Group::QgCore, cfg.word_dim + h, h, cfg.layers);
  attn_ = &params.add("qg.attn.Wh", Group::QgCore, h, h);
  know_attn_ = &params.add("know.attn.Wb", Group::Knowledge, h, h);
  we_ = &params.add("qg.We", Group::QgCore, h, 3 * h);
  readout_ = make_readout(params, "qg.out", Group::QgCore, cfg);
}

Var QgModel::word_embeddings(Tape& tape, std::span<const int> ids) const {
  return nn::embedding(tape.param(*word_), ids);
}

std::pair<Var, Var> QgModel::self_match(const Var& H, std::span<const std::uint8_t> mask) const {
  auto& tape = H.tape();
  const auto scores = nn::matmul(nn::matmul(H, tape.param(*self_ws_)), nn::transpose(H));
  const auto A = nn::softmax_rows(scores, mask);
  const auto f = nn::mask_rows(nn::matmul(A, H), mask);
  const auto bias = nn::matmul(tape.constant(Mat::Ones(H.rows(), 1)), tape.param(*self_gb_));
  const auto g = nn::sigmoid(nn::add(nn::matmul(nn::concat_cols<double>({H, f}), tape.param(*self_gw_)), bias));
  return {f, g};
}

EncoderOutput QgModel::encode_passage(Tape& tape, const Batch& batch, int row) const {
  if (row < 0 || row >= batch.size()) throw ShapeError("encode_passage: row out of range");
  const int len = batch.passage_lengths(row);
  const int padded = static_cast<int>(batch.passage_ids.cols());
  if (len <= 0) throw ValidationError("encode_passage: empty passage");
  const auto words = row_ids(batch.passage_ids, row, len);
  const auto x = nn::concat_cols<double>({word_embeddings(tape, words),
                                          nn::embedding(tape.param(*bio_), row_ids(batch.bio_ids, row, len)),
                                          nn::embedding(tape.param(*ner_), row_ids(batch.ner_ids, row, len)),
                                          nn::embedding(tape.param(*pos_), row_ids(batch.pos_ids, row, len))});
  EncoderOutput enc;
  enc.length = len;
  enc.mask.assign(static_cast<std::size_t>(padded), 0);
  std::fill(enc.mask.begin(), enc.mask.begin() + len, 1);
  enc.H = nn::pad_rows(nn::run_bilstm(encoder_, nn::dropout(x, cfg_.dropout), cfg_.dropout), padded);
  auto [f, g] = self_match(enc.H, enc.mask);
  enc.match = f;
  enc.gates = g;
  const auto G = nn::matmul(g, tape.constant(Mat::Ones(1, cfg_.hidden_size)));
  const auto mixed = nn::add(nn::mul(G, f), nn::mul(nn::affine(G, -1.0, 1.0), enc.H));
  enc.H_hat = nn::mask_rows(mixed, enc.mask);
  return enc;
}

DecoderState QgModel::initial_state(Tape& tape, const EncoderOutput& enc) const {
  const int h = cfg_.hidden_size;
  // Backward direction at the first position summarizes the whole passage.
  const auto summary = nn::slice_rows(nn::row_vector(enc.H, 0), h / 2, h / 2);
  DecoderState st;
  for (int l = 0; l < cfg_.layers; ++l) {
    const auto i = static_cast<std::size_t>(l);
    auto hidden = nn::tanh(nn::linear(tape.param(*init_w_[i]), summary, tape.param(*init_b_[i])));
    st.lstm.push_back({hidden, tape.constant(Mat::Zero(h, 1))});
  }
  st.s = st.lstm.back().h;
  st.s_tilde = tape.constant(Mat::Zero(h, 1));
  return st;
}

std::pair<OutputDistribution, DecoderState> QgModel::decode_step(Tape& tape, int y_prev, const DecoderState& state,
                                                                 const EncoderOutput& enc, const Var* memory,
                                                                 std::span<const int> copy_ids, int extended_size,
                                                                 const DecodeHooks& hooks) const {
  const int h = cfg_.hidden_size;
  const int input_id = y_prev >= cfg_.vocab_size ? Vocabulary::kUnk : y_prev;
  const std::array<int, 1> ids{input_id};
  const auto emb = nn::transpose(word_embeddings(tape, ids));
  DecoderState next;
  next.lstm = state.lstm;
  const auto x = nn::dropout(nn::concat_rows<double>({emb, state.s_tilde}), cfg_.dropout);
  next.s = nn::step_stacked(decoder_, x, next.lstm, cfg_.dropout);
  const auto attn = nn::bilinear_attention(enc.H_hat, tape.param(*attn_), next.s, enc.mask);
  next.alpha = attn.weights;
  next.context = attn.context;
  if (memory && memory->rows() > 0) {
    next.knowledge = nn::bilinear_attention(*memory, tape.param(*know_attn_), next.s).context;
  } else {
    next.knowledge = tape.constant(Mat::Zero(h, 1));
  }
  next.s_tilde =
      nn::tanh(nn::matmul(tape.param(*we_), nn::concat_rows<double>({next.context, next.knowledge, next.s})));
  auto dist = output_distribution(tape, readout_, next.context, next.s, emb, next.alpha, copy_ids, extended_size,
                                  cfg_.dropout, hooks, &next.p_gen);
  return {std::move(dist), std::move(next)};
}

Var QgModel::qg_loss(Tape& tape, const Batch& batch, int row, const EncoderOutput& enc, const Var* memory,
                     int* clamped) const {
  const int qlen = batch.question_lengths(row);
  if (qlen < 2) throw ValidationError("qg_loss: question needs at least one token besides BOS");
  const std::span<const int> copy_ids(batch.copy_ids.row(row).data(), static_cast<std::size_t>(batch.copy_ids.cols()));
  const int ext = batch.extended_size(row);
  auto state = initial_state(tape, enc);
  std::vector<OutputDistribution> steps;
  std::vector<int> targets;
  for (int t = 0; t + 1 < qlen; ++t) {
    auto [dist, next] = decode_step(tape, batch.question_ids(row, t), state, enc, memory, copy_ids, ext);
    steps.push_back(std::move(dist));
    targets.push_back(batch.question_targets(row, t + 1));
    state = std::move(next);
  }
  return sequence_nll(steps, targets, clamped);
}

Hypothesis beam_search(const QgModel& model, Tape& tape, const EncoderOutput& enc, const Var* memory,
                       std::span<const int> copy_ids, int extended_size, const BeamConfig& cfg) {
  auto step = [&](int prev, const DecoderState& st) {
    auto [dist, next] = model.decode_step(tape, prev, st, enc, memory, copy_ids, extended_size);
    return std::pair<Mat, DecoderState>(dist.mixture.value(), std::move(next));
  };
  return beam_search_with(model.initial_state(tape, enc), step, cfg);
}

Hypothesis greedy_decode(const QgModel& model, Tape& tape, const EncoderOutput& enc, const Var* memory,
                         std::span<const int> copy_ids, int extended_size, int max_len) {
  auto step = [&](int prev, const DecoderState& st) {
    auto [dist, next] = model.decode_step(tape, prev, st, enc, memory, copy_ids, extended_size);
    return std::pair<Mat, DecoderState>(dist.mixture.value(), std::move(next));
  };
  return greedy_search_with(model.initial_state(tape, enc), step, max_len);
}

}  // namespace kqg
