#pragma once

// Decoder-agnostic beam and greedy search. A step function maps
// (previous id, state) to (distribution over extended ids, next state).

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "kqg/corpus.hpp"

namespace kqg {

struct Hypothesis {
  std::vector<int> ids;  // extended ids, EOS excluded
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / T^length_penalty, T counts EOS when emitted
  bool finished = false;
};

struct BeamConfig {
  int beam = 10;
  int max_len = 30;
  double length_penalty = 0.7;
};

inline double normalized_score(double log_prob, std::size_t steps, double length_penalty) {
  return log_prob / std::pow(double(std::max<std::size_t>(steps, 1)), length_penalty);
}

/// Indices of the k largest entries, descending, ties broken by lower index.
inline std::vector<int> top_k(const Eigen::MatrixXd& column, int k) {
  std::vector<int> idx(static_cast<std::size_t>(column.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  k = std::min<int>(k, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    const double va = column(a, 0), vb = column(b, 0);
    return va > vb || (va == vb && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

template <typename State, typename Step>
Hypothesis beam_search_with(State initial, Step&& step, const BeamConfig& cfg) {
  struct Live {
    Hypothesis hyp;
    State state;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
  };
  const int beam = std::max(cfg.beam, 1);
  std::vector<Live> live;
  live.push_back({Hypothesis{}, std::move(initial)});
  std::vector<Hypothesis> finished;

  for (int t = 0; t < cfg.max_len && !live.empty(); ++t) {
    std::vector<Candidate> cands;
    std::vector<State> next_states;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const int prev = live[h].hyp.ids.empty() ? Vocabulary::kBos : live[h].hyp.ids.back();
      auto [dist, next] = step(prev, live[h].state);
      const Eigen::MatrixXd& p = dist;
      for (int tok : top_k(p, beam)) cands.push_back({h, tok, live[h].hyp.log_prob + std::log(std::max(p(tok, 0), 1e-300))});
      next_states.push_back(std::move(next));
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });
    std::vector<Live> survivors;
    for (std::size_t c = 0; c < cands.size() && c < static_cast<std::size_t>(beam); ++c) {
      const auto& cand = cands[c];
      Hypothesis hyp = live[cand.parent].hyp;
      hyp.log_prob = cand.log_prob;
      if (cand.token == Vocabulary::kEos) {
        hyp.finished = true;
        hyp.score = normalized_score(hyp.log_prob, hyp.ids.size() + 1, cfg.length_penalty);
        finished.push_back(std::move(hyp));
      } else {
        hyp.ids.push_back(cand.token);
        hyp.score = normalized_score(hyp.log_prob, hyp.ids.size(), cfg.length_penalty);
        survivors.push_back({std::move(hyp), next_states[cand.parent]});
      }
    }
    live = std::move(survivors);
    if (static_cast<int>(finished.size()) >= beam) break;
  }
  if (finished.empty())
    for (auto& l : live) finished.push_back(std::move(l.hyp));
  if (finished.empty()) return {};
  return *std::max_element(finished.begin(), finished.end(),
                           [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
}

template <typename State, typename Step>
Hypothesis greedy_search_with(State state, Step&& step, int max_len) {
  Hypothesis hyp;
  int prev = Vocabulary::kBos;
  for (int t = 0; t < max_len; ++t) {
    auto [dist, next] = step(prev, state);
    const Eigen::MatrixXd& p = dist;
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < p.rows(); ++i)
      if (p(i, 0) > p(best, 0)) best = i;
    hyp.log_prob += std::log(std::max(p(best, 0), 1e-300));
    if (best == Vocabulary::kEos) {
      hyp.finished = true;
      break;
    }
    hyp.ids.push_back(static_cast<int>(best));
    prev = static_cast<int>(best);
    state = std::move(next);
  }
  return hyp;
}

}  // namespace kqg
