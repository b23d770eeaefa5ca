#pragma once

// Corpus-level evaluation scores, all reported as percentages.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace kqg {

using Tokens = std::vector<std::string>;

/// Corpus BLEU with uniform weights over orders 1..max_n and a brevity
/// penalty. When any order above 1 has zero matches, orders above 1 get +1
/// added to numerator and denominator. A hypothesis shorter than n counts
/// one n-gram slot for that order.
double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int max_n = 4);

/// Mean LCS F-measure with beta = 1.2.
double rouge_l(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

/// Exact + stem unigram matching, Fmean = 10PR / (R + 9P), penalty
/// 0.5 * ((chunks - 1) / matches)^3. Mean over samples.
double meteor_lite(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

double rc_accuracy(std::span<const int> predictions, std::span<const int> golds);

double tg_bleu1(const std::vector<Tokens>& predicted, const std::vector<Tokens>& gold);

/// Porter (1980) suffix stripper over lowercase ASCII words.
std::string porter_stem(std::string_view word);

struct EvalReport {
  double bleu[4] = {0, 0, 0, 0};
  double rouge_l = 0.0;
  double meteor = 0.0;
  std::optional<double> rc_accuracy;
  std::optional<double> tg_bleu1;
  std::size_t samples = 0;
};

EvalReport evaluate_questions(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);
nlohmann::json report_to_json(const EvalReport& report);

}  // namespace kqg
