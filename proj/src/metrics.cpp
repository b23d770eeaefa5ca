#include "kqg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "kqg/errors.hpp"

namespace kqg {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ValidationError(std::string(what) + ": " + std::to_string(a) + " hypotheses for " + std::to_string(b) +
                          " references");
}

std::map<std::vector<std::string>, int> ngram_counts(const Tokens& tokens, int n) {
  std::map<std::vector<std::string>, int> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
    ++counts[Tokens(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i) + n)];
  return counts;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Aligns unmatched hypothesis positions to unmatched reference positions
// with an equal key. Continuing the previous alignment wins; otherwise the
// reference position that starts the longest run of further matches.
void align_stage(const std::vector<std::string>& hyp_keys, const std::vector<std::string>& ref_keys,
                 std::vector<int>& hyp_to_ref, std::vector<bool>& ref_used) {
  const auto run_length = [&](std::size_t i, std::size_t j) {
    std::size_t n = 0;
    while (i + n < hyp_keys.size() && j + n < ref_keys.size() && hyp_to_ref[i + n] < 0 && !ref_used[j + n] &&
           hyp_keys[i + n] == ref_keys[j + n])
      ++n;
    return n;
  };
  for (std::size_t i = 0; i < hyp_keys.size(); ++i) {
    if (hyp_to_ref[i] >= 0) continue;
    int pick = -1;
    if (i > 0 && hyp_to_ref[i - 1] >= 0) {
      const auto next = static_cast<std::size_t>(hyp_to_ref[i - 1] + 1);
      if (next < ref_keys.size() && !ref_used[next] && ref_keys[next] == hyp_keys[i]) pick = static_cast<int>(next);
    }
    if (pick < 0) {
      std::size_t best = 0;
      for (std::size_t j = 0; j < ref_keys.size(); ++j) {
        const auto len = run_length(i, j);
        if (len > best) {
          best = len;
          pick = static_cast<int>(j);
        }
      }
    }
    if (pick >= 0) {
      hyp_to_ref[i] = pick;
      ref_used[static_cast<std::size_t>(pick)] = true;
    }
  }
}

double meteor_pair(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  std::vector<int> hyp_to_ref(hyp.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  align_stage(hyp, ref, hyp_to_ref, ref_used);
  std::vector<std::string> hs, rs;
  for (const auto& t : hyp) hs.push_back(porter_stem(t));
  for (const auto& t : ref) rs.push_back(porter_stem(t));
  align_stage(hs, rs, hyp_to_ref, ref_used);

  std::size_t matches = 0, chunks = 0;
  int prev = -2;
  for (int r : hyp_to_ref) {
    if (r < 0) {
      prev = -2;
      continue;
    }
    ++matches;
    if (r != prev + 1) ++chunks;
    prev = r;
  }
  if (matches == 0) return 0.0;
  const double P = double(matches) / double(hyp.size());
  const double R = double(matches) / double(ref.size());
  const double fmean = 10.0 * P * R / (R + 9.0 * P);
  const double penalty = 0.5 * std::pow(double(chunks - 1) / double(matches), 3.0);
  return fmean * (1.0 - penalty);
}

}  // namespace

double bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references, int max_n) {
  check_aligned(hypotheses.size(), references.size(), "bleu");
  if (max_n < 1 || max_n > 4) throw ValidationError("bleu: max_n must lie in 1..4");
  std::vector<double> matched(static_cast<std::size_t>(max_n), 0.0), total(static_cast<std::size_t>(max_n), 0.0);
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    if (ref.empty()) throw ValidationError("bleu: empty reference at sample " + std::to_string(s));
    hyp_len += double(hyp.size());
    ref_len += double(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto hc = ngram_counts(hyp, n);
      const auto rc = ngram_counts(ref, n);
      for (const auto& [gram, count] : hc) {
        const auto it = rc.find(gram);
        if (it != rc.end()) matched[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
      }
      // A hypothesis shorter than n still contributes one to the denominator.
      total[static_cast<std::size_t>(n - 1)] += std::max<double>(1, double(hyp.size()) - n + 1);
    }
  }
  if (hyp_len == 0 || matched[0] == 0) return 0.0;
  bool smooth = false;
  for (int n = 2; n <= max_n; ++n) smooth = smooth || matched[static_cast<std::size_t>(n - 1)] == 0;
  double log_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    double num = matched[static_cast<std::size_t>(n - 1)], den = total[static_cast<std::size_t>(n - 1)];
    if (smooth && n > 1) {
      num += 1;
      den += 1;
    }
    log_sum += std::log(num / den) / max_n;
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum);
}

double rouge_l(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  check_aligned(hypotheses.size(), references.size(), "rouge_l");
  if (hypotheses.empty()) return 0.0;
  constexpr double beta2 = 1.2 * 1.2;
  double total = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    if (hyp.empty() || ref.empty()) continue;
    const double lcs = double(lcs_length(hyp, ref));
    if (lcs == 0) continue;
    const double p = lcs / double(hyp.size()), r = lcs / double(ref.size());
    total += (1 + beta2) * p * r / (r + beta2 * p);
  }
  return 100.0 * total / double(hypotheses.size());
}

double meteor_lite(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  check_aligned(hypotheses.size(), references.size(), "meteor_lite");
  if (hypotheses.empty()) return 0.0;
  double total = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) total += meteor_pair(hypotheses[s], references[s]);
  return 100.0 * total / double(hypotheses.size());
}

double rc_accuracy(std::span<const int> predictions, std::span<const int> golds) {
  check_aligned(predictions.size(), golds.size(), "rc_accuracy");
  if (golds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
  return 100.0 * double(correct) / double(golds.size());
}

double tg_bleu1(const std::vector<Tokens>& predicted, const std::vector<Tokens>& gold) { return bleu(predicted, gold, 1); }

EvalReport evaluate_questions(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  EvalReport report;
  for (int n = 1; n <= 4; ++n) report.bleu[n - 1] = bleu(hypotheses, references, n);
  report.rouge_l = rouge_l(hypotheses, references);
  report.meteor = meteor_lite(hypotheses, references);
  report.samples = hypotheses.size();
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["samples"] = report.samples;
  for (int n = 1; n <= 4; ++n) j["bleu" + std::to_string(n)] = report.bleu[n - 1];
  j["rouge_l"] = report.rouge_l;
  j["meteor_lite"] = report.meteor;
  if (report.rc_accuracy) j["rc_accuracy"] = *report.rc_accuracy;
  if (report.tg_bleu1) j["tg_bleu1"] = *report.tg_bleu1;
  return j;
}

}  // namespace kqg
