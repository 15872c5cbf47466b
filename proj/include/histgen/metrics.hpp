#pragma once

#include <array>
#include <string>
#include <vector>

namespace histgen::metrics {

using Tokens = std::vector<std::string>;

struct NlgScore {
  std::array<double, 4> bleu{};  // BLEU-1..4
  double meteor = 0.0;
  double rouge_l = 0.0;
};

// Sentence-level BLEU-1..4 against a single reference: clipped n-gram
// precision, geometric mean up to each n, brevity penalty exp(1 - r/c) when
// c < r. Any zero precision zeroes that order (no smoothing).
std::array<double, 4> bleu_1_to_4(const Tokens& candidate, const Tokens& reference);

// LCS F-measure with recall weight beta (default 1.2).
double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2);

// Exact-match METEOR variant: no stem or synonym stages. Unigram alignment
// maximizes matches then minimizes chunks; F_mean = 10PR/(R+9P); penalty
// 0.5 * (chunks/matches)^3.
double meteor_exact(const Tokens& candidate, const Tokens& reference);

// Tokenizes both sides with the corpus tokenizer and averages the per-pair
// sentence scores.
NlgScore evaluate_pair(const std::string& candidate, const std::string& reference);
NlgScore evaluate_corpus(const std::vector<std::string>& candidates,
                         const std::vector<std::string>& references);

struct SurvivalRecord {
  double risk_score = 0.0;
  double event_time = 0.0;
  bool censored = false;
};

// Fraction of comparable pairs (i uncensored, time_i < time_j) where
// risk_i > risk_j; risk ties count 0.5. Throws when no pair is comparable.
double c_index(const std::vector<SurvivalRecord>& records);

// Argmax match rate; ties resolved toward the lower class index.
double accuracy(const std::vector<std::vector<double>>& probabilities,
                const std::vector<int>& labels);

// Mann-Whitney AUC; one-vs-rest macro average over classes present in the
// labels for the multiclass case. Throws when labels hold a single class.
double auc(const std::vector<std::vector<double>>& probabilities,
           const std::vector<int>& labels);

}  // namespace histgen::metrics
