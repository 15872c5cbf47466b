#include "histgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "histgen/tokenizer.hpp"

namespace histgen::metrics {

namespace {

std::map<std::vector<std::string>, int> ngram_counts(const Tokens& toks, std::size_t n) {
  std::map<std::vector<std::string>, int> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++counts[std::vector<std::string>(toks.begin() + static_cast<long>(i),
                                      toks.begin() + static_cast<long>(i + n))];
  return counts;
}

}  // namespace

std::array<double, 4> bleu_1_to_4(const Tokens& candidate, const Tokens& reference) {
  std::array<double, 4> out{};
  if (candidate.empty() || reference.empty()) return out;
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;

  std::array<double, 4> precision{};
  std::array<bool, 4> has_grams{};
  for (std::size_t n = 1; n <= 4; ++n) {
    auto cand = ngram_counts(candidate, n);
    auto ref = ngram_counts(reference, n);
    long total = 0, clipped = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      auto it = ref.find(gram);
      if (it != ref.end()) clipped += std::min(count, it->second);
    }
    has_grams[n - 1] = total > 0;
    precision[n - 1] = total > 0 ? static_cast<double>(clipped) / static_cast<double>(total)
                                 : 0.0;
  }
  // Orders beyond the candidate length contribute nothing to the geometric
  // mean (an identical 3-token pair still scores BLEU-4 = 1).
  for (std::size_t k = 1; k <= 4; ++k) {
    double log_sum = 0.0;
    int counted = 0;
    bool zero = false;
    for (std::size_t n = 1; n <= k; ++n) {
      if (!has_grams[n - 1]) break;
      if (precision[n - 1] <= 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(precision[n - 1]);
      ++counted;
    }
    out[k - 1] =
        (zero || counted == 0) ? 0.0 : bp * std::exp(log_sum / static_cast<double>(counted));
  }
  return out;
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t m = candidate.size(), n = reference.size();
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= n; ++j)
      dp[i][j] = candidate[i - 1] == reference[j - 1]
                     ? dp[i - 1][j - 1] + 1
                     : std::max(dp[i - 1][j], dp[i][j - 1]);
  const double lcs = dp[m][n];
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(m);
  const double rec = lcs / static_cast<double>(n);
  const double b2 = beta * beta;
  return (1.0 + b2) * p * rec / (rec + b2 * p);
}

namespace {

// Minimal-chunk maximum matching for exact METEOR. The match count per token
// type is forced (min of the two counts), but which occurrences pair up is
// free; branch-and-bound picks the assignment with the fewest chunks.
struct ChunkSearch {
  const Tokens& cand;
  std::vector<int> type_of_cand;              // -1 when the token never matches
  std::vector<std::vector<int>> ref_pos_of;   // per type
  std::vector<int> budget;                    // per type, decremented on match
  std::vector<bool> ref_used;
  int need = 0;
  int best_chunks = std::numeric_limits<int>::max();
  long nodes = 0;

  void run(std::size_t ci, int last_c, int last_r, int chunks, int matched) {
    if (++nodes > 2000000) return;  // safety valve for adversarial inputs
    if (chunks >= best_chunks) return;
    if (matched == need) {
      best_chunks = chunks;
      return;
    }
    if (ci >= cand.size()) return;
    // Optimistic bound: every remaining position with live budget matches.
    int possible = matched;
    for (std::size_t k = ci; k < cand.size(); ++k) {
      int t = type_of_cand[k];
      if (t >= 0 && budget[static_cast<std::size_t>(t)] > 0) ++possible;
    }
    if (possible < need) return;

    int t = type_of_cand[ci];
    if (t >= 0 && budget[static_cast<std::size_t>(t)] > 0) {
      --budget[static_cast<std::size_t>(t)];
      for (int rp : ref_pos_of[static_cast<std::size_t>(t)]) {
        if (ref_used[static_cast<std::size_t>(rp)]) continue;
        bool contiguous = (static_cast<int>(ci) == last_c + 1) && (rp == last_r + 1);
        ref_used[static_cast<std::size_t>(rp)] = true;
        run(ci + 1, static_cast<int>(ci), rp, chunks + (contiguous ? 0 : 1), matched + 1);
        ref_used[static_cast<std::size_t>(rp)] = false;
      }
      ++budget[static_cast<std::size_t>(t)];
    }
    run(ci + 1, last_c, last_r, chunks, matched);
  }
};

}  // namespace

double meteor_exact(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::map<std::string, int> cand_counts, ref_counts;
  for (const auto& t : candidate) ++cand_counts[t];
  for (const auto& t : reference) ++ref_counts[t];
  int matches = 0;
  std::map<std::string, int> type_id;
  std::vector<int> type_budget;
  std::vector<std::vector<int>> type_ref_pos;
  for (const auto& [tok, cc] : cand_counts) {
    auto it = ref_counts.find(tok);
    if (it == ref_counts.end()) continue;
    int quota = std::min(cc, it->second);
    matches += quota;
    type_id[tok] = static_cast<int>(type_budget.size());
    type_budget.push_back(quota);
    type_ref_pos.emplace_back();
  }
  if (matches == 0) return 0.0;
  for (std::size_t j = 0; j < reference.size(); ++j) {
    auto it = type_id.find(reference[j]);
    if (it != type_id.end())
      type_ref_pos[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(j));
  }

  ChunkSearch search{candidate, {}, std::move(type_ref_pos), std::move(type_budget), {},
                     matches};
  search.type_of_cand.resize(candidate.size(), -1);
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    auto it = type_id.find(candidate[i]);
    if (it != type_id.end()) search.type_of_cand[i] = it->second;
  }
  search.ref_used.assign(reference.size(), false);
  search.run(0, -2, -2, 0, 0);
  int chunks = search.best_chunks == std::numeric_limits<int>::max()
                   ? matches
                   : search.best_chunks;

  const double m = matches;
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return f_mean * (1.0 - penalty);
}

NlgScore evaluate_pair(const std::string& candidate, const std::string& reference) {
  Tokens c = tokenize(candidate);
  Tokens r = tokenize(reference);
  NlgScore s;
  s.bleu = bleu_1_to_4(c, r);
  s.meteor = meteor_exact(c, r);
  s.rouge_l = rouge_l(c, r);
  return s;
}

NlgScore evaluate_corpus(const std::vector<std::string>& candidates,
                         const std::vector<std::string>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("evaluate_corpus: candidate/reference count mismatch");
  if (candidates.empty()) throw std::invalid_argument("evaluate_corpus: empty corpus");
  NlgScore total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    NlgScore s = evaluate_pair(candidates[i], references[i]);
    for (int k = 0; k < 4; ++k) total.bleu[static_cast<std::size_t>(k)] +=
        s.bleu[static_cast<std::size_t>(k)];
    total.meteor += s.meteor;
    total.rouge_l += s.rouge_l;
  }
  const double inv = 1.0 / static_cast<double>(candidates.size());
  for (auto& b : total.bleu) b *= inv;
  total.meteor *= inv;
  total.rouge_l *= inv;
  return total;
}

double c_index(const std::vector<SurvivalRecord>& records) {
  double concordant = 0.0;
  long comparable = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].censored) continue;
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (i == j) continue;
      if (records[i].event_time < records[j].event_time) {
        ++comparable;
        if (records[i].risk_score > records[j].risk_score)
          concordant += 1.0;
        else if (records[i].risk_score == records[j].risk_score)
          concordant += 0.5;
      }
    }
  }
  if (comparable == 0) throw std::runtime_error("c_index: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

double accuracy(const std::vector<std::vector<double>>& probabilities,
                const std::vector<int>& labels) {
  if (probabilities.size() != labels.size() || probabilities.empty())
    throw std::invalid_argument("accuracy: size mismatch or empty input");
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& p = probabilities[i];
    int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

double binary_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
  // Rank statistic with average ranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum = 0.0;
  long n_pos = 0, n_neg = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (positive[k]) {
      rank_sum += rank[k];
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0) throw std::runtime_error("auc: single-class label set");
  double u = rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

double auc(const std::vector<std::vector<double>>& probabilities,
           const std::vector<int>& labels) {
  if (probabilities.size() != labels.size() || probabilities.empty())
    throw std::invalid_argument("auc: size mismatch or empty input");
  std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2) throw std::runtime_error("auc: single-class label set");
  if (classes.size() == 2) {
    int pos_class = *classes.rbegin();
    std::vector<double> scores(labels.size());
    std::vector<std::uint8_t> positive(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities[i][static_cast<std::size_t>(pos_class)];
      positive[i] = labels[i] == pos_class ? 1 : 0;
    }
    return binary_auc(scores, positive);
  }
  double total = 0.0;
  for (int cls : classes) {
    std::vector<double> scores(labels.size());
    std::vector<std::uint8_t> positive(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities[i][static_cast<std::size_t>(cls)];
      positive[i] = labels[i] == cls ? 1 : 0;
    }
    total += binary_auc(scores, positive);
  }
  return total / static_cast<double>(classes.size());
}

}  // namespace histgen::metrics
