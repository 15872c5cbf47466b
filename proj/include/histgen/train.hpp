#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "histgen/metrics.hpp"
#include "histgen/model.hpp"

namespace histgen {

// Mean negative log-likelihood over the given target positions (already
// PAD-free); optional label smoothing mixes in the uniform distribution.
ad::Var ce_loss(const ad::Var& logits, const std::vector<int>& target_ids,
                double label_smoothing = 0.0);

// Scalar form over a padded target: logits row i predicts target position
// i + 1; PAD positions are excluded. Throws when nothing is predictable.
double cross_entropy_loss(const ad::Matrix& logits, const TokenSequence& target);

// Extracts [y1, ..., EOS] from a padded target — the positions the decoder
// is scored on.
std::vector<int> prediction_targets(const TokenSequence& target);

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ad::Var> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8, double weight_decay = 0.0);

  // Global-norm gradient clip followed by one Adam update.
  void step(double lr, double clip_norm = 0.0);
  double grad_norm() const;

 private:
  std::vector<ad::Var> params_;
  std::vector<ad::Matrix> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
};

struct TrainPair {
  std::string wsi_id;
  Eigen::MatrixXf features;
  TokenSequence target;
  std::string reference_text;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  bool has_val = false;
  metrics::NlgScore val;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_metric = 0.0;  // val BLEU-4, or -train-loss when no val split
};

// Adam with per-epoch learning-rate decay; keeps the best-validation
// parameter snapshot and restores it before returning. Deterministic given
// config.seed. Aborts with diagnostics if the loss turns non-finite.
TrainResult fit(HistGenModel& model, const std::vector<TrainPair>& train,
                const std::vector<TrainPair>& val, const Vocabulary& vocab,
                const std::function<void(const EpochLog&)>& on_epoch = nullptr);

}  // namespace histgen
