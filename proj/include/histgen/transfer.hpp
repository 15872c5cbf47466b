#pragma once

#include <optional>
#include <string>
#include <vector>

#include "histgen/metrics.hpp"
#include "histgen/model.hpp"

namespace histgen {

// WSI-level pooling over region representations; same gated-attention form
// as the encoder's region pooling, no positional term, so it is permutation
// invariant over regions.
class WsiPooler {
 public:
  WsiPooler(nn::ParamStore& store, int d_model, int hidden);
  ad::Var forward(const ad::Var& region_reps, ad::Var* weights_out = nullptr) const;

 private:
  nn::GatedAttentionPool pool_;
};

class ClassificationHead {
 public:
  ClassificationHead(nn::ParamStore& store, int d_model, int classes);
  int classes() const { return classes_; }
  ad::Var logits(const ad::Var& pooled) const { return head_.forward(pooled); }
  ad::Var probabilities(const ad::Var& pooled) const;

 private:
  nn::Linear head_;
  int classes_;
};

class SurvivalHead {
 public:
  SurvivalHead(nn::ParamStore& store, int d_model, int bins);
  int bins() const { return bins_; }
  // Sigmoid hazards per discrete time bin, 1 x B.
  ad::Var hazards(const ad::Var& pooled) const;
  // risk = sum_b (1 - S(b)) with S(b) the cumulative survival through bin b;
  // zero at vanishing hazards, strictly increasing in every hazard.
  static double risk_score(const ad::Matrix& hazards);
  // Discrete-time censored negative log-likelihood for one sample.
  ad::Var nll(const ad::Var& hazards, int bin, bool censored) const;

 private:
  nn::Linear head_;
  int bins_;
};

struct TaskSample {
  std::string wsi_id;
  Eigen::MatrixXf features;
  int label = -1;          // classification
  double time = 0.0;       // survival
  bool censored = false;
};

struct FoldMetrics {
  int fold = 0;
  double accuracy = 0.0;
  double auc = 0.0;
  double c_index = 0.0;
  bool skipped = false;
};

struct TransferResult {
  std::vector<FoldMetrics> folds;
  double mean_primary = 0.0;  // accuracy or c-index
  double std_primary = 0.0;
  double mean_auc = 0.0;      // classification only
  double std_auc = 0.0;
};

// Quantile bin edges from uncensored training times (upper-inclusive).
std::vector<double> survival_bin_edges(const std::vector<double>& event_times, int bins);
int survival_bin_of(double time, const std::vector<double>& edges);

struct FinetuneOptions {
  FinetuneConfig config;
  std::uint64_t seed = 0;
  bool from_scratch = false;  // ignore checkpoint weights, fresh init
};

// Monte Carlo cross-validated fine-tuning: per fold, resample an 80/20
// train/test split, fine-tune a copy of the model with an attached head,
// evaluate. Folds with a single-class training set are skipped with a
// warning flag.
TransferResult finetune_classification(const RunConfig& config,
                                       const std::map<std::string, ad::Matrix>* pretrained,
                                       const std::vector<TaskSample>& samples,
                                       const FinetuneOptions& options);

TransferResult finetune_survival(const RunConfig& config,
                                 const std::map<std::string, ad::Matrix>* pretrained,
                                 const std::vector<TaskSample>& samples,
                                 const FinetuneOptions& options);

}  // namespace histgen
