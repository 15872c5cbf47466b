#include "histgen/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "histgen/train.hpp"

namespace histgen {

using ad::Matrix;
using ad::Var;

WsiPooler::WsiPooler(nn::ParamStore& store, int d_model, int hidden)
    : pool_(store, "transfer.pool", d_model, hidden) {}

Var WsiPooler::forward(const Var& region_reps, Var* weights_out) const {
  if (region_reps->rows() < 1) throw std::invalid_argument("pool_wsi: no regions");
  return pool_.forward(region_reps, nullptr, weights_out);
}

ClassificationHead::ClassificationHead(nn::ParamStore& store, int d_model, int classes)
    : head_(store, "transfer.cls", d_model, classes, nn::Init::Normal002),
      classes_(classes) {
  if (classes < 2) throw std::invalid_argument("classification head: need >= 2 classes");
}

Var ClassificationHead::probabilities(const Var& pooled) const {
  return ad::softmax_rows(logits(pooled));
}

SurvivalHead::SurvivalHead(nn::ParamStore& store, int d_model, int bins)
    : head_(store, "transfer.surv", d_model, bins, nn::Init::Normal002), bins_(bins) {
  if (bins < 2) throw std::invalid_argument("survival head: need >= 2 bins");
}

Var SurvivalHead::hazards(const Var& pooled) const { return ad::sigmoid(head_.forward(pooled)); }

double SurvivalHead::risk_score(const Matrix& hazards) {
  // sum_b (1 - S(b)) with S(b) = prod_{k<=b}(1 - h_k): zero when all hazards
  // vanish, strictly increasing in every hazard, and bounded, so saturated
  // hazards in bins past a sample's event cannot scramble the risk ordering.
  double surv = 1.0;
  double risk = 0.0;
  for (Eigen::Index b = 0; b < hazards.cols(); ++b) {
    surv *= 1.0 - hazards(0, b);
    risk += 1.0 - surv;
  }
  return risk;
}

Var SurvivalHead::nll(const Var& hazards, int bin, bool censored) const {
  if (bin < 0 || bin >= bins_) throw std::invalid_argument("survival nll: bin out of range");
  Var ones = ad::constant(Matrix::Ones(1, hazards->cols()));
  Var log_haz = ad::log_op(hazards);
  Var log_surv = ad::log_op(ad::sub(ones, hazards));
  Var total;
  for (int k = 0; k < bin; ++k) {
    Var term = ad::cols(log_surv, k, 1);
    total = total ? ad::add(total, term) : term;
  }
  if (censored) {
    Var term = ad::cols(log_surv, bin, 1);
    total = total ? ad::add(total, term) : term;
  } else {
    Var term = ad::cols(log_haz, bin, 1);
    total = total ? ad::add(total, term) : term;
  }
  return ad::scale(total, -1.0);
}

std::vector<double> survival_bin_edges(const std::vector<double>& event_times, int bins) {
  if (event_times.empty())
    throw std::invalid_argument("survival_bin_edges: no uncensored training times");
  for (double t : event_times)
    if (!(t > 0.0)) throw std::invalid_argument("survival_bin_edges: non-positive time");
  std::vector<double> sorted = event_times;
  std::sort(sorted.begin(), sorted.end());

  // Distinct values with cumulative counts; heavily tied times (clustered
  // cohorts) would otherwise let nearest-rank edges merge distinct groups.
  std::vector<std::pair<double, double>> cum;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (cum.empty() || sorted[i] != cum.back().first)
      cum.emplace_back(sorted[i], static_cast<double>(i + 1));
    else
      cum.back().second = static_cast<double>(i + 1);
  }

  std::vector<double> edges;
  for (int k = 1; k < bins; ++k) {
    double target = static_cast<double>(k) * static_cast<double>(sorted.size()) /
                    static_cast<double>(bins);
    double best_value = cum.front().first;
    double best_gap = std::abs(cum.front().second - target);
    for (const auto& [value, count] : cum) {
      double gap = std::abs(count - target);
      if (gap < best_gap || (gap == best_gap && value > best_value)) {
        best_gap = gap;
        best_value = value;
      }
    }
    if (edges.empty() || best_value > edges.back()) edges.push_back(best_value);
  }
  return edges;
}

int survival_bin_of(double time, const std::vector<double>& edges) {
  int bin = 0;
  for (double e : edges)
    if (time > e) ++bin;
  return bin;
}

namespace {

struct FoldContext {
  std::unique_ptr<HistGenModel> model;
  std::unique_ptr<WsiPooler> pooler;
};

constexpr int kScratchVocabSize = 8;  // decoder is unused; smallest legal table

FoldContext make_fold_model(const RunConfig& base_config,
                            const std::map<std::string, Matrix>* pretrained,
                            const FinetuneOptions& options, int fold,
                            nn::ParamStore** store_out) {
  RunConfig cfg = base_config;
  cfg.seed = seed_for(options.seed, "finetune.fold." + std::to_string(fold));
  int vocab_size = kScratchVocabSize;
  bool use_weights = pretrained && !options.from_scratch;
  if (use_weights) {
    auto it = pretrained->find("decoder.embedding");
    if (it != pretrained->end()) vocab_size = static_cast<int>(it->second.rows());
  }
  FoldContext ctx;
  ctx.model = std::make_unique<HistGenModel>(cfg, vocab_size);
  ctx.pooler =
      std::make_unique<WsiPooler>(ctx.model->params(), cfg.encoder.d_model,
                                  cfg.encoder.pool_hidden);
  *store_out = &ctx.model->params();
  if (use_weights) ctx.model->params().restore_present(*pretrained);
  return ctx;
}

std::vector<Var> trainable_params(nn::ParamStore& store, bool freeze_encoder) {
  std::vector<Var> out;
  for (const auto& [name, p] : store.all()) {
    bool is_head = name.rfind("transfer.", 0) == 0;
    bool is_decoder = name.rfind("decoder.", 0) == 0;
    if (is_decoder) continue;  // report decoder plays no part in transfer
    if (freeze_encoder && !is_head) continue;
    out.push_back(p);
  }
  return out;
}

void summarize(TransferResult& result, bool classification) {
  std::vector<double> primary, aucs;
  for (const auto& f : result.folds) {
    if (f.skipped) continue;
    primary.push_back(classification ? f.accuracy : f.c_index);
    if (classification) aucs.push_back(f.auc);
  }
  auto mean_std = [](const std::vector<double>& v) {
    if (v.empty()) return std::pair<double, double>{0.0, 0.0};
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    double sd = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size())) : 0.0;
    return std::pair<double, double>{mean, sd};
  };
  std::tie(result.mean_primary, result.std_primary) = mean_std(primary);
  if (classification) std::tie(result.mean_auc, result.std_auc) = mean_std(aucs);
}

}  // namespace

TransferResult finetune_classification(const RunConfig& config,
                                       const std::map<std::string, Matrix>* pretrained,
                                       const std::vector<TaskSample>& samples,
                                       const FinetuneOptions& options) {
  options.config.validate();
  if (samples.size() < 5)
    throw std::invalid_argument("finetune_classification: too few samples");
  int classes = 0;
  for (const auto& s : samples) classes = std::max(classes, s.label + 1);
  if (classes < 2) throw std::invalid_argument("finetune_classification: need >= 2 classes");

  TransferResult result;
  for (int fold = 0; fold < options.config.monte_carlo_folds; ++fold) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed_for(options.seed, "finetune.split." + std::to_string(fold)));
    rng.shuffle(order);
    std::size_t n_train = (samples.size() * 4) / 5;
    n_train = std::max<std::size_t>(1, std::min(n_train, samples.size() - 1));

    std::set<int> train_classes, test_classes;
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < n_train ? train_classes : test_classes).insert(samples[order[i]].label);

    FoldMetrics fm;
    fm.fold = fold;
    if (train_classes.size() < 2 || test_classes.size() < 2) {
      fm.skipped = true;
      result.folds.push_back(fm);
      continue;
    }

    nn::ParamStore* store = nullptr;
    FoldContext ctx = make_fold_model(config, pretrained, options, fold, &store);
    ClassificationHead head(*store, config.encoder.d_model, classes);
    AdamOptimizer opt(trainable_params(*store, options.config.freeze_encoder));

    Rng epoch_rng(seed_for(options.seed, "finetune.epochs." + std::to_string(fold)));
    std::vector<std::size_t> train_idx(order.begin(),
                                       order.begin() + static_cast<long>(n_train));
    for (int epoch = 0; epoch < options.config.epochs; ++epoch) {
      epoch_rng.shuffle(train_idx);
      for (std::size_t idx : train_idx) {
        const TaskSample& s = samples[idx];
        store->zero_grads();
        Var reps = ctx.model->encode_visual(s.features);
        Var pooled = ctx.pooler->forward(reps);
        Var loss = ce_loss(head.logits(pooled), {s.label});
        ad::backward(loss);
        opt.step(options.config.learning_rate, 5.0);
      }
    }

    std::vector<std::vector<double>> probs;
    std::vector<int> labels;
    {
      ad::NoGradGuard no_grad;
      for (std::size_t i = n_train; i < order.size(); ++i) {
        const TaskSample& s = samples[order[i]];
        Var reps = ctx.model->encode_visual(s.features);
        Var p = head.probabilities(ctx.pooler->forward(reps));
        std::vector<double> row(static_cast<std::size_t>(classes));
        for (int c = 0; c < classes; ++c) row[static_cast<std::size_t>(c)] = p->value(0, c);
        probs.push_back(std::move(row));
        labels.push_back(s.label);
      }
    }
    fm.accuracy = metrics::accuracy(probs, labels);
    fm.auc = metrics::auc(probs, labels);
    result.folds.push_back(fm);
  }
  summarize(result, true);
  return result;
}

TransferResult finetune_survival(const RunConfig& config,
                                 const std::map<std::string, Matrix>* pretrained,
                                 const std::vector<TaskSample>& samples,
                                 const FinetuneOptions& options) {
  options.config.validate();
  if (samples.size() < 5) throw std::invalid_argument("finetune_survival: too few samples");
  for (const auto& s : samples)
    if (!(s.time > 0.0))
      throw std::invalid_argument("finetune_survival: non-positive time for " + s.wsi_id);

  const int bins = options.config.survival_bins;
  TransferResult result;
  for (int fold = 0; fold < options.config.monte_carlo_folds; ++fold) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed_for(options.seed, "finetune.split." + std::to_string(fold)));
    rng.shuffle(order);
    std::size_t n_train = (samples.size() * 4) / 5;
    n_train = std::max<std::size_t>(1, std::min(n_train, samples.size() - 1));

    FoldMetrics fm;
    fm.fold = fold;
    std::vector<double> train_event_times;
    for (std::size_t i = 0; i < n_train; ++i)
      if (!samples[order[i]].censored) train_event_times.push_back(samples[order[i]].time);
    if (train_event_times.size() < 2) {
      fm.skipped = true;
      result.folds.push_back(fm);
      continue;
    }
    std::vector<double> edges = survival_bin_edges(train_event_times, bins);

    nn::ParamStore* store = nullptr;
    FoldContext ctx = make_fold_model(config, pretrained, options, fold, &store);
    SurvivalHead head(*store, config.encoder.d_model, bins);
    AdamOptimizer opt(trainable_params(*store, options.config.freeze_encoder));

    Rng epoch_rng(seed_for(options.seed, "finetune.epochs." + std::to_string(fold)));
    std::vector<std::size_t> train_idx(order.begin(),
                                       order.begin() + static_cast<long>(n_train));
    for (int epoch = 0; epoch < options.config.epochs; ++epoch) {
      epoch_rng.shuffle(train_idx);
      for (std::size_t idx : train_idx) {
        const TaskSample& s = samples[idx];
        store->zero_grads();
        Var reps = ctx.model->encode_visual(s.features);
        Var hazards = head.hazards(ctx.pooler->forward(reps));
        Var loss = head.nll(hazards, survival_bin_of(s.time, edges), s.censored);
        ad::backward(loss);
        opt.step(options.config.learning_rate, 5.0);
      }
    }

    std::vector<metrics::SurvivalRecord> records;
    {
      ad::NoGradGuard no_grad;
      for (std::size_t i = n_train; i < order.size(); ++i) {
        const TaskSample& s = samples[order[i]];
        Var reps = ctx.model->encode_visual(s.features);
        Var hazards = head.hazards(ctx.pooler->forward(reps));
        records.push_back({SurvivalHead::risk_score(hazards->value), s.time, s.censored});
      }
    }
    try {
      fm.c_index = metrics::c_index(records);
    } catch (const std::exception&) {
      fm.skipped = true;  // no comparable pairs in this fold's test set
    }
    result.folds.push_back(fm);
  }
  summarize(result, false);
  return result;
}

}  // namespace histgen
