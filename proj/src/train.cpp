#include "histgen/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace histgen {

using ad::Matrix;
using ad::Var;

Var ce_loss(const Var& logits, const std::vector<int>& target_ids, double label_smoothing) {
  if (target_ids.empty()) throw std::invalid_argument("ce_loss: no target positions");
  if (static_cast<Eigen::Index>(target_ids.size()) != logits->rows())
    throw std::invalid_argument("ce_loss: logits/target length mismatch");
  Var log_probs = ad::log_softmax_rows(logits);
  Var picked = ad::pick_columns(log_probs, target_ids);
  Var nll = ad::scale(ad::mean_all(picked), -1.0);
  if (label_smoothing <= 0.0) return nll;
  Var uniform = ad::scale(ad::mean_all(log_probs), -1.0);
  return ad::add(ad::scale(nll, 1.0 - label_smoothing), ad::scale(uniform, label_smoothing));
}

std::vector<int> prediction_targets(const TokenSequence& target) {
  std::size_t m = target.unpadded_length();
  if (m < 2)
    throw std::invalid_argument("cross_entropy_loss: every target position is PAD");
  return std::vector<int>(target.ids.begin() + 1, target.ids.begin() + static_cast<long>(m));
}

double cross_entropy_loss(const Matrix& logits, const TokenSequence& target) {
  std::vector<int> ids = prediction_targets(target);
  if (static_cast<Eigen::Index>(ids.size()) != logits.rows())
    throw std::invalid_argument("cross_entropy_loss: logits rows must match non-PAD targets");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    double lse = std::log((logits.row(i).array() - mx).exp().sum()) + mx;
    total += lse - logits(i, ids[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

AdamOptimizer::AdamOptimizer(std::vector<Var> params, double beta1, double beta2, double eps,
                             double weight_decay)
    : params_(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

double AdamOptimizer::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    if (p->grad.size() > 0) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

void AdamOptimizer::step(double lr, double clip_norm) {
  ++t_;
  double scale = 1.0;
  if (clip_norm > 0.0) {
    double norm = grad_norm();
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    p->ensure_grad();
    Matrix g = p->grad * scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix update =
        (m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + eps_);
    if (weight_decay_ > 0.0) update.array() += weight_decay_ * p->value.array();
    p->value -= lr * update;
  }
}

namespace {

metrics::NlgScore validate_bleu(const HistGenModel& model, const std::vector<TrainPair>& val,
                                const Vocabulary& vocab) {
  std::vector<std::string> candidates, references;
  const auto& cfg = model.config();
  for (const auto& pair : val) {
    GenerationOutput gen =
        model.generate(pair.features, cfg.decoder.beam_size, cfg.decoder.max_len);
    candidates.push_back(vocab.decode(gen.token_ids));
    references.push_back(pair.reference_text);
  }
  return metrics::evaluate_corpus(candidates, references);
}

}  // namespace

TrainResult fit(HistGenModel& model, const std::vector<TrainPair>& train,
                const std::vector<TrainPair>& val, const Vocabulary& vocab,
                const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("fit: empty training set");
  const TrainConfig& tc = model.config().train;
  tc.validate();
  const std::uint64_t seed = model.config().seed;

  std::vector<Var> params;
  for (const auto& [name, p] : model.params().all()) params.push_back(p);
  AdamOptimizer opt(params, 0.9, 0.999, 1e-8, tc.weight_decay);

  TrainResult result;
  std::map<std::string, Matrix> best_snapshot;
  double best_metric = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double lr = tc.learning_rate * std::pow(tc.epoch_decay, static_cast<double>(epoch));
    Rng shuffle_rng(seed_for(seed, "fit.shuffle." + std::to_string(epoch)));
    shuffle_rng.shuffle(order);
    Rng dropout_rng(seed_for(seed, "fit.dropout." + std::to_string(epoch)));
    bool use_dropout =
        model.config().encoder.dropout > 0.0 || model.config().decoder.dropout > 0.0;

    double epoch_loss = 0.0;
    std::size_t at = 0;
    while (at < order.size()) {
      std::size_t batch_end = std::min(order.size(), at + static_cast<std::size_t>(tc.batch_size));
      double inv_batch = 1.0 / static_cast<double>(batch_end - at);
      model.params().zero_grads();
      for (std::size_t k = at; k < batch_end; ++k) {
        const TrainPair& pair = train[order[k]];
        Var logits = model.teacher_forcing_logits(pair.features, pair.target,
                                                  use_dropout ? &dropout_rng : nullptr);
        Var loss = ce_loss(logits, prediction_targets(pair.target), tc.label_smoothing);
        double loss_value = loss->value(0, 0);
        if (!std::isfinite(loss_value))
          throw std::runtime_error("fit: loss diverged (non-finite) at epoch " +
                                   std::to_string(epoch) + ", wsi " + pair.wsi_id);
        epoch_loss += loss_value;
        ad::backward(ad::scale(loss, inv_batch));
      }
      opt.step(lr, tc.clip_norm);
      at = batch_end;
    }
    epoch_loss /= static_cast<double>(train.size());

    EpochLog log;
    log.epoch = epoch;
    log.loss = epoch_loss;
    log.learning_rate = lr;
    bool val_due = !val.empty() && ((epoch + 1) % tc.val_every == 0 || epoch + 1 == tc.epochs);
    if (val_due) {
      log.has_val = true;
      log.val = validate_bleu(model, val, vocab);
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    // With a validation split, only validated epochs compete for the best
    // snapshot; otherwise the lowest training loss wins.
    if (!val.empty() && !log.has_val) {
      if (tc.early_stop_train_loss > 0.0 && epoch_loss < tc.early_stop_train_loss) break;
      continue;
    }
    double metric = log.has_val ? log.val.bleu[3] : -epoch_loss;
    if (metric > best_metric) {
      best_metric = metric;
      result.best_epoch = epoch;
      result.best_metric = metric;
      best_snapshot = model.params().snapshot();
    }
    if (tc.early_stop_train_loss > 0.0 && epoch_loss < tc.early_stop_train_loss) break;
  }

  if (!best_snapshot.empty()) model.params().restore(best_snapshot);
  return result;
}

}  // namespace histgen
