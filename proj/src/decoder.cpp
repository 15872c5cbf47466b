#include "histgen/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace histgen {

using ad::Matrix;
using ad::Var;

DecoderLayer::DecoderLayer(nn::ParamStore& store, const std::string& prefix,
                           Eigen::Index d_model, int heads, Eigen::Index d_ff)
    : self_attn(store, prefix + ".self", d_model, heads),
      cross_attn(store, prefix + ".cross", d_model, heads),
      ffn(store, prefix + ".ffn", d_model, d_ff),
      ln1(store, prefix + ".ln1", d_model),
      ln2(store, prefix + ".ln2", d_model),
      ln3(store, prefix + ".ln3", d_model) {}

Var DecoderLayer::forward(const Var& x, const Var& memory, nn::AttentionProbe* cross_probe,
                          double dropout_p, Rng* dropout_rng) const {
  Var normed = ln1.forward(x);
  Var a = self_attn.forward(normed, normed, nullptr, /*causal=*/true);
  if (dropout_p > 0.0 && dropout_rng) a = ad::dropout(a, dropout_p, *dropout_rng);
  Var h = ad::add(x, a);
  Var c = cross_attn.forward(ln2.forward(h), memory, nullptr, false, nullptr, cross_probe);
  if (dropout_p > 0.0 && dropout_rng) c = ad::dropout(c, dropout_p, *dropout_rng);
  h = ad::add(h, c);
  Var f = ffn.forward(ln3.forward(h));
  if (dropout_p > 0.0 && dropout_rng) f = ad::dropout(f, dropout_p, *dropout_rng);
  return ad::add(h, f);
}

ReportDecoder::ReportDecoder(nn::ParamStore& store, const DecoderConfig& config, int vocab_size)
    : cfg_(config),
      vocab_size_(vocab_size),
      token_embedding_(
          store.create("decoder.embedding", vocab_size, config.d_model, nn::Init::Normal002)),
      final_ln_(store, "decoder.final_ln", config.d_model),
      out_proj_(store, "decoder.out", config.d_model, vocab_size, nn::Init::Normal002) {
  cfg_.validate();
  if (vocab_size < 5) throw std::invalid_argument("decoder: vocabulary too small");
  layers_.reserve(static_cast<std::size_t>(config.layers));
  for (int i = 0; i < config.layers; ++i)
    layers_.emplace_back(store, "decoder.layer" + std::to_string(i), config.d_model,
                         config.heads, config.ffn_dim);
}

Var ReportDecoder::forward(const Var& region_reps, const std::vector<int>& input_ids,
                           const CmcModule* cmc, DecoderTrace* trace,
                           Rng* dropout_rng) const {
  if (input_ids.empty()) throw std::invalid_argument("decoder: empty input sequence");
  if (static_cast<int>(input_ids.size()) > cfg_.max_len)
    throw std::invalid_argument("decoder: target longer than max_len");
  Var x = ad::scale(ad::embedding_lookup(token_embedding_, input_ids),
                    std::sqrt(static_cast<double>(cfg_.d_model)));
  x = ad::add(x, ad::constant(nn::sinusoidal_encoding(
                     static_cast<Eigen::Index>(input_ids.size()), cfg_.d_model)));
  if (cmc) x = cmc->textual_pass(x);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    x = layers_[i].forward(x, region_reps,
                           (trace && i == 0) ? &trace->cross_attention : nullptr,
                           cfg_.dropout, dropout_rng);
  return out_proj_.forward(final_ln_.forward(x));
}

std::vector<int> ReportDecoder::unpadded_checked(const TokenSequence& target) const {
  std::size_t m = target.unpadded_length();
  if (m < 2) throw std::invalid_argument("decoder: target has no predictable positions");
  std::vector<int> full(target.ids.begin(), target.ids.begin() + static_cast<long>(m));
  if (full.front() != Specials::kBos)
    throw std::invalid_argument("decoder: target must begin with BOS");
  for (int id : full)
    if (id < 0 || id >= vocab_size_)
      throw std::invalid_argument("decoder: target id outside vocabulary");
  if (static_cast<int>(m) > cfg_.max_len)
    throw std::invalid_argument("decoder: target longer than max_len");
  return full;
}

Var ReportDecoder::teacher_forcing_logits(const Var& region_reps, const TokenSequence& target,
                                          const CmcModule* cmc, Rng* dropout_rng) const {
  std::vector<int> full = unpadded_checked(target);
  std::vector<int> input(full.begin(), full.end() - 1);
  return forward(region_reps, input, cmc, nullptr, dropout_rng);
}

double ReportDecoder::log_prob_of_sequence(const Var& region_reps, const TokenSequence& seq,
                                           const CmcModule* cmc) const {
  ad::NoGradGuard no_grad;
  std::vector<int> full = unpadded_checked(seq);
  std::vector<int> input(full.begin(), full.end() - 1);
  Var logits = forward(region_reps, input, cmc);
  Var log_probs = ad::log_softmax_rows(logits);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < full.size(); ++i)
    total += log_probs->value(static_cast<Eigen::Index>(i), full[i + 1]);
  return total;
}

GenerationOutput ReportDecoder::greedy_generate(const Var& region_reps, int max_len,
                                                const CmcModule* cmc) const {
  ad::NoGradGuard no_grad;
  if (max_len < 2) throw std::invalid_argument("greedy_generate: max_len must be >= 2");
  GenerationOutput out;
  std::vector<int> seq{Specials::kBos};
  while (static_cast<int>(seq.size()) < max_len) {
    Var logits = forward(region_reps, seq, cmc);
    Var log_probs = ad::log_softmax_rows(logits);
    Eigen::Index last = log_probs->rows() - 1;
    int best = 0;
    double best_lp = log_probs->value(last, 0);
    for (int v = 1; v < vocab_size_; ++v) {
      double lp = log_probs->value(last, v);
      if (lp > best_lp) {
        best_lp = lp;
        best = v;
      }
    }
    seq.push_back(best);
    out.log_prob += best_lp;
    if (best == Specials::kEos) {
      out.finished = true;
      break;
    }
  }
  out.token_ids.ids = std::move(seq);
  return out;
}

namespace {

// score desc, then lexicographically smaller id sequence (which also puts an
// earlier finish first, since a prefix compares less than its extensions).
bool beam_less(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return std::lexicographical_compare(a.ids.begin(), a.ids.end(), b.ids.begin(), b.ids.end());
}

}  // namespace

GenerationOutput ReportDecoder::beam_search_generate(const Var& region_reps, int beam_size,
                                                     int max_len, const CmcModule* cmc) const {
  ad::NoGradGuard no_grad;
  if (beam_size < 1) throw std::invalid_argument("beam_search_generate: beam_size must be >= 1");
  if (max_len < 2) throw std::invalid_argument("beam_search_generate: max_len must be >= 2");

  std::vector<BeamHypothesis> live{{{Specials::kBos}, 0.0, false}};
  std::vector<BeamHypothesis> finished;

  while (!live.empty() && static_cast<int>(live.front().ids.size()) < max_len) {
    std::vector<BeamHypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(vocab_size_));
    for (const auto& hyp : live) {
      Var logits = forward(region_reps, hyp.ids, cmc);
      Var log_probs = ad::log_softmax_rows(logits);
      Eigen::Index last = log_probs->rows() - 1;
      for (int v = 0; v < vocab_size_; ++v) {
        BeamHypothesis ext;
        ext.ids = hyp.ids;
        ext.ids.push_back(v);
        ext.log_prob = hyp.log_prob + log_probs->value(last, v);
        ext.finished = (v == Specials::kEos);
        candidates.push_back(std::move(ext));
      }
    }
    std::sort(candidates.begin(), candidates.end(), beam_less);
    if (static_cast<int>(candidates.size()) > beam_size)
      candidates.resize(static_cast<std::size_t>(beam_size));
    live.clear();
    for (auto& c : candidates) {
      if (c.finished)
        finished.push_back(std::move(c));
      else
        live.push_back(std::move(c));
    }
  }

  const BeamHypothesis* best = nullptr;
  for (const auto& h : finished)
    if (!best || beam_less(h, *best)) best = &h;
  if (!best)
    for (const auto& h : live)
      if (!best || beam_less(h, *best)) best = &h;
  if (!best) throw std::logic_error("beam_search_generate: no hypotheses");

  GenerationOutput out;
  out.token_ids.ids = best->ids;
  out.log_prob = best->log_prob;
  out.finished = best->finished;
  return out;
}

}  // namespace histgen
