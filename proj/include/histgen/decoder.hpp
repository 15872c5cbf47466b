#pragma once

#include <optional>
#include <vector>

#include "histgen/cmc.hpp"
#include "histgen/config.hpp"
#include "histgen/nn.hpp"
#include "histgen/tokenizer.hpp"

namespace histgen {

struct GenerationOutput {
  TokenSequence token_ids;  // BOS ... (EOS if finished), no padding
  double log_prob = 0.0;    // sum of token log-probabilities
  bool finished = false;
};

struct BeamHypothesis {
  std::vector<int> ids;
  double log_prob = 0.0;
  bool finished = false;
};

struct DecoderTrace {
  nn::AttentionProbe cross_attention;  // first layer, target positions x regions
};

struct DecoderLayer {
  nn::MultiHeadAttention self_attn;
  nn::MultiHeadAttention cross_attn;
  nn::FeedForward ffn;
  nn::LayerNorm ln1, ln2, ln3;

  DecoderLayer() = default;
  DecoderLayer(nn::ParamStore& store, const std::string& prefix, Eigen::Index d_model,
               int heads, Eigen::Index d_ff);
  ad::Var forward(const ad::Var& x, const ad::Var& memory, nn::AttentionProbe* cross_probe,
                  double dropout_p, Rng* dropout_rng) const;
};

// Autoregressive transformer decoder over region representations. When a CMC
// module is attached, token embeddings take the textual memory pass before
// the layer stack (positionwise, so causality is preserved).
class ReportDecoder {
 public:
  ReportDecoder(nn::ParamStore& store, const DecoderConfig& config, int vocab_size);

  const DecoderConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }

  // input_ids are the shifted target (BOS first, no trailing EOS); row i of
  // the result is the next-token distribution after input_ids[0..i].
  ad::Var forward(const ad::Var& region_reps, const std::vector<int>& input_ids,
                  const CmcModule* cmc = nullptr, DecoderTrace* trace = nullptr,
                  Rng* dropout_rng = nullptr) const;

  // Full teacher forcing for a padded target sequence [BOS, y1..yT, EOS, PAD*];
  // logits row i predicts target position i+1.
  ad::Var teacher_forcing_logits(const ad::Var& region_reps, const TokenSequence& target,
                                 const CmcModule* cmc = nullptr,
                                 Rng* dropout_rng = nullptr) const;

  double log_prob_of_sequence(const ad::Var& region_reps, const TokenSequence& seq,
                              const CmcModule* cmc = nullptr) const;

  GenerationOutput greedy_generate(const ad::Var& region_reps, int max_len,
                                   const CmcModule* cmc = nullptr) const;
  GenerationOutput beam_search_generate(const ad::Var& region_reps, int beam_size, int max_len,
                                        const CmcModule* cmc = nullptr) const;

 private:
  // Strips padding; returns [BOS, y1.., EOS] and validates framing.
  std::vector<int> unpadded_checked(const TokenSequence& target) const;

  DecoderConfig cfg_;
  int vocab_size_ = 0;
  ad::Var token_embedding_;  // vocab x d
  std::vector<DecoderLayer> layers_;
  nn::LayerNorm final_ln_;
  nn::Linear out_proj_;
};

}  // namespace histgen
