#pragma once

#include "histgen/config.hpp"
#include "histgen/nn.hpp"

namespace histgen {

struct CmcTrace {
  nn::AttentionProbe prototype_attention;  // prototypes x visual sequence
  nn::AttentionProbe memory_attention;     // queries x memory slots
};

// Cross-modal context module: a shared m x d memory queried from the visual
// side through prototype-compressed features and from the textual side by
// token embeddings directly, responses fused back through zero-initialized
// gated residuals (so an untrained +CMC model is exactly the base model).
class CmcModule {
 public:
  CmcModule(nn::ParamStore& store, const CmcConfig& config, int d_model);

  const CmcConfig& config() const { return cfg_; }
  ad::Var memory() const { return memory_; }
  ad::Var prototypes() const { return prototypes_; }
  ad::Var visual_gate() const { return vis_gate_; }
  ad::Var textual_gate() const { return txt_gate_; }

  // Cross-attention with learnable prototype queries; output has exactly l
  // rows for any input length. attn_out (l x seq) is the head-averaged
  // attention used to broadcast responses back.
  ad::Var select_prototypes(const ad::Var& visual, ad::Var* attn_out = nullptr,
                            nn::AttentionProbe* probe = nullptr) const;

  // Scaled dot-product attention against the memory rows as keys/values.
  ad::Var query_memory(const ad::Var& queries, nn::AttentionProbe* probe = nullptr) const;

  // original + gate * proj(responses); for the visual pathway responses are
  // first broadcast back to the sequence via the transposed prototype
  // attention.
  ad::Var aggregate_visual(const ad::Var& original, const ad::Var& responses,
                           const ad::Var& proto_attn) const;
  ad::Var aggregate_textual(const ad::Var& original, const ad::Var& responses) const;

  ad::Var visual_pass(const ad::Var& x, CmcTrace* trace = nullptr) const;
  ad::Var textual_pass(const ad::Var& y, CmcTrace* trace = nullptr) const;

 private:
  CmcConfig cfg_;
  ad::Var memory_;      // m x d
  ad::Var prototypes_;  // l x d
  nn::MultiHeadAttention proto_attn_;
  nn::MultiHeadAttention memory_attn_;  // shared by both pathways
  nn::Linear vis_proj_;
  nn::Linear txt_proj_;
  ad::Var vis_gate_;  // 1 x d, zero-initialized
  ad::Var txt_gate_;
};

}  // namespace histgen
