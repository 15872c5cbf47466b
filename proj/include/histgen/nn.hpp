#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "histgen/autodiff.hpp"

namespace histgen::nn {

using ad::Matrix;
using ad::Var;

enum class Init { Zeros, Ones, XavierUniform, Normal002 };

// Owns all trainable parameters of a model, keyed by hierarchical name.
// Initial values depend only on (seed, name, shape), never on creation
// order, so two models that share a submodule start from identical values.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Var create(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  const std::map<std::string, Var>& all() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  void zero_grads();
  std::size_t total_size() const;

  std::map<std::string, Matrix> snapshot() const;
  void restore(const std::map<std::string, Matrix>& values);
  // Restores only the parameters present in `values` (pretrained weights
  // loaded into a model that carries extra task heads).
  void restore_present(const std::map<std::string, Matrix>& values);

 private:
  std::uint64_t seed_;
  std::map<std::string, Var> params_;
};

struct Linear {
  Var w;  // in x out
  Var b;  // 1 x out

  Linear() = default;
  Linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
         Init weight_init = Init::XavierUniform);
  Var forward(const Var& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }
};

struct LayerNorm {
  Var gamma;
  Var beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& prefix, Eigen::Index d);
  Var forward(const Var& x) const { return ad::layer_norm_rows(x, gamma, beta); }
};

// Sinusoidal positional encoding table; entries in [-1, 1].
Matrix sinusoidal_encoding(Eigen::Index length, Eigen::Index d_model);

struct AttentionProbe {
  Matrix mean_weights;  // heads averaged, queries x keys
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  Eigen::Index d_model = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& prefix, Eigen::Index d_model,
                     int heads);

  // query: q x d, kv: k x d. key_mask (size k): 1 = attend. When
  // `attn_mean_out` is non-null the head-averaged attention matrix is
  // returned as a graph node (differentiable).
  Var forward(const Var& query, const Var& kv,
              const std::vector<std::uint8_t>* key_mask = nullptr, bool causal = false,
              Var* attn_mean_out = nullptr, AttentionProbe* probe = nullptr) const;
};

struct FeedForward {
  Linear in, out;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& prefix, Eigen::Index d_model,
              Eigen::Index d_ff);
  Var forward(const Var& x) const { return out.forward(ad::relu(in.forward(x))); }
};

// Pre-norm transformer encoder layer: x += MHA(LN(x)); x += FFN(LN(x)).
struct EncoderLayer {
  MultiHeadAttention attn;
  FeedForward ffn;
  LayerNorm ln1, ln2;

  EncoderLayer() = default;
  EncoderLayer(ParamStore& store, const std::string& prefix, Eigen::Index d_model, int heads,
               Eigen::Index d_ff);
  Var forward(const Var& x, const std::vector<std::uint8_t>* key_mask = nullptr,
              AttentionProbe* probe = nullptr, double dropout_p = 0.0,
              Rng* dropout_rng = nullptr) const;
};

// A zero-layer stack is the identity map.
struct EncoderStack {
  std::vector<EncoderLayer> layers;

  EncoderStack() = default;
  EncoderStack(ParamStore& store, const std::string& prefix, int n_layers, Eigen::Index d_model,
               int heads, Eigen::Index d_ff);
  Var forward(const Var& x, const std::vector<std::uint8_t>* key_mask = nullptr,
              std::vector<AttentionProbe>* probes = nullptr, double dropout_p = 0.0,
              Rng* dropout_rng = nullptr) const;
};

// ABMIL-style gated attention pooling: score_j = w . (tanh(h_j V) * sigm(h_j U)),
// masked softmax over slots, output = weighted sum.
struct GatedAttentionPool {
  Linear gate_v, gate_u;
  Var score_w;  // hidden x 1
  Var score_b;  // 1 x 1

  GatedAttentionPool() = default;
  GatedAttentionPool(ParamStore& store, const std::string& prefix, Eigen::Index d_model,
                     Eigen::Index hidden);

  // x: slots x d. Returns 1 x d; weights_out receives the 1 x slots weights.
  Var forward(const Var& x, const std::vector<std::uint8_t>* slot_mask = nullptr,
              Var* weights_out = nullptr) const;
};

}  // namespace histgen::nn
