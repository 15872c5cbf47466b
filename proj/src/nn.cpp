#include "histgen/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace histgen::nn {

Var ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                       Init init) {
  if (params_.count(name))
    throw std::runtime_error("ParamStore: duplicate parameter name '" + name + "'");
  Matrix v(rows, cols);
  Rng rng(seed_for(seed_, name));
  switch (init) {
    case Init::Zeros:
      v.setZero();
      break;
    case Init::Ones:
      v.setOnes();
      break;
    case Init::XavierUniform: {
      double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) v(i, j) = rng.uniform(-bound, bound);
      break;
    }
    case Init::Normal002: {
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) v(i, j) = rng.normal(0.0, 0.02);
      break;
    }
  }
  Var p = ad::parameter(std::move(v));
  params_.emplace(name, p);
  return p;
}

Var ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::runtime_error("ParamStore: no parameter named '" + name + "'");
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params_) p->zero_grad();
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::map<std::string, Matrix> ParamStore::snapshot() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, p] : params_) out.emplace(name, p->value);
  return out;
}

void ParamStore::restore(const std::map<std::string, Matrix>& values) {
  for (auto& [name, p] : params_) {
    auto it = values.find(name);
    if (it == values.end())
      throw std::runtime_error("ParamStore: snapshot missing parameter '" + name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw std::runtime_error("ParamStore: shape mismatch restoring '" + name + "'");
    p->value = it->second;
  }
}

void ParamStore::restore_present(const std::map<std::string, Matrix>& values) {
  for (auto& [name, p] : params_) {
    auto it = values.find(name);
    if (it == values.end()) continue;
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw std::runtime_error("ParamStore: shape mismatch restoring '" + name + "'");
    p->value = it->second;
  }
}

Linear::Linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
               Init weight_init)
    : w(store.create(prefix + ".w", in, out, weight_init)),
      b(store.create(prefix + ".b", 1, out, Init::Zeros)) {}

LayerNorm::LayerNorm(ParamStore& store, const std::string& prefix, Eigen::Index d)
    : gamma(store.create(prefix + ".gamma", 1, d, Init::Ones)),
      beta(store.create(prefix + ".beta", 1, d, Init::Zeros)) {}

Matrix sinusoidal_encoding(Eigen::Index length, Eigen::Index d_model) {
  Matrix pe(length, d_model);
  for (Eigen::Index pos = 0; pos < length; ++pos) {
    for (Eigen::Index i = 0; i < d_model; i += 2) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& prefix,
                                       Eigen::Index d, int n_heads)
    : wq(store, prefix + ".wq", d, d),
      wk(store, prefix + ".wk", d, d),
      wv(store, prefix + ".wv", d, d),
      wo(store, prefix + ".wo", d, d),
      heads(n_heads),
      d_model(d) {
  if (d % n_heads != 0)
    throw std::invalid_argument("MultiHeadAttention: d_model must be divisible by heads");
}

Var MultiHeadAttention::forward(const Var& query, const Var& kv,
                                const std::vector<std::uint8_t>* key_mask, bool causal,
                                Var* attn_mean_out, AttentionProbe* probe) const {
  const Eigen::Index dh = d_model / heads;
  Var q = wq.forward(query);
  Var k = wk.forward(kv);
  Var v = wv.forward(kv);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Var> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  Var attn_sum;
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::cols(q, h * dh, dh);
    Var kh = ad::cols(k, h * dh, dh);
    Var vh = ad::cols(v, h * dh, dh);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    Var weights = ad::softmax_rows(scores, key_mask, causal);
    head_outs.push_back(ad::matmul(weights, vh));
    if (attn_mean_out || probe)
      attn_sum = attn_sum ? ad::add(attn_sum, weights) : weights;
  }
  if (attn_sum) {
    Var mean = ad::scale(attn_sum, 1.0 / static_cast<double>(heads));
    if (attn_mean_out) *attn_mean_out = mean;
    if (probe) probe->mean_weights = mean->value;
  }
  Var concat = heads == 1 ? head_outs[0] : ad::concat_cols(head_outs);
  return wo.forward(concat);
}

FeedForward::FeedForward(ParamStore& store, const std::string& prefix, Eigen::Index d_model,
                         Eigen::Index d_ff)
    : in(store, prefix + ".in", d_model, d_ff), out(store, prefix + ".out", d_ff, d_model) {}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& prefix, Eigen::Index d_model,
                           int heads, Eigen::Index d_ff)
    : attn(store, prefix + ".attn", d_model, heads),
      ffn(store, prefix + ".ffn", d_model, d_ff),
      ln1(store, prefix + ".ln1", d_model),
      ln2(store, prefix + ".ln2", d_model) {}

Var EncoderLayer::forward(const Var& x, const std::vector<std::uint8_t>* key_mask,
                          AttentionProbe* probe, double dropout_p, Rng* dropout_rng) const {
  Var normed = ln1.forward(x);
  Var a = attn.forward(normed, normed, key_mask, false, nullptr, probe);
  if (dropout_p > 0.0 && dropout_rng) a = ad::dropout(a, dropout_p, *dropout_rng);
  Var h = ad::add(x, a);
  Var f = ffn.forward(ln2.forward(h));
  if (dropout_p > 0.0 && dropout_rng) f = ad::dropout(f, dropout_p, *dropout_rng);
  return ad::add(h, f);
}

EncoderStack::EncoderStack(ParamStore& store, const std::string& prefix, int n_layers,
                           Eigen::Index d_model, int heads, Eigen::Index d_ff) {
  layers.reserve(static_cast<std::size_t>(n_layers));
  for (int i = 0; i < n_layers; ++i)
    layers.emplace_back(store, prefix + ".layer" + std::to_string(i), d_model, heads, d_ff);
}

Var EncoderStack::forward(const Var& x, const std::vector<std::uint8_t>* key_mask,
                          std::vector<AttentionProbe>* probes, double dropout_p,
                          Rng* dropout_rng) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    AttentionProbe* probe = nullptr;
    if (probes) {
      probes->resize(layers.size());
      probe = &(*probes)[i];
    }
    h = layers[i].forward(h, key_mask, probe, dropout_p, dropout_rng);
  }
  return h;
}

GatedAttentionPool::GatedAttentionPool(ParamStore& store, const std::string& prefix,
                                       Eigen::Index d_model, Eigen::Index hidden)
    : gate_v(store, prefix + ".v", d_model, hidden),
      gate_u(store, prefix + ".u", d_model, hidden),
      score_w(store.create(prefix + ".w", hidden, 1, Init::XavierUniform)),
      score_b(store.create(prefix + ".wb", 1, 1, Init::Zeros)) {}

Var GatedAttentionPool::forward(const Var& x, const std::vector<std::uint8_t>* slot_mask,
                                Var* weights_out) const {
  Var gated = ad::mul(ad::tanh_op(gate_v.forward(x)), ad::sigmoid(gate_u.forward(x)));
  Var scores = ad::add_rowvec(ad::matmul(gated, score_w), score_b);  // slots x 1
  Var weights = ad::softmax_rows(ad::transpose(scores), slot_mask);  // 1 x slots
  if (weights_out) *weights_out = weights;
  return ad::matmul(weights, x);
}

}  // namespace histgen::nn
