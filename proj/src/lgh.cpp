#include "histgen/lgh.hpp"

#include <stdexcept>

namespace histgen {

using ad::Matrix;
using ad::Var;

LghEncoder::LghEncoder(nn::ParamStore& store, const EncoderConfig& config)
    : cfg_(config),
      input_proj_(store, "encoder.proj", config.d_in, config.d_model),
      region_token_(store.create("encoder.region_token", 1, config.d_model,
                                 nn::Init::Normal002)),
      local_(store, "encoder.el", config.local_layers, config.d_model, config.heads,
             config.ffn_dim),
      global_(store, "encoder.eg", config.global_layers, config.d_model, config.heads,
              config.ffn_dim),
      pool_(store, "encoder.pool", config.d_model, config.pool_hidden) {
  cfg_.validate();
}

Var LghEncoder::project(const Eigen::MatrixXf& features) const {
  if (features.rows() < 1) throw std::invalid_argument("encoder: empty bag (n = 0)");
  if (features.cols() != cfg_.d_in)
    throw std::invalid_argument("encoder: bag dimension " + std::to_string(features.cols()) +
                                " does not match configured d_in " + std::to_string(cfg_.d_in));
  return input_proj_.forward(ad::constant(features.cast<double>()));
}

RegionPartition LghEncoder::partition_regions(const Var& projected) const {
  const Eigen::Index n = projected->rows();
  if (n < 1) throw std::invalid_argument("partition_regions: empty input");
  const int s = cfg_.region_size;
  const int n_regions = static_cast<int>((n + s - 1) / s);

  Matrix pe;
  if (cfg_.use_positional_encoding) pe = nn::sinusoidal_encoding(s + 1, cfg_.d_model);

  RegionPartition part;
  part.n_patches = n;
  part.region_size = s;
  for (int r = 0; r < n_regions; ++r) {
    Eigen::Index start = static_cast<Eigen::Index>(r) * s;
    Eigen::Index real = std::min<Eigen::Index>(s, n - start);
    std::vector<Var> pieces;
    pieces.push_back(ad::rows(projected, start, real));
    if (real < s)
      pieces.push_back(ad::constant(Matrix::Zero(s - real, cfg_.d_model)));
    pieces.push_back(region_token_);
    Var region = ad::concat_rows(pieces);
    if (cfg_.use_positional_encoding) region = ad::add(region, ad::constant(pe));
    part.regions.push_back(std::move(region));

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(s + 1), 0);
    for (Eigen::Index i = 0; i < real; ++i) mask[static_cast<std::size_t>(i)] = 1;
    mask[static_cast<std::size_t>(s)] = 1;  // region token is never masked
    part.masks.push_back(std::move(mask));
  }
  return part;
}

RegionPartition LghEncoder::encode_local(const RegionPartition& part,
                                         std::vector<nn::AttentionProbe>* probes,
                                         Rng* dropout_rng) const {
  RegionPartition out = part;
  if (probes) probes->resize(part.regions.size());
  for (std::size_t r = 0; r < part.regions.size(); ++r) {
    std::vector<nn::AttentionProbe> layer_probes;
    out.regions[r] = local_.forward(part.regions[r], &part.masks[r],
                                    probes ? &layer_probes : nullptr, cfg_.dropout,
                                    dropout_rng);
    if (probes && !layer_probes.empty()) (*probes)[r] = layer_probes.front();
  }
  return out;
}

Var LghEncoder::gather_region_tokens(const RegionPartition& part) const {
  std::vector<Var> tokens;
  tokens.reserve(part.regions.size());
  for (const auto& region : part.regions)
    tokens.push_back(ad::rows(region, cfg_.region_size, 1));
  return ad::concat_rows(tokens);
}

Var LghEncoder::encode_global(const Var& tokens, std::vector<nn::AttentionProbe>* probes,
                              Rng* dropout_rng) const {
  if (tokens->rows() < 1) throw std::invalid_argument("encode_global: no region tokens");
  Var h = tokens;
  if (cfg_.use_positional_encoding)
    h = ad::add(h, ad::constant(nn::sinusoidal_encoding(tokens->rows(), cfg_.d_model)));
  return global_.forward(h, nullptr, probes, cfg_.dropout, dropout_rng);
}

RegionPartition LghEncoder::scatter_region_tokens(const RegionPartition& part,
                                                  const Var& tokens) const {
  if (tokens->rows() != static_cast<Eigen::Index>(part.regions.size()))
    throw std::invalid_argument("scatter_region_tokens: token count mismatch");
  RegionPartition out = part;
  for (std::size_t r = 0; r < part.regions.size(); ++r) {
    Var patches = ad::rows(part.regions[r], 0, cfg_.region_size);
    Var token = ad::rows(tokens, static_cast<Eigen::Index>(r), 1);
    out.regions[r] = ad::concat_rows({patches, token});
  }
  return out;
}

Var LghEncoder::attentive_pool(const Var& region, const std::vector<std::uint8_t>& mask,
                               Var* weights_out) const {
  return pool_.forward(region, &mask, weights_out);
}

Var LghEncoder::forward(const Eigen::MatrixXf& features, LghTrace* trace,
                        Rng* dropout_rng) const {
  Var projected = project(features);
  RegionPartition part = partition_regions(projected);
  part = encode_local(part, nullptr, dropout_rng);
  Var tokens = gather_region_tokens(part);
  tokens = encode_global(tokens, trace ? &trace->global_attention : nullptr, dropout_rng);
  part = scatter_region_tokens(part, tokens);
  part = encode_local(part, trace ? &trace->local_attention : nullptr, dropout_rng);

  std::vector<Var> pooled;
  pooled.reserve(part.regions.size());
  for (std::size_t r = 0; r < part.regions.size(); ++r) {
    Var weights;
    pooled.push_back(attentive_pool(part.regions[r], part.masks[r],
                                    trace ? &weights : nullptr));
    if (trace) trace->pool_weights.push_back(weights->value.row(0));
  }
  return ad::concat_rows(pooled);
}

}  // namespace histgen
