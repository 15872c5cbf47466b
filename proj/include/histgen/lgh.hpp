#pragma once

#include <vector>

#include "histgen/config.hpp"
#include "histgen/data.hpp"
#include "histgen/nn.hpp"

namespace histgen {

// The projected bag split into regions of S patches plus one region-token
// slot at index S (0-based); the final region is zero-padded under a mask.
struct RegionPartition {
  std::vector<ad::Var> regions;                   // each (S+1) x d_model
  std::vector<std::vector<std::uint8_t>> masks;   // 1 = real slot; token slot always 1
  Eigen::Index n_patches = 0;
  int region_size = 0;

  int num_regions() const { return static_cast<int>(regions.size()); }
};

struct LghTrace {
  std::vector<Eigen::RowVectorXd> pool_weights;            // per region, 1 x (S+1)
  std::vector<nn::AttentionProbe> local_attention;         // pass-2 E_l, first layer, per region
  std::vector<nn::AttentionProbe> global_attention;        // E_g layers
};

// Local-global hierarchical encoder: region-level self-attention (E_l), a
// WSI-level pass over region tokens (E_g), reinjection, second shared E_l
// pass, and gated attentive pooling per region.
class LghEncoder {
 public:
  LghEncoder(nn::ParamStore& store, const EncoderConfig& config);

  const EncoderConfig& config() const { return cfg_; }

  // Affine d_in -> d_model promotion of the float feature rows.
  ad::Var project(const Eigen::MatrixXf& features) const;

  RegionPartition partition_regions(const ad::Var& projected) const;

  // Both E_l passes share parameters; padded slots are masked out of
  // attention, so their values never reach real slots.
  RegionPartition encode_local(const RegionPartition& part,
                               std::vector<nn::AttentionProbe>* probes = nullptr,
                               Rng* dropout_rng = nullptr) const;

  ad::Var gather_region_tokens(const RegionPartition& part) const;
  ad::Var encode_global(const ad::Var& tokens,
                        std::vector<nn::AttentionProbe>* probes = nullptr,
                        Rng* dropout_rng = nullptr) const;
  RegionPartition scatter_region_tokens(const RegionPartition& part,
                                        const ad::Var& tokens) const;

  ad::Var attentive_pool(const ad::Var& region, const std::vector<std::uint8_t>& mask,
                         ad::Var* weights_out = nullptr) const;

  // projection -> partition (+PE) -> E_l -> gather (+PE) -> E_g -> scatter ->
  // E_l -> pool. Output: ceil(n/S) x d_model.
  ad::Var forward(const Eigen::MatrixXf& features, LghTrace* trace = nullptr,
                  Rng* dropout_rng = nullptr) const;

 private:
  EncoderConfig cfg_;
  nn::Linear input_proj_;
  ad::Var region_token_;  // 1 x d_model, shared across regions
  nn::EncoderStack local_;
  nn::EncoderStack global_;
  nn::GatedAttentionPool pool_;
};

}  // namespace histgen
