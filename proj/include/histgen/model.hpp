#pragma once

#include <memory>
#include <string>

#include "histgen/cmc.hpp"
#include "histgen/config.hpp"
#include "histgen/decoder.hpp"
#include "histgen/lgh.hpp"
#include "histgen/tokenizer.hpp"

namespace histgen {

// The three ablation arms share parameter names (and therefore initial
// values under one seed): Base is projection + mean pooling + decoder, +CMC
// adds the zero-gated context module, +CMC+LGH swaps mean pooling for the
// hierarchical encoder.
class HistGenModel {
 public:
  HistGenModel(const RunConfig& config, int vocab_size);

  HistGenModel(const HistGenModel&) = delete;
  HistGenModel& operator=(const HistGenModel&) = delete;

  ModelArm arm() const { return arm_; }
  const RunConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  const LghEncoder* lgh() const { return lgh_.get(); }
  const CmcModule* cmc() const { return cmc_.get(); }
  const ReportDecoder& decoder() const { return *decoder_; }

  struct VisualTrace {
    LghTrace lgh;
    CmcTrace cmc;
  };

  // Region representations for the decoder: ceil(n/S) x d for the LGH arm,
  // one pseudo-region for Base/+CMC.
  ad::Var encode_visual(const Eigen::MatrixXf& features, VisualTrace* trace = nullptr,
                        Rng* dropout_rng = nullptr) const;

  ad::Var teacher_forcing_logits(const Eigen::MatrixXf& features, const TokenSequence& target,
                                 Rng* dropout_rng = nullptr) const;

  GenerationOutput generate(const Eigen::MatrixXf& features, int beam_size, int max_len) const;

 private:
  RunConfig cfg_;
  ModelArm arm_;
  nn::ParamStore store_;
  std::unique_ptr<LghEncoder> lgh_;        // CmcLgh arm only
  nn::Linear input_proj_;                  // Base / Cmc arms
  std::unique_ptr<CmcModule> cmc_;         // Cmc / CmcLgh arms
  std::unique_ptr<ReportDecoder> decoder_;
};

struct Checkpoint {
  RunConfig config;
  Vocabulary vocab;
  int epoch = 0;
  double best_metric = 0.0;
  std::shared_ptr<HistGenModel> model;
};

// Single binary archive: config JSON, vocabulary JSON, epoch/metric, then
// named float64 parameter blocks. Round-trips forward outputs bit-exactly.
void save_checkpoint(const std::string& path, const HistGenModel& model,
                     const Vocabulary& vocab, int epoch, double best_metric);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace histgen
