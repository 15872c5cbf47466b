#pragma once

#include <string>
#include <vector>

#include "histgen/config.hpp"
#include "histgen/metrics.hpp"
#include "histgen/model.hpp"
#include "histgen/train.hpp"

namespace histgen::drivers {

// Loads the split's (features, encoded report) pairs; feature paths resolve
// relative to the manifest location.
std::vector<TrainPair> load_pairs(const DatasetManifest& manifest,
                                  const std::string& manifest_dir, Split split,
                                  const Vocabulary& vocab, int max_len);

Vocabulary build_vocab_from_split(const DatasetManifest& manifest, Split split, int min_freq);

// synth: writes features/, reports.json, manifest.json. Returns manifest path.
std::string run_synth(const RunConfig& config, const std::string& out_dir);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string metrics_csv_path;
  TrainResult result;
};

// train: fits the configured arm, writes config.json, metrics.csv and the
// best checkpoint under out_dir.
TrainOutputs run_train(const RunConfig& config, const std::string& manifest_path,
                       const std::string& out_dir);

// generate: decodes the given split with beam search, writes wsi -> {text,
// log_prob} JSON; optionally exports attention weights as JSON.
std::string run_generate(const std::string& checkpoint_path, const std::string& manifest_path,
                         const std::string& split, const std::string& out_path,
                         int beam_override = 0, const std::string& attention_out = "");

// eval-nlg: joins generations with references on wsi_id, writes
// nlg_metrics.csv/.json under out_dir, returns the corpus score.
metrics::NlgScore run_eval_nlg(const std::string& generations_path,
                               const std::string& references_path, const std::string& out_dir);

// ablate: trains Base / +CMC / +CMC+LGH under one seed and emits the
// ablation table with the AVG delta column (relative mean improvement over
// Base across the six metrics), evaluated on the validation split.
std::string run_ablate(const RunConfig& config, const std::string& manifest_path,
                       const std::string& out_dir);

// ablate --region-sweep: the region-size grid on the full arm.
std::string run_region_sweep(const RunConfig& config, const std::string& manifest_path,
                             const std::string& out_dir,
                             const std::vector<int>& region_sizes = {64, 96, 128, 256, 384,
                                                                     512});

// finetune-cls / finetune-surv: Monte Carlo fine-tuning from a checkpoint
// (or fresh weights when checkpoint_path is empty); optionally adds the
// from-scratch control row. Returns the table CSV path.
std::string run_finetune(const RunConfig& config, const std::string& checkpoint_path,
                         const std::string& manifest_path, const std::string& out_dir,
                         bool survival, bool with_scratch);

}  // namespace histgen::drivers
