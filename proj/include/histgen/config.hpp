#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace histgen {

enum class ModelArm { Base, Cmc, CmcLgh };

std::string arm_name(ModelArm arm);
ModelArm arm_from_name(const std::string& name);

struct EncoderConfig {
  int region_size = 96;
  int d_model = 512;
  int d_in = 1024;
  int local_layers = 1;
  int global_layers = 1;
  int heads = 8;
  int ffn_dim = 2048;
  int pool_hidden = 256;
  bool use_positional_encoding = true;
  double dropout = 0.0;

  void validate() const;
};

struct CmcConfig {
  int memory_slots = 2048;  // m in the 512 x 2048 memory
  int prototypes = 64;
  int heads = 8;

  void validate() const;
};

struct DecoderConfig {
  int layers = 3;
  int heads = 8;
  int d_model = 512;
  int ffn_dim = 2048;
  int max_len = 100;
  int beam_size = 3;
  double dropout = 0.0;

  void validate() const;
};

struct TrainConfig {
  std::string arm = "cmc_lgh";
  double learning_rate = 1e-4;
  double epoch_decay = 0.8;
  int epochs = 50;
  int batch_size = 1;
  double label_smoothing = 0.0;
  double weight_decay = 0.0;
  double clip_norm = 5.0;
  double early_stop_train_loss = 0.0;  // 0 disables
  int val_every = 1;                   // validate every k-th epoch

  void validate() const;
};

struct FinetuneConfig {
  bool freeze_encoder = false;
  double learning_rate = 1e-4;
  int epochs = 20;
  int monte_carlo_folds = 5;
  int survival_bins = 4;

  void validate() const;
};

struct DataConfig {
  int d_in = 1024;
  int max_len = 100;
  int min_freq = 3;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
};

struct SynthConfig {
  int num_wsis = 20;
  int themes = 4;
  int d_in = 1024;
  int n_min = 24;
  int n_max = 64;
  double noise_scale = 0.25;
  int max_themes_per_wsi = 3;
};

// Full run configuration; defaults mirror the published model settings
// (region 96, 3-layer/8-head/512-dim decoder, 512x2048 memory, beam 3,
// lr 1e-4 with 0.8 per-epoch decay).
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  EncoderConfig encoder;
  CmcConfig cmc;
  DecoderConfig decoder;
  TrainConfig train;
  FinetuneConfig finetune;
  SynthConfig synth;

  void validate() const;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);  // rejects unknown keys
  static RunConfig from_file(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace histgen
