#include "histgen/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace histgen {

using json = nlohmann::json;

std::string arm_name(ModelArm arm) {
  switch (arm) {
    case ModelArm::Base: return "base";
    case ModelArm::Cmc: return "cmc";
    case ModelArm::CmcLgh: return "cmc_lgh";
  }
  throw std::logic_error("arm_name: bad arm");
}

ModelArm arm_from_name(const std::string& name) {
  if (name == "base") return ModelArm::Base;
  if (name == "cmc" || name == "+cmc") return ModelArm::Cmc;
  if (name == "cmc_lgh" || name == "+cmc+lgh") return ModelArm::CmcLgh;
  throw std::runtime_error("unknown model arm '" + name + "' (expected base|cmc|cmc_lgh)");
}

void EncoderConfig::validate() const {
  if (region_size < 1) throw std::invalid_argument("encoder.region_size must be >= 1");
  if (d_model < 1 || d_in < 1) throw std::invalid_argument("encoder dimensions must be >= 1");
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("encoder.d_model must be divisible by heads");
  if (local_layers < 0 || global_layers < 0)
    throw std::invalid_argument("encoder layer counts must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("encoder.dropout must be in [0, 1)");
  if (ffn_dim < 1 || pool_hidden < 1)
    throw std::invalid_argument("encoder.ffn_dim and pool_hidden must be >= 1");
}

void CmcConfig::validate() const {
  if (memory_slots < 1) throw std::invalid_argument("cmc.memory_slots must be >= 1");
  if (prototypes < 1) throw std::invalid_argument("cmc.prototypes must be >= 1");
  if (heads < 1) throw std::invalid_argument("cmc.heads must be >= 1");
}

void DecoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("decoder.layers must be >= 1");
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("decoder.d_model must be divisible by heads");
  if (max_len < 3) throw std::invalid_argument("decoder.max_len must be >= 3");
  if (beam_size < 1) throw std::invalid_argument("decoder.beam_size must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("decoder.dropout must be in [0, 1)");
}

void TrainConfig::validate() const {
  arm_from_name(arm);
  if (learning_rate <= 0.0) throw std::invalid_argument("train.learning_rate must be > 0");
  if (epoch_decay <= 0.0 || epoch_decay > 1.0)
    throw std::invalid_argument("train.epoch_decay must be in (0, 1]");
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw std::invalid_argument("train.label_smoothing must be in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (val_every < 1) throw std::invalid_argument("train.val_every must be >= 1");
}

void FinetuneConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("finetune.learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("finetune.epochs must be >= 1");
  if (monte_carlo_folds < 1) throw std::invalid_argument("finetune.monte_carlo_folds must be >= 1");
  if (survival_bins < 2) throw std::invalid_argument("finetune.survival_bins must be >= 2");
}

void RunConfig::validate() const {
  encoder.validate();
  cmc.validate();
  decoder.validate();
  train.validate();
  finetune.validate();
  if (encoder.d_model != decoder.d_model)
    throw std::invalid_argument("encoder.d_model and decoder.d_model must match");
  double s = data.split[0] + data.split[1] + data.split[2];
  if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("data.split must sum to 1");
  if (data.max_len < 3) throw std::invalid_argument("data.max_len must be >= 3");
  if (data.min_freq < 1) throw std::invalid_argument("data.min_freq must be >= 1");
}

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::runtime_error("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw std::runtime_error("config: unknown key '" + where + "." + key + "'");
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["data"] = {{"d_in", data.d_in},
               {"max_len", data.max_len},
               {"min_freq", data.min_freq},
               {"split", data.split}};
  j["encoder"] = {{"region_size", encoder.region_size},
                  {"d_model", encoder.d_model},
                  {"d_in", encoder.d_in},
                  {"local_layers", encoder.local_layers},
                  {"global_layers", encoder.global_layers},
                  {"heads", encoder.heads},
                  {"ffn_dim", encoder.ffn_dim},
                  {"pool_hidden", encoder.pool_hidden},
                  {"use_positional_encoding", encoder.use_positional_encoding},
                  {"dropout", encoder.dropout}};
  j["cmc"] = {{"memory_slots", cmc.memory_slots},
              {"prototypes", cmc.prototypes},
              {"heads", cmc.heads}};
  j["decoder"] = {{"layers", decoder.layers},
                  {"heads", decoder.heads},
                  {"d_model", decoder.d_model},
                  {"ffn_dim", decoder.ffn_dim},
                  {"max_len", decoder.max_len},
                  {"beam_size", decoder.beam_size},
                  {"dropout", decoder.dropout}};
  j["train"] = {{"arm", train.arm},
                {"learning_rate", train.learning_rate},
                {"epoch_decay", train.epoch_decay},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"label_smoothing", train.label_smoothing},
                {"weight_decay", train.weight_decay},
                {"clip_norm", train.clip_norm},
                {"early_stop_train_loss", train.early_stop_train_loss},
                {"val_every", train.val_every}};
  j["finetune"] = {{"freeze_encoder", finetune.freeze_encoder},
                   {"learning_rate", finetune.learning_rate},
                   {"epochs", finetune.epochs},
                   {"monte_carlo_folds", finetune.monte_carlo_folds},
                   {"survival_bins", finetune.survival_bins}};
  j["synth"] = {{"num_wsis", synth.num_wsis},
                {"themes", synth.themes},
                {"d_in", synth.d_in},
                {"n_min", synth.n_min},
                {"n_max", synth.n_max},
                {"noise_scale", synth.noise_scale},
                {"max_themes_per_wsi", synth.max_themes_per_wsi}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "data", "encoder", "cmc", "decoder", "train", "finetune", "synth"});
  RunConfig c;
  maybe(j, "seed", c.seed);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"d_in", "max_len", "min_freq", "split"});
    maybe(d, "d_in", c.data.d_in);
    maybe(d, "max_len", c.data.max_len);
    maybe(d, "min_freq", c.data.min_freq);
    maybe(d, "split", c.data.split);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    check_keys(e, "encoder",
               {"region_size", "d_model", "d_in", "local_layers", "global_layers", "heads",
                "ffn_dim", "pool_hidden", "use_positional_encoding", "dropout"});
    maybe(e, "region_size", c.encoder.region_size);
    maybe(e, "d_model", c.encoder.d_model);
    maybe(e, "d_in", c.encoder.d_in);
    maybe(e, "local_layers", c.encoder.local_layers);
    maybe(e, "global_layers", c.encoder.global_layers);
    maybe(e, "heads", c.encoder.heads);
    maybe(e, "ffn_dim", c.encoder.ffn_dim);
    maybe(e, "pool_hidden", c.encoder.pool_hidden);
    maybe(e, "use_positional_encoding", c.encoder.use_positional_encoding);
    maybe(e, "dropout", c.encoder.dropout);
  }
  if (j.contains("cmc")) {
    const auto& m = j.at("cmc");
    check_keys(m, "cmc", {"memory_slots", "prototypes", "heads"});
    maybe(m, "memory_slots", c.cmc.memory_slots);
    maybe(m, "prototypes", c.cmc.prototypes);
    maybe(m, "heads", c.cmc.heads);
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    check_keys(d, "decoder",
               {"layers", "heads", "d_model", "ffn_dim", "max_len", "beam_size", "dropout"});
    maybe(d, "layers", c.decoder.layers);
    maybe(d, "heads", c.decoder.heads);
    maybe(d, "d_model", c.decoder.d_model);
    maybe(d, "ffn_dim", c.decoder.ffn_dim);
    maybe(d, "max_len", c.decoder.max_len);
    maybe(d, "beam_size", c.decoder.beam_size);
    maybe(d, "dropout", c.decoder.dropout);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"arm", "learning_rate", "epoch_decay", "epochs", "batch_size",
                "label_smoothing", "weight_decay", "clip_norm", "early_stop_train_loss",
                "val_every"});
    maybe(t, "arm", c.train.arm);
    maybe(t, "learning_rate", c.train.learning_rate);
    maybe(t, "epoch_decay", c.train.epoch_decay);
    maybe(t, "epochs", c.train.epochs);
    maybe(t, "batch_size", c.train.batch_size);
    maybe(t, "label_smoothing", c.train.label_smoothing);
    maybe(t, "weight_decay", c.train.weight_decay);
    maybe(t, "clip_norm", c.train.clip_norm);
    maybe(t, "early_stop_train_loss", c.train.early_stop_train_loss);
    maybe(t, "val_every", c.train.val_every);
  }
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    check_keys(f, "finetune",
               {"freeze_encoder", "learning_rate", "epochs", "monte_carlo_folds",
                "survival_bins"});
    maybe(f, "freeze_encoder", c.finetune.freeze_encoder);
    maybe(f, "learning_rate", c.finetune.learning_rate);
    maybe(f, "epochs", c.finetune.epochs);
    maybe(f, "monte_carlo_folds", c.finetune.monte_carlo_folds);
    maybe(f, "survival_bins", c.finetune.survival_bins);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_keys(s, "synth",
               {"num_wsis", "themes", "d_in", "n_min", "n_max", "noise_scale",
                "max_themes_per_wsi"});
    maybe(s, "num_wsis", c.synth.num_wsis);
    maybe(s, "themes", c.synth.themes);
    maybe(s, "d_in", c.synth.d_in);
    maybe(s, "n_min", c.synth.n_min);
    maybe(s, "n_max", c.synth.n_max);
    maybe(s, "noise_scale", c.synth.noise_scale);
    maybe(s, "max_themes_per_wsi", c.synth.max_themes_per_wsi);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << to_json() << "\n";
}

}  // namespace histgen
