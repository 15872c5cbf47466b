#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "histgen/drivers.hpp"

namespace {

histgen::RunConfig load_config(const std::string& path, std::uint64_t* seed_override) {
  histgen::RunConfig config =
      path.empty() ? histgen::RunConfig{} : histgen::RunConfig::from_file(path);
  if (seed_override) config.seed = *seed_override;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HistGen: hierarchical WSI report generation, ablations and transfer heads"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "Run configuration JSON (defaults when omitted)");
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--seed", seed, "Override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic feature/report corpus");
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a report-generation model");
  std::string train_manifest, train_out, train_arm;
  train->add_option("--manifest", train_manifest, "Dataset manifest JSON")->required();
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--arm", train_arm, "Model arm: base | cmc | cmc_lgh");

  // generate
  auto* generate = app.add_subcommand("generate", "Decode reports with beam search");
  std::string gen_ckpt, gen_manifest, gen_split = "test", gen_out, gen_attention;
  int gen_beam = 0;
  generate->add_option("--checkpoint", gen_ckpt, "Checkpoint file")->required();
  generate->add_option("--manifest", gen_manifest, "Dataset manifest JSON")->required();
  generate->add_option("--split", gen_split, "Split: train | val | test | all");
  generate->add_option("--out", gen_out, "Output generations JSON")->required();
  generate->add_option("--beam", gen_beam, "Beam size override (default: checkpoint config)");
  generate->add_option("--attention-out", gen_attention,
                       "Also export pooling/prototype attention weights as JSON");

  // eval-nlg
  auto* eval = app.add_subcommand("eval-nlg", "Score generations against references");
  std::string eval_gen, eval_refs, eval_out;
  eval->add_option("--generations", eval_gen, "Generations JSON")->required();
  eval->add_option("--references", eval_refs, "Reference corpus JSON (wsi -> text)")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run the Base / +CMC / +CMC+LGH ablation");
  std::string ab_manifest, ab_out;
  bool region_sweep = false;
  ablate->add_option("--manifest", ab_manifest, "Dataset manifest JSON")->required();
  ablate->add_option("--out", ab_out, "Output directory")->required();
  ablate->add_flag("--region-sweep", region_sweep,
                   "Sweep region sizes {64,96,128,256,384,512} instead");

  // finetune-cls / finetune-surv
  auto* ft_cls = app.add_subcommand("finetune-cls", "Fine-tune for subtyping (accuracy/AUC)");
  auto* ft_surv = app.add_subcommand("finetune-surv", "Fine-tune for survival (c-index)");
  std::string ft_ckpt, ft_manifest, ft_out;
  bool ft_scratch = false, ft_with_scratch = false;
  for (auto* cmd : {ft_cls, ft_surv}) {
    cmd->add_option("--checkpoint", ft_ckpt, "Pre-trained checkpoint (omit for scratch)");
    cmd->add_option("--manifest", ft_manifest, "Labeled manifest JSON")->required();
    cmd->add_option("--out", ft_out, "Output directory")->required();
    cmd->add_flag("--scratch", ft_scratch, "Ignore checkpoint weights");
    cmd->add_flag("--with-scratch", ft_with_scratch, "Also run the from-scratch control row");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    histgen::RunConfig config = load_config(config_path, seed_set ? &seed : nullptr);
    if (synth->parsed()) {
      std::string manifest = histgen::drivers::run_synth(config, synth_out);
      std::printf("wrote %s\n", manifest.c_str());
    } else if (train->parsed()) {
      if (!train_arm.empty()) config.train.arm = train_arm;
      config.validate();
      auto outs = histgen::drivers::run_train(config, train_manifest, train_out);
      std::printf("checkpoint %s (best epoch %d)\n", outs.checkpoint_path.c_str(),
                  outs.result.best_epoch);
    } else if (generate->parsed()) {
      std::string out = histgen::drivers::run_generate(gen_ckpt, gen_manifest, gen_split,
                                                       gen_out, gen_beam, gen_attention);
      std::printf("wrote %s\n", out.c_str());
    } else if (eval->parsed()) {
      auto score = histgen::drivers::run_eval_nlg(eval_gen, eval_refs, eval_out);
      std::printf("BLEU-4 %.6f ROUGE-L %.6f\n", score.bleu[3], score.rouge_l);
    } else if (ablate->parsed()) {
      std::string path = region_sweep
                             ? histgen::drivers::run_region_sweep(config, ab_manifest, ab_out)
                             : histgen::drivers::run_ablate(config, ab_manifest, ab_out);
      std::printf("wrote %s\n", path.c_str());
    } else if (ft_cls->parsed() || ft_surv->parsed()) {
      std::string ckpt = ft_scratch ? std::string{} : ft_ckpt;
      std::string path = histgen::drivers::run_finetune(config, ckpt, ft_manifest, ft_out,
                                                        ft_surv->parsed(), ft_with_scratch);
      std::printf("wrote %s\n", path.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
