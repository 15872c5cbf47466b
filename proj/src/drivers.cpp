#include "histgen/drivers.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "histgen/transfer.hpp"

namespace histgen::drivers {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_pm(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f±%.4f", mean, sd);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << text;
}

std::string nlg_row(const metrics::NlgScore& s) {
  return fmt(s.bleu[0]) + "," + fmt(s.bleu[1]) + "," + fmt(s.bleu[2]) + "," + fmt(s.bleu[3]) +
         "," + fmt(s.meteor) + "," + fmt(s.rouge_l);
}

constexpr const char* kNlgHeader = "BLEU-1,BLEU-2,BLEU-3,BLEU-4,METEOR,ROUGE-L";

metrics::NlgScore eval_split(const HistGenModel& model, const Vocabulary& vocab,
                             const std::vector<TrainPair>& pairs) {
  std::vector<std::string> cands, refs;
  for (const auto& p : pairs) {
    GenerationOutput gen = model.generate(p.features, model.config().decoder.beam_size,
                                          model.config().decoder.max_len);
    cands.push_back(vocab.decode(gen.token_ids));
    refs.push_back(p.reference_text);
  }
  return metrics::evaluate_corpus(cands, refs);
}

}  // namespace

std::vector<TrainPair> load_pairs(const DatasetManifest& manifest,
                                  const std::string& manifest_dir, Split split,
                                  const Vocabulary& vocab, int max_len) {
  std::vector<TrainPair> out;
  for (const ManifestEntry* e : manifest.in_split(split)) {
    fs::path p = fs::path(e->feature_file).is_absolute()
                     ? fs::path(e->feature_file)
                     : fs::path(manifest_dir) / e->feature_file;
    if (tokenize(e->report).empty())
      throw std::runtime_error("empty report for wsi '" + e->wsi_id + "'");
    TrainPair pair;
    pair.wsi_id = e->wsi_id;
    pair.features = load_feature_bag(p.string()).features;
    pair.target = vocab.encode(e->report, max_len);
    pair.reference_text = e->report;
    out.push_back(std::move(pair));
  }
  return out;
}

Vocabulary build_vocab_from_split(const DatasetManifest& manifest, Split split, int min_freq) {
  std::vector<ReportRecord> records;
  for (const ManifestEntry* e : manifest.in_split(split))
    records.push_back({e->wsi_id, e->report});
  if (records.empty()) throw std::runtime_error("no reports in the requested split");
  return Vocabulary::build(records, min_freq);
}

std::string run_synth(const RunConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  SyntheticSpec spec =
      default_synthetic_spec(config.synth.num_wsis, config.synth.themes, config.synth.d_in,
                             config.synth.n_min, config.synth.n_max, config.synth.noise_scale,
                             config.seed, config.synth.max_themes_per_wsi);
  SyntheticCorpus corpus = synth_generate(spec);
  std::string manifest = write_synthetic_dataset(corpus, out_dir, config.data.split,
                                                 config.seed);
  RunConfig resolved = config;
  resolved.save((fs::path(out_dir) / "config.json").string());
  return manifest;
}

TrainOutputs run_train(const RunConfig& config, const std::string& manifest_path,
                       const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string manifest_dir = fs::path(manifest_path).parent_path().string();
  DatasetManifest manifest = load_manifest(manifest_path);

  Vocabulary vocab = build_vocab_from_split(manifest, Split::Train, config.data.min_freq);
  std::vector<TrainPair> train =
      load_pairs(manifest, manifest_dir, Split::Train, vocab, config.data.max_len);
  std::vector<TrainPair> val =
      load_pairs(manifest, manifest_dir, Split::Val, vocab, config.data.max_len);

  HistGenModel model(config, vocab.size());

  std::string csv = "epoch,loss,bleu_1,bleu_2,bleu_3,bleu_4,meteor,rouge_l\n";
  TrainResult result = fit(model, train, val, vocab, [&csv](const EpochLog& log) {
    csv += std::to_string(log.epoch) + "," + fmt(log.loss);
    if (log.has_val)
      csv += "," + nlg_row(log.val);
    else
      csv += ",,,,,,";
    csv += "\n";
  });

  TrainOutputs out;
  out.result = result;
  out.metrics_csv_path = (fs::path(out_dir) / "metrics.csv").string();
  write_text(out.metrics_csv_path, csv);
  config.save((fs::path(out_dir) / "config.json").string());
  out.checkpoint_path = (fs::path(out_dir) / "checkpoint.hgck").string();
  save_checkpoint(out.checkpoint_path, model, vocab, result.best_epoch, result.best_metric);
  return out;
}

std::string run_generate(const std::string& checkpoint_path, const std::string& manifest_path,
                         const std::string& split, const std::string& out_path,
                         int beam_override, const std::string& attention_out) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  std::string manifest_dir = fs::path(manifest_path).parent_path().string();
  DatasetManifest manifest = load_manifest(manifest_path);
  int beam = beam_override > 0 ? beam_override : ckpt.config.decoder.beam_size;
  int max_len = ckpt.config.decoder.max_len;

  std::vector<const ManifestEntry*> entries;
  if (split == "all") {
    for (const auto& e : manifest.entries) entries.push_back(&e);
  } else {
    entries = manifest.in_split(split_from_name(split));
  }
  if (entries.empty()) throw std::runtime_error("generate: no entries in split '" + split + "'");

  json gens = json::object();
  json attn = json::object();
  for (const ManifestEntry* e : entries) {
    fs::path p = fs::path(e->feature_file).is_absolute()
                     ? fs::path(e->feature_file)
                     : fs::path(manifest_dir) / e->feature_file;
    PatchFeatureBag bag = load_feature_bag(p.string());
    GenerationOutput gen = ckpt.model->generate(bag.features, beam, max_len);
    gens[e->wsi_id] = {{"text", ckpt.vocab.decode(gen.token_ids)},
                       {"log_prob", gen.log_prob}};
    if (!attention_out.empty()) {
      ad::NoGradGuard no_grad;
      HistGenModel::VisualTrace trace;
      ckpt.model->encode_visual(bag.features, &trace);
      json ja;
      json pools = json::array();
      for (const auto& w : trace.lgh.pool_weights) {
        json row = json::array();
        for (Eigen::Index i = 0; i < w.size(); ++i) row.push_back(w(i));
        pools.push_back(std::move(row));
      }
      ja["region_pool_weights"] = std::move(pools);
      const auto& proto = trace.cmc.prototype_attention.mean_weights;
      if (proto.size() > 0) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < proto.rows(); ++i) {
          json row = json::array();
          for (Eigen::Index j = 0; j < proto.cols(); ++j) row.push_back(proto(i, j));
          rows.push_back(std::move(row));
        }
        ja["prototype_attention"] = std::move(rows);
      }
      attn[e->wsi_id] = std::move(ja);
    }
  }
  write_text(out_path, gens.dump(2) + "\n");
  if (!attention_out.empty()) write_text(attention_out, attn.dump(2) + "\n");
  return out_path;
}

metrics::NlgScore run_eval_nlg(const std::string& generations_path,
                               const std::string& references_path, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ifstream gin(generations_path);
  if (!gin) throw std::runtime_error(generations_path + ": cannot open");
  json gens;
  gin >> gens;
  std::vector<ReportRecord> refs = load_report_corpus(references_path);

  std::vector<std::string> cands, truths;
  for (const auto& r : refs) {
    if (!gens.contains(r.wsi_id)) continue;
    const auto& g = gens.at(r.wsi_id);
    cands.push_back(g.is_object() ? g.at("text").get<std::string>() : g.get<std::string>());
    truths.push_back(r.text);
  }
  if (cands.empty())
    throw std::runtime_error("eval-nlg: no overlapping wsi ids between generations and references");

  metrics::NlgScore score = metrics::evaluate_corpus(cands, truths);
  write_text((fs::path(out_dir) / "nlg_metrics.csv").string(),
             std::string(kNlgHeader) + "\n" + nlg_row(score) + "\n");
  json j = {{"BLEU-1", score.bleu[0]},
            {"BLEU-2", score.bleu[1]},
            {"BLEU-3", score.bleu[2]},
            {"BLEU-4", score.bleu[3]},
            {"METEOR", score.meteor},
            {"ROUGE-L", score.rouge_l},
            {"meteor_variant", "meteor_exact"},  // exact matches only, no stem/synonym stages
            {"pairs", cands.size()}};
  write_text((fs::path(out_dir) / "nlg_metrics.json").string(), j.dump(2) + "\n");
  return score;
}

namespace {

metrics::NlgScore train_and_eval_val(const RunConfig& config, const std::string& manifest_path,
                                     const std::string& out_dir) {
  TrainOutputs outs = run_train(config, manifest_path, out_dir);
  Checkpoint ckpt = load_checkpoint(outs.checkpoint_path);
  std::string manifest_dir = fs::path(manifest_path).parent_path().string();
  DatasetManifest manifest = load_manifest(manifest_path);
  std::vector<TrainPair> val = load_pairs(manifest, manifest_dir, Split::Val, ckpt.vocab,
                                          ckpt.config.data.max_len);
  if (val.empty()) throw std::runtime_error("ablate: empty validation split");
  return eval_split(*ckpt.model, ckpt.vocab, val);
}

}  // namespace

std::string run_ablate(const RunConfig& config, const std::string& manifest_path,
                       const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::array<std::pair<std::string, std::string>, 3> arms{
      {{"base", "Base"}, {"cmc", "+CMC"}, {"cmc_lgh", "+CMC+LGH"}}};
  std::array<metrics::NlgScore, 3> scores;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    RunConfig arm_config = config;
    arm_config.train.arm = arms[i].first;
    scores[i] = train_and_eval_val(arm_config, manifest_path,
                                   (fs::path(out_dir) / arms[i].first).string());
  }

  auto six = [](const metrics::NlgScore& s) {
    return std::array<double, 6>{s.bleu[0], s.bleu[1], s.bleu[2],
                                 s.bleu[3], s.meteor,  s.rouge_l};
  };
  std::array<double, 6> base = six(scores[0]);

  std::string csv = std::string("method,") + kNlgHeader + ",AVG_DELTA\n";
  for (std::size_t i = 0; i < arms.size(); ++i) {
    csv += arms[i].second + "," + nlg_row(scores[i]) + ",";
    if (i == 0) {
      csv += "-";
    } else {
      std::array<double, 6> cur = six(scores[i]);
      double sum = 0.0;
      int counted = 0;
      for (int k = 0; k < 6; ++k) {
        if (base[static_cast<std::size_t>(k)] <= 0.0) continue;
        sum += (cur[static_cast<std::size_t>(k)] - base[static_cast<std::size_t>(k)]) /
               base[static_cast<std::size_t>(k)] * 100.0;
        ++counted;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f%%", counted > 0 ? sum / counted : 0.0);
      csv += buf;
    }
    csv += "\n";
  }
  std::string path = (fs::path(out_dir) / "ablation.csv").string();
  write_text(path, csv);
  return path;
}

std::string run_region_sweep(const RunConfig& config, const std::string& manifest_path,
                             const std::string& out_dir, const std::vector<int>& region_sizes) {
  fs::create_directories(out_dir);
  std::string csv = std::string("region_size,") + kNlgHeader + "\n";
  for (int s : region_sizes) {
    RunConfig sweep_config = config;
    sweep_config.train.arm = "cmc_lgh";
    sweep_config.encoder.region_size = s;
    metrics::NlgScore score =
        train_and_eval_val(sweep_config, manifest_path,
                           (fs::path(out_dir) / ("region_" + std::to_string(s))).string());
    csv += std::to_string(s) + "," + nlg_row(score) + "\n";
  }
  std::string path = (fs::path(out_dir) / "region_sweep.csv").string();
  write_text(path, csv);
  return path;
}

std::string run_finetune(const RunConfig& config, const std::string& checkpoint_path,
                         const std::string& manifest_path, const std::string& out_dir,
                         bool survival, bool with_scratch) {
  fs::create_directories(out_dir);
  std::string manifest_dir = fs::path(manifest_path).parent_path().string();
  DatasetManifest manifest = load_manifest(manifest_path);

  std::vector<TaskSample> samples;
  for (const auto& e : manifest.entries) {
    TaskSample s;
    s.wsi_id = e.wsi_id;
    fs::path p = fs::path(e.feature_file).is_absolute()
                     ? fs::path(e.feature_file)
                     : fs::path(manifest_dir) / e.feature_file;
    s.features = load_feature_bag(p.string()).features;
    if (survival) {
      if (!e.time || !e.censored)
        throw std::runtime_error("finetune-surv: entry '" + e.wsi_id +
                                 "' lacks time/censored fields");
      s.time = *e.time;
      s.censored = *e.censored;
    } else {
      if (!e.label)
        throw std::runtime_error("finetune-cls: entry '" + e.wsi_id + "' lacks a label");
      s.label = *e.label;
    }
    samples.push_back(std::move(s));
  }

  RunConfig model_config = config;
  std::map<std::string, ad::Matrix> weights;
  const std::map<std::string, ad::Matrix>* pretrained = nullptr;
  if (!checkpoint_path.empty()) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    model_config = ckpt.config;
    model_config.finetune = config.finetune;
    weights = ckpt.model->params().snapshot();
    pretrained = &weights;
  }

  FinetuneOptions options;
  options.config = model_config.finetune;
  options.seed = config.seed;

  auto run_mode = [&](bool scratch) {
    FinetuneOptions o = options;
    o.from_scratch = scratch;
    return survival ? finetune_survival(model_config, pretrained, samples, o)
                    : finetune_classification(model_config, pretrained, samples, o);
  };

  std::vector<std::pair<std::string, TransferResult>> rows;
  rows.emplace_back(pretrained ? "pretrained" : "scratch", run_mode(pretrained == nullptr));
  if (with_scratch && pretrained) rows.emplace_back("scratch", run_mode(true));

  std::string table_name = survival ? "finetune_surv" : "finetune_cls";
  std::string csv = survival ? "method,c_index\n" : "method,accuracy,auc\n";
  std::string folds_csv = survival ? "method,fold,c_index,skipped\n"
                                   : "method,fold,accuracy,auc,skipped\n";
  for (const auto& [name, res] : rows) {
    if (survival) {
      csv += name + "," + fmt_pm(res.mean_primary, res.std_primary) + "\n";
    } else {
      csv += name + "," + fmt_pm(res.mean_primary, res.std_primary) + "," +
             fmt_pm(res.mean_auc, res.std_auc) + "\n";
    }
    for (const auto& f : res.folds) {
      folds_csv += name + "," + std::to_string(f.fold) + ",";
      if (survival)
        folds_csv += fmt(f.c_index);
      else
        folds_csv += fmt(f.accuracy) + "," + fmt(f.auc);
      folds_csv += std::string(",") + (f.skipped ? "yes" : "no") + "\n";
    }
  }
  std::string path = (fs::path(out_dir) / (table_name + ".csv")).string();
  write_text(path, csv);
  write_text((fs::path(out_dir) / (table_name + "_folds.csv")).string(), folds_csv);
  return path;
}

}  // namespace histgen::drivers
