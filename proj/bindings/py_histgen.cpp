#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "histgen/drivers.hpp"
#include "histgen/metrics.hpp"
#include "histgen/model.hpp"
#include "histgen/train.hpp"

namespace py = pybind11;
using namespace histgen;

namespace {

// Model plus the vocabulary it decodes with; configs travel as JSON strings
// so the python side can treat them as plain dicts.
struct PyModel {
  RunConfig config;
  Vocabulary vocab;
  std::shared_ptr<HistGenModel> model;

  static PyModel create(const std::string& config_json, const Vocabulary& vocab) {
    PyModel m;
    m.config = RunConfig::from_json(config_json);
    m.vocab = vocab;
    m.model = std::make_shared<HistGenModel>(m.config, m.vocab.size());
    return m;
  }

  static PyModel from_checkpoint(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    PyModel m;
    m.config = ckpt.config;
    m.vocab = ckpt.vocab;
    m.model = ckpt.model;
    return m;
  }

  Eigen::MatrixXd encode_visual(const Eigen::MatrixXf& features) const {
    ad::NoGradGuard no_grad;
    return model->encode_visual(features)->value;
  }

  Eigen::MatrixXd logits(const Eigen::MatrixXf& features, const std::vector<int>& ids) const {
    ad::NoGradGuard no_grad;
    TokenSequence target;
    target.ids = ids;
    return model->teacher_forcing_logits(features, target)->value;
  }

  double sequence_log_prob(const Eigen::MatrixXf& features, const std::vector<int>& ids) const {
    ad::NoGradGuard no_grad;
    TokenSequence seq;
    seq.ids = ids;
    ad::Var reps = model->encode_visual(features);
    return model->decoder().log_prob_of_sequence(reps, seq, model->cmc());
  }

  py::dict generate(const Eigen::MatrixXf& features, int beam_size, int max_len) const {
    if (beam_size <= 0) beam_size = config.decoder.beam_size;
    if (max_len <= 0) max_len = config.decoder.max_len;
    GenerationOutput out = model->generate(features, beam_size, max_len);
    py::dict d;
    d["ids"] = out.token_ids.ids;
    d["text"] = vocab.decode(out.token_ids);
    d["log_prob"] = out.log_prob;
    d["finished"] = out.finished;
    return d;
  }

  void save(const std::string& path, int epoch, double best_metric) const {
    save_checkpoint(path, *model, vocab, epoch, best_metric);
  }
};

py::dict score_dict(const metrics::NlgScore& s) {
  py::dict d;
  d["BLEU-1"] = s.bleu[0];
  d["BLEU-2"] = s.bleu[1];
  d["BLEU-3"] = s.bleu[2];
  d["BLEU-4"] = s.bleu[3];
  d["METEOR"] = s.meteor;
  d["ROUGE-L"] = s.rouge_l;
  return d;
}

}  // namespace

PYBIND11_MODULE(_histgen, m) {
  m.doc() = "Hierarchical WSI report generation: encoders, memory, decoding, metrics";

  m.attr("PAD") = Specials::kPad;
  m.attr("BOS") = Specials::kBos;
  m.attr("EOS") = Specials::kEos;
  m.attr("UNK") = Specials::kUnk;

  m.def("default_config_json", [] { return RunConfig{}.to_json(); },
        "The published model settings as a JSON string");
  m.def("validate_config_json",
        [](const std::string& text) { return RunConfig::from_json(text).to_json(); },
        py::arg("config_json"),
        "Parses (rejecting unknown keys), validates and re-serializes a config");

  // Feature file I/O.
  m.def(
      "write_feature_bag",
      [](const std::string& path, const Eigen::MatrixXf& features, const std::string& wsi_id) {
        PatchFeatureBag bag;
        bag.wsi_id = wsi_id;
        bag.features = features;
        write_feature_bag(path, bag);
      },
      py::arg("path"), py::arg("features"), py::arg("wsi_id") = "wsi");
  m.def(
      "load_feature_bag",
      [](const std::string& path) { return load_feature_bag(path).features; },
      py::arg("path"));

  // Tokenizer.
  m.def("tokenize", &tokenize, py::arg("text"));
  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static(
          "build",
          [](const std::vector<std::string>& texts, int min_freq) {
            std::vector<ReportRecord> records;
            for (std::size_t i = 0; i < texts.size(); ++i)
              records.push_back({"r" + std::to_string(i), texts[i]});
            return Vocabulary::build(records, min_freq);
          },
          py::arg("texts"), py::arg("min_freq") = 1)
      .def_static("from_json", &Vocabulary::from_json, py::arg("text"))
      .def("to_json", &Vocabulary::to_json)
      .def("id_of", &Vocabulary::id_of, py::arg("token"))
      .def("token_of", &Vocabulary::token_of, py::arg("id"))
      .def("size", &Vocabulary::size)
      .def(
          "encode",
          [](const Vocabulary& v, const std::string& text, int max_len) {
            return v.encode(text, max_len).ids;
          },
          py::arg("text"), py::arg("max_len"))
      .def(
          "decode",
          [](const Vocabulary& v, const std::vector<int>& ids) {
            TokenSequence seq;
            seq.ids = ids;
            return v.decode(seq);
          },
          py::arg("ids"));

  // Metrics.
  m.def("bleu", &metrics::bleu_1_to_4, py::arg("candidate"), py::arg("reference"),
        "Sentence BLEU-1..4 over token lists");
  m.def("rouge_l", &metrics::rouge_l, py::arg("candidate"), py::arg("reference"),
        py::arg("beta") = 1.2);
  m.def("meteor_exact", &metrics::meteor_exact, py::arg("candidate"), py::arg("reference"));
  m.def(
      "evaluate_corpus",
      [](const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
        return score_dict(metrics::evaluate_corpus(candidates, references));
      },
      py::arg("candidates"), py::arg("references"));
  m.def(
      "c_index",
      [](const std::vector<double>& risks, const std::vector<double>& times,
         const std::vector<bool>& censored) {
        if (risks.size() != times.size() || times.size() != censored.size())
          throw std::invalid_argument("c_index: input lengths differ");
        std::vector<metrics::SurvivalRecord> recs;
        for (std::size_t i = 0; i < risks.size(); ++i)
          recs.push_back({risks[i], times[i], censored[i]});
        return metrics::c_index(recs);
      },
      py::arg("risk_scores"), py::arg("event_times"), py::arg("censored"));
  m.def("accuracy", &metrics::accuracy, py::arg("probabilities"), py::arg("labels"));
  m.def("auc", &metrics::auc, py::arg("probabilities"), py::arg("labels"));

  // Model.
  py::class_<PyModel>(m, "Model")
      .def_static("create", &PyModel::create, py::arg("config_json"), py::arg("vocab"))
      .def_static("from_checkpoint", &PyModel::from_checkpoint, py::arg("path"))
      .def("encode_visual", &PyModel::encode_visual, py::arg("features"),
           "Region representations, ceil(n/S) x d_model")
      .def("logits", &PyModel::logits, py::arg("features"), py::arg("target_ids"))
      .def("sequence_log_prob", &PyModel::sequence_log_prob, py::arg("features"),
           py::arg("ids"))
      .def("generate", &PyModel::generate, py::arg("features"), py::arg("beam_size") = 0,
           py::arg("max_len") = 0)
      .def("save", &PyModel::save, py::arg("path"), py::arg("epoch") = 0,
           py::arg("best_metric") = 0.0)
      .def_property_readonly("config_json",
                             [](const PyModel& m) { return m.config.to_json(); })
      .def_property_readonly("vocab", [](const PyModel& m) { return m.vocab; })
      .def_property_readonly("arm", [](const PyModel& m) { return arm_name(m.model->arm()); });

  // Experiment drivers (same code paths as the CLI).
  m.def(
      "run_synth",
      [](const std::string& config_json, const std::string& out_dir) {
        return drivers::run_synth(RunConfig::from_json(config_json), out_dir);
      },
      py::arg("config_json"), py::arg("out_dir"), "Returns the manifest path");
  m.def(
      "run_train",
      [](const std::string& config_json, const std::string& manifest, const std::string& out) {
        auto outs = drivers::run_train(RunConfig::from_json(config_json), manifest, out);
        py::dict d;
        d["checkpoint"] = outs.checkpoint_path;
        d["metrics_csv"] = outs.metrics_csv_path;
        d["best_epoch"] = outs.result.best_epoch;
        d["final_loss"] = outs.result.log.empty() ? 0.0 : outs.result.log.back().loss;
        return d;
      },
      py::arg("config_json"), py::arg("manifest"), py::arg("out_dir"));
  m.def("run_generate", &drivers::run_generate, py::arg("checkpoint"), py::arg("manifest"),
        py::arg("split"), py::arg("out_path"), py::arg("beam_override") = 0,
        py::arg("attention_out") = "");
  m.def(
      "run_eval_nlg",
      [](const std::string& generations, const std::string& references,
         const std::string& out_dir) {
        return score_dict(drivers::run_eval_nlg(generations, references, out_dir));
      },
      py::arg("generations"), py::arg("references"), py::arg("out_dir"));
  m.def(
      "run_ablate",
      [](const std::string& config_json, const std::string& manifest, const std::string& out) {
        return drivers::run_ablate(RunConfig::from_json(config_json), manifest, out);
      },
      py::arg("config_json"), py::arg("manifest"), py::arg("out_dir"));
  m.def(
      "run_region_sweep",
      [](const std::string& config_json, const std::string& manifest, const std::string& out,
         const std::vector<int>& sizes) {
        return drivers::run_region_sweep(RunConfig::from_json(config_json), manifest, out,
                                         sizes);
      },
      py::arg("config_json"), py::arg("manifest"), py::arg("out_dir"),
      py::arg("region_sizes") = std::vector<int>{64, 96, 128, 256, 384, 512});
  m.def(
      "run_finetune",
      [](const std::string& config_json, const std::string& checkpoint,
         const std::string& manifest, const std::string& out, bool survival,
         bool with_scratch) {
        return drivers::run_finetune(RunConfig::from_json(config_json), checkpoint, manifest,
                                     out, survival, with_scratch);
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("manifest"), py::arg("out_dir"),
      py::arg("survival") = false, py::arg("with_scratch") = false);

#ifdef VERSION_INFO
#define HG_STR(x) #x
#define HG_XSTR(x) HG_STR(x)
  m.attr("__version__") = HG_XSTR(VERSION_INFO);
#else
  m.attr("__version__") = "0.1.0";
#endif
}
