#include "histgen/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace histgen {

using ad::Matrix;
using ad::Var;

HistGenModel::HistGenModel(const RunConfig& config, int vocab_size)
    : cfg_(config), arm_(arm_from_name(config.train.arm)), store_(config.seed) {
  cfg_.validate();
  if (arm_ == ModelArm::CmcLgh) {
    lgh_ = std::make_unique<LghEncoder>(store_, cfg_.encoder);
  } else {
    // Same name and shape as the LGH input projection, so all arms draw
    // identical initial values for the shared parameters.
    input_proj_ = nn::Linear(store_, "encoder.proj", cfg_.encoder.d_in, cfg_.encoder.d_model);
  }
  if (arm_ != ModelArm::Base)
    cmc_ = std::make_unique<CmcModule>(store_, cfg_.cmc, cfg_.encoder.d_model);
  decoder_ = std::make_unique<ReportDecoder>(store_, cfg_.decoder, vocab_size);
}

Var HistGenModel::encode_visual(const Eigen::MatrixXf& features, VisualTrace* trace,
                                Rng* dropout_rng) const {
  if (features.rows() < 1) throw std::invalid_argument("encode_visual: empty bag");
  Var reps;
  if (arm_ == ModelArm::CmcLgh) {
    reps = lgh_->forward(features, trace ? &trace->lgh : nullptr, dropout_rng);
  } else {
    if (features.cols() != cfg_.encoder.d_in)
      throw std::invalid_argument("encode_visual: bag dimension mismatch");
    Var projected = input_proj_.forward(ad::constant(features.cast<double>()));
    reps = ad::mean_rows(projected);
  }
  if (cmc_) reps = cmc_->visual_pass(reps, trace ? &trace->cmc : nullptr);
  return reps;
}

Var HistGenModel::teacher_forcing_logits(const Eigen::MatrixXf& features,
                                         const TokenSequence& target,
                                         Rng* dropout_rng) const {
  Var reps = encode_visual(features, nullptr, dropout_rng);
  return decoder_->teacher_forcing_logits(reps, target, cmc_.get(), dropout_rng);
}

GenerationOutput HistGenModel::generate(const Eigen::MatrixXf& features, int beam_size,
                                        int max_len) const {
  ad::NoGradGuard no_grad;
  Var reps = encode_visual(features);
  if (beam_size == 1) return decoder_->greedy_generate(reps, max_len, cmc_.get());
  return decoder_->beam_search_generate(reps, beam_size, max_len, cmc_.get());
}

namespace {

constexpr char kCkptMagic[4] = {'H', 'G', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

void write_string(std::ofstream& out, const std::string& s) {
  std::uint64_t len = s.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const std::string& path) {
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path + ": truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const HistGenModel& model,
                     const Vocabulary& vocab, int epoch, double best_metric) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(kCkptMagic, 4);
  std::uint32_t version = kCkptVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  write_string(out, model.config().to_json());
  write_string(out, vocab.to_json());
  std::int32_t ep = epoch;
  out.write(reinterpret_cast<const char*>(&ep), sizeof(ep));
  out.write(reinterpret_cast<const char*>(&best_metric), sizeof(best_metric));

  const auto& params = model.params().all();
  std::uint64_t count = params.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  std::vector<double> row;
  for (const auto& [name, p] : params) {
    write_string(out, name);
    std::uint64_t rows = static_cast<std::uint64_t>(p->value.rows());
    std::uint64_t cols = static_cast<std::uint64_t>(p->value.cols());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(&kDtypeF64), sizeof(kDtypeF64));
    row.resize(cols);
    for (std::uint64_t i = 0; i < rows; ++i) {
      for (std::uint64_t j = 0; j < cols; ++j)
        row[j] = p->value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(sizeof(double) * cols));
    }
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCkptVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version");

  Checkpoint ckpt;
  ckpt.config = RunConfig::from_json(read_string(in, path));
  ckpt.vocab = Vocabulary::from_json(read_string(in, path));
  std::int32_t ep = 0;
  in.read(reinterpret_cast<char*>(&ep), sizeof(ep));
  in.read(reinterpret_cast<char*>(&ckpt.best_metric), sizeof(ckpt.best_metric));
  ckpt.epoch = ep;

  ckpt.model = std::make_shared<HistGenModel>(ckpt.config, ckpt.vocab.size());
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (count != ckpt.model->params().all().size())
    throw std::runtime_error(path + ": parameter count does not match architecture");
  std::vector<double> row;
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = read_string(in, path);
    std::uint64_t rows = 0, cols = 0;
    std::uint8_t dtype = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    in.read(reinterpret_cast<char*>(&dtype), sizeof(dtype));
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
    if (dtype != kDtypeF64)
      throw std::runtime_error(path + ": unsupported parameter dtype");
    Var p = ckpt.model->params().get(name);
    if (p->value.rows() != static_cast<Eigen::Index>(rows) ||
        p->value.cols() != static_cast<Eigen::Index>(cols))
      throw std::runtime_error(path + ": shape mismatch for parameter '" + name + "'");
    row.resize(cols);
    for (std::uint64_t i = 0; i < rows; ++i) {
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(sizeof(double) * cols));
      if (!in) throw std::runtime_error(path + ": truncated parameter payload");
      for (std::uint64_t j = 0; j < cols; ++j)
        p->value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
  }
  return ckpt;
}

}  // namespace histgen
