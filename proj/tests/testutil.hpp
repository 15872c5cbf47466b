#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "histgen/nn.hpp"

namespace histgen::testutil {

struct GradCheckReport {
  double max_err = 0.0;  // |analytic - fd| / max(|analytic|, |fd|, 1e-4)
  std::string worst;
  long checked = 0;

  bool ok(double tol = 1e-4) const { return checked > 0 && max_err <= tol; }
};

// Central finite differences against the analytic gradients produced by one
// backward pass. `make_loss` must rebuild the graph from the current
// parameter values and be deterministic.
inline GradCheckReport finite_diff_check(
    const std::vector<std::pair<std::string, ad::Var>>& params,
    const std::function<ad::Var()>& make_loss, double step = 1e-5) {
  for (auto& [name, p] : params) p->zero_grad();
  ad::Var loss = make_loss();
  ad::backward(loss);
  std::vector<ad::Matrix> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Var p = params[k].second;
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        double saved = p->value(i, j);
        double f1, f2;
        {
          ad::NoGradGuard no_grad;
          p->value(i, j) = saved + step;
          f1 = make_loss()->value(0, 0);
          p->value(i, j) = saved - step;
          f2 = make_loss()->value(0, 0);
          p->value(i, j) = saved;
        }
        double fd = (f1 - f2) / (2.0 * step);
        double a = analytic[k](i, j);
        double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4});
        ++report.checked;
        if (err > report.max_err) {
          report.max_err = err;
          report.worst = params[k].first + "(" + std::to_string(i) + "," +
                         std::to_string(j) + ")";
        }
      }
    }
  }
  return report;
}

inline std::vector<std::pair<std::string, ad::Var>> all_params(const nn::ParamStore& store) {
  std::vector<std::pair<std::string, ad::Var>> out;
  for (const auto& [name, p] : store.all()) out.emplace_back(name, p);
  return out;
}

// Nudges every parameter away from symmetric/zero initialization so gradient
// checks run at a generic point (zero-initialized gates would otherwise stop
// gradients from reaching the memory).
inline void jitter_params(nn::ParamStore& store, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (const auto& [name, p] : store.all())
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j)
        p->value(i, j) += rng.normal(0.0, scale);
}

inline ad::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed,
                                double scale = 1.0) {
  Rng rng(seed);
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
  return m;
}

inline Eigen::MatrixXf random_features(Eigen::Index n, Eigen::Index d, std::uint64_t seed,
                                       double scale = 1.0) {
  return random_matrix(n, d, seed, scale).cast<float>();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    std::mt19937_64 rng(std::random_device{}());
    path_ = base / ("histgen_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::filesystem::path path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace histgen::testutil
