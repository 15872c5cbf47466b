#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "histgen/rng.hpp"

namespace histgen::ad {

using Matrix = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

// One value in the computation graph. Gradients accumulate into `grad`
// during backward(); parameter nodes persist across graphs, intermediates
// die with the forward pass that created them.
struct Node {
  Matrix value;
  Matrix grad;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  bool requires_grad = false;

  explicit Node(Matrix v) : value(std::move(v)) {}

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }
  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

// Graph construction can be switched off for pure inference (generation,
// finite-difference probes); ops then propagate values only.
bool& grad_enabled();

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

Var constant(Matrix v);
Var parameter(Matrix v);

// Elementwise / broadcast arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_rowvec(const Var& a, const Var& r);  // r: 1 x cols(a)
Var mul_rowvec(const Var& a, const Var& r);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var rows(const Var& a, Eigen::Index i, Eigen::Index k);
Var cols(const Var& a, Eigen::Index j, Eigen::Index k);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Nonlinearities.
Var relu(const Var& a);
Var tanh_op(const Var& a);
Var sigmoid(const Var& a);
Var log_op(const Var& a);  // elementwise natural log; caller keeps inputs > 0

// Row softmax with optional key mask (1 = attend, 0 = forbidden) and causal
// masking (col j > row i forbidden). Masked entries get exactly zero weight.
Var softmax_rows(const Var& a, const std::vector<std::uint8_t>* key_mask = nullptr,
                 bool causal = false);
Var log_softmax_rows(const Var& a);

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// table: V x d, ids in [0, V) -> |ids| x d.
Var embedding_lookup(const Var& table, const std::vector<int>& ids);

// out(i, 0) = a(i, ids[i]).
Var pick_columns(const Var& a, const std::vector<int>& ids);

Var sum_all(const Var& a);   // 1x1
Var mean_all(const Var& a);  // 1x1

// Mean over rows: 1 x d. Matches "pooling into one pseudo-region".
Var mean_rows(const Var& a);

// Inverted dropout with an explicit rng; p = 0 returns the input unchanged.
Var dropout(const Var& a, double p, Rng& rng);

// Reverse-mode sweep from a 1x1 loss node.
void backward(const Var& loss);

}  // namespace histgen::ad
