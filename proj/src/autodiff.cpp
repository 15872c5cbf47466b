#include "histgen/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace histgen::ad {

bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

namespace {

Var make_node(Matrix v, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>(std::move(v));
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : parents)
      if (p->requires_grad) needs = true;
    if (needs) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
    }
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a->rows()) + "x" + std::to_string(a->cols()) +
                                " vs " + std::to_string(b->rows()) + "x" +
                                std::to_string(b->cols()));
}

}  // namespace

Var constant(Matrix v) { return std::make_shared<Node>(std::move(v)); }

Var parameter(Matrix v) {
  auto n = std::make_shared<Node>(std::move(v));
  n->requires_grad = true;
  n->zero_grad();
  return n;
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(a->value + b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad += n.grad;
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(a->value - b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad -= n.grad;
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_node(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad.cwiseProduct(n.parents[1]->value);
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad += n.grad.cwiseProduct(n.parents[0]->value);
    }
  });
}

Var scale(const Var& a, double s) {
  return make_node(a->value * s, {a}, [s](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad * s;
    }
  });
}

Var add_rowvec(const Var& a, const Var& r) {
  if (r->rows() != 1 || r->cols() != a->cols())
    throw std::invalid_argument("add_rowvec: r must be 1 x cols(a)");
  Matrix v = a->value;
  v.rowwise() += r->value.row(0);
  return make_node(std::move(v), {a, r}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad += n.grad.colwise().sum();
    }
  });
}

Var mul_rowvec(const Var& a, const Var& r) {
  if (r->rows() != 1 || r->cols() != a->cols())
    throw std::invalid_argument("mul_rowvec: r must be 1 x cols(a)");
  Matrix v = (a->value.array().rowwise() * r->value.row(0).array()).matrix();
  return make_node(std::move(v), {a, r}, [](Node& n) {
    const Matrix& av = n.parents[0]->value;
    const Matrix& rv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += (n.grad.array().rowwise() * rv.row(0).array()).matrix();
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad += n.grad.cwiseProduct(av).colwise().sum();
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows())
    throw std::invalid_argument("matmul: inner dimensions disagree");
  return make_node(a->value * b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad * n.parents[1]->value.transpose();
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad += n.parents[0]->value.transpose() * n.grad;
    }
  });
}

Var transpose(const Var& a) {
  return make_node(a->value.transpose(), {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad.transpose();
    }
  });
}

Var rows(const Var& a, Eigen::Index i, Eigen::Index k) {
  if (i < 0 || k < 0 || i + k > a->rows()) throw std::invalid_argument("rows: range out of bounds");
  return make_node(a->value.middleRows(i, k), {a}, [i, k](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad.middleRows(i, k) += n.grad;
    }
  });
}

Var cols(const Var& a, Eigen::Index j, Eigen::Index k) {
  if (j < 0 || k < 0 || j + k > a->cols()) throw std::invalid_argument("cols: range out of bounds");
  return make_node(a->value.middleCols(j, k), {a}, [j, k](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad.middleCols(j, k) += n.grad;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p->cols() != parts[0]->cols())
      throw std::invalid_argument("concat_rows: column mismatch");
    total += p->rows();
  }
  Matrix v(total, parts[0]->cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  return make_node(std::move(v), parts, [](Node& n) {
    Eigen::Index at = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad.middleRows(at, p->rows());
      }
      at += p->rows();
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p->rows() != parts[0]->rows())
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p->cols();
  }
  Matrix v(parts[0]->rows(), total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  return make_node(std::move(v), parts, [](Node& n) {
    Eigen::Index at = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad.middleCols(at, p->cols());
      }
      at += p->cols();
    }
  });
}

Var relu(const Var& a) {
  return make_node(a->value.cwiseMax(0.0), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad +=
        (n.parents[0]->value.array() > 0.0).cast<double>().matrix().cwiseProduct(n.grad);
  });
}

Var tanh_op(const Var& a) {
  Matrix v = a->value.array().tanh().matrix();
  return make_node(std::move(v), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad +=
        ((1.0 - n.value.array().square()) * n.grad.array()).matrix();
  });
}

Var sigmoid(const Var& a) {
  Matrix v = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
  return make_node(std::move(v), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad +=
        (n.value.array() * (1.0 - n.value.array()) * n.grad.array()).matrix();
  });
}

Var log_op(const Var& a) {
  Matrix v = a->value.array().log().matrix();
  return make_node(std::move(v), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad.cwiseQuotient(n.parents[0]->value);
  });
}

Var softmax_rows(const Var& a, const std::vector<std::uint8_t>* key_mask, bool causal) {
  const Eigen::Index r = a->rows(), c = a->cols();
  if (key_mask && static_cast<Eigen::Index>(key_mask->size()) != c)
    throw std::invalid_argument("softmax_rows: key mask size mismatch");
  const double ninf = -std::numeric_limits<double>::infinity();
  Matrix logits = a->value;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) {
      bool blocked = (key_mask && !(*key_mask)[static_cast<std::size_t>(j)]) || (causal && j > i);
      if (blocked) logits(i, j) = ninf;
    }
  Matrix out(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    double m = logits.row(i).maxCoeff();
    if (m == ninf) throw std::runtime_error("softmax_rows: fully masked row");
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();  // exp(-inf) == 0 exactly
    out.row(i) = e / e.sum();
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    const Matrix& y = n.value;
    Eigen::VectorXd dot = (n.grad.cwiseProduct(y)).rowwise().sum();
    n.parents[0]->grad += y.cwiseProduct(n.grad.colwise() - dot);
  });
}

Var log_softmax_rows(const Var& a) {
  const Eigen::Index r = a->rows(), c = a->cols();
  Matrix out(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    double m = a->value.row(i).maxCoeff();
    double lse = std::log((a->value.row(i).array() - m).exp().sum()) + m;
    out.row(i) = a->value.row(i).array() - lse;
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    Matrix soft = n.value.array().exp();
    Eigen::VectorXd rowsum = n.grad.rowwise().sum();
    n.parents[0]->grad += n.grad - (soft.array().colwise() * rowsum.array()).matrix();
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index r = x->rows(), c = x->cols();
  if (gamma->rows() != 1 || gamma->cols() != c || beta->rows() != 1 || beta->cols() != c)
    throw std::invalid_argument("layer_norm_rows: gamma/beta must be 1 x cols(x)");
  Eigen::VectorXd mean = x->value.rowwise().mean();
  Matrix centered = x->value.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().mean();
  Eigen::VectorXd inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = (centered.array().colwise() * inv_std.array()).matrix();
  Matrix out = xhat;
  out.array().rowwise() *= gamma->value.row(0).array();
  out.array().rowwise() += beta->value.row(0).array();
  auto xhat_keep = std::make_shared<Matrix>(std::move(xhat));
  auto inv_keep = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
  return make_node(std::move(out), {x, gamma, beta},
                   [xhat_keep, inv_keep, c](Node& n) {
                     const Matrix& xh = *xhat_keep;
                     if (n.parents[2]->requires_grad) {
                       n.parents[2]->ensure_grad();
                       n.parents[2]->grad += n.grad.colwise().sum();
                     }
                     if (n.parents[1]->requires_grad) {
                       n.parents[1]->ensure_grad();
                       n.parents[1]->grad += n.grad.cwiseProduct(xh).colwise().sum();
                     }
                     if (!n.parents[0]->requires_grad) return;
                     n.parents[0]->ensure_grad();
                     Matrix dxhat =
                         (n.grad.array().rowwise() * n.parents[1]->value.row(0).array())
                             .matrix();
                     Eigen::VectorXd m1 = dxhat.rowwise().mean();
                     Eigen::VectorXd m2 = dxhat.cwiseProduct(xh).rowwise().mean();
                     Matrix dx = dxhat;
                     dx.colwise() -= m1;
                     dx.array() -= xh.array().colwise() * m2.array();
                     dx.array().colwise() *= inv_keep->array();
                     n.parents[0]->grad += dx;
                     (void)c;
                   });
}

Var embedding_lookup(const Var& table, const std::vector<int>& ids) {
  const Eigen::Index v = table->rows(), d = table->cols();
  Matrix out(static_cast<Eigen::Index>(ids.size()), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw std::out_of_range("embedding_lookup: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  return make_node(std::move(out), {table}, [ids](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      n.parents[0]->grad.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var pick_columns(const Var& a, const std::vector<int>& ids) {
  if (static_cast<Eigen::Index>(ids.size()) != a->rows())
    throw std::invalid_argument("pick_columns: one index per row required");
  Matrix out(a->rows(), 1);
  for (Eigen::Index i = 0; i < a->rows(); ++i) {
    int j = ids[static_cast<std::size_t>(i)];
    if (j < 0 || j >= a->cols()) throw std::out_of_range("pick_columns: index out of range");
    out(i, 0) = a->value(i, j);
  }
  return make_node(std::move(out), {a}, [ids](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    for (Eigen::Index i = 0; i < n.value.rows(); ++i)
      n.parents[0]->grad(i, ids[static_cast<std::size_t>(i)]) += n.grad(i, 0);
  });
}

Var sum_all(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a->value.sum();
  return make_node(std::move(v), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.array() += n.grad(0, 0);
  });
}

Var mean_all(const Var& a) {
  double inv = 1.0 / static_cast<double>(a->value.size());
  return scale(sum_all(a), inv);
}

Var mean_rows(const Var& a) {
  if (a->rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  double inv = 1.0 / static_cast<double>(a->rows());
  Matrix v = a->value.colwise().sum() * inv;
  return make_node(std::move(v), {a}, [inv](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    Matrix g = (n.grad.row(0) * inv).replicate(n.parents[0]->rows(), 1);
    n.parents[0]->grad += g;
  });
}

Var dropout(const Var& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  double keep = 1.0 - p;
  Matrix mask(a->rows(), a->cols());
  for (Eigen::Index i = 0; i < a->rows(); ++i)
    for (Eigen::Index j = 0; j < a->cols(); ++j)
      mask(i, j) = rng.uniform() < p ? 0.0 : 1.0 / keep;
  auto mask_keep = std::make_shared<Matrix>(std::move(mask));
  return make_node(a->value.cwiseProduct(*mask_keep), {a}, [mask_keep](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad.cwiseProduct(*mask_keep);
  });
}

void backward(const Var& loss) {
  if (loss->rows() != 1 || loss->cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1");
  // Iterative DFS topological order (recursion would overflow on long
  // sequence graphs).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p) && p->backprop) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->ensure_grad();
  loss->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

}  // namespace histgen::ad
