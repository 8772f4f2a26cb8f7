#pragma once

// Minimal reverse-mode tape over dense column-batched matrices. Every value
// is a (rows x batch) Eigen matrix; the operator set is exactly what the
// encoder-decoder needs.

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace steer::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  Tape() { nodes_.reserve(4096); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  /// Leaf bound to an external parameter; backward accumulates into `grad`,
  /// which must already have the parameter's shape.
  Var parameter(const Matrix& value, Matrix& grad) {
    Node n;
    n.external = &value;
    n.external_grad = &grad;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Adds `g` into the gradient of node `id`.
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.external_grad) {
      *n.external_grad += g;
    } else if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward step.
  void backward(Var loss) {
    if (value(loss.id).size() != 1) throw std::invalid_argument("backward needs a scalar loss");
    accumulate(loss.id, Matrix::Ones(1, 1));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backprop || n.grad.size() == 0) continue;
      n.backprop(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    const Matrix* external = nullptr;
    Matrix* external_grad = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, std::size_t)> backprop;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {
inline bool any_grad(std::initializer_list<Var> vars) {
  for (const auto& v : vars)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id)) t.accumulate(a.id, g * b.value().transpose());
    if (t.needs_grad(b.id)) t.accumulate(b.id, a.value().transpose() * g);
  });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value() + b.value();
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

/// a (r x B) + bias (r x 1) broadcast over columns.
inline Var add_bias(Var a, Var bias) {
  Tape& t = *a.tape;
  Matrix out = a.value().colwise() + bias.value().col(0);
  return t.push(std::move(out), detail::any_grad({a, bias}), [a, bias](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a.id, g);
    if (t.needs_grad(bias.id)) t.accumulate(bias.id, g.rowwise().sum());
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id)) t.accumulate(a.id, g.cwiseProduct(b.value()));
    if (t.needs_grad(b.id)) t.accumulate(b.id, g.cwiseProduct(a.value()));
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value() * s;
  return t.push(std::move(out), detail::any_grad({a}), [a, s](Tape& t, std::size_t self) {
    t.accumulate(a.id, t.grad(self) * s);
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape& t, std::size_t self) {
    const auto y = t.value(self).array();
    t.accumulate(a.id, (t.grad(self).array() * y * (1.0 - y)).matrix());
  });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().array().tanh().matrix();
  return t.push(std::move(out), detail::any_grad({a}), [a](Tape& t, std::size_t self) {
    const auto y = t.value(self).array();
    t.accumulate(a.id, (t.grad(self).array() * (1.0 - y * y)).matrix());
  });
}

/// Rows [offset, offset + count).
inline Var rows(Var a, Eigen::Index offset, Eigen::Index count) {
  Tape& t = *a.tape;
  Matrix out = a.value().middleRows(offset, count);
  return t.push(std::move(out), detail::any_grad({a}), [a, offset, count](Tape& t, std::size_t self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleRows(offset, count) = t.grad(self);
    t.accumulate(a.id, g);
  });
}

/// Columns of the result are rows `ids[b]` of `table` (vocab x d).
inline Var gather(Var table, std::vector<std::uint32_t> ids) {
  Tape& t = *table.tape;
  const Matrix& tab = table.value();
  Matrix out(tab.cols(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t b = 0; b < ids.size(); ++b) out.col(static_cast<Eigen::Index>(b)) = tab.row(ids[b]).transpose();
  return t.push(std::move(out), detail::any_grad({table}), [table, ids = std::move(ids)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix dt = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t b = 0; b < ids.size(); ++b) dt.row(ids[b]) += g.col(static_cast<Eigen::Index>(b)).transpose();
    t.accumulate(table.id, dt);
  });
}

/// mask (1 x B) selects `fresh` where 1 and `old` where 0.
inline Var blend(Var fresh, Var old, const Eigen::RowVectorXd& mask) {
  Tape& t = *fresh.tape;
  Matrix out = fresh.value();
  for (Eigen::Index b = 0; b < mask.size(); ++b)
    if (mask[b] == 0.0) out.col(b) = old.value().col(b);
  return t.push(std::move(out), detail::any_grad({fresh, old}), [fresh, old, mask](Tape& t, std::size_t self) {
    Matrix g = t.grad(self);
    Matrix g_old = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index b = 0; b < mask.size(); ++b) {
      if (mask[b] == 0.0) {
        g_old.col(b) = g.col(b);
        g.col(b).setZero();
      }
    }
    t.accumulate(fresh.id, g);
    t.accumulate(old.id, g_old);
  });
}

/// Multiplicative attention. For every column b:
///   e_i = query_b . keys[i]_b   (masked positions excluded)
///   alpha = softmax(e),  context_b = sum_i alpha_i values[i]_b
/// `mask` is (positions x B). Attention weights land in `weights_out` if given.
inline Var attend(Var query, const std::vector<Var>& keys, const std::vector<Var>& values, const Matrix& mask,
                  Matrix* weights_out = nullptr) {
  Tape& t = *query.tape;
  const Eigen::Index positions = static_cast<Eigen::Index>(keys.size());
  const Eigen::Index batch = query.cols();
  const Matrix& q = query.value();
  Matrix alpha(positions, batch);
  for (Eigen::Index i = 0; i < positions; ++i) {
    alpha.row(i) = q.cwiseProduct(keys[static_cast<std::size_t>(i)].value()).colwise().sum();
  }
  for (Eigen::Index b = 0; b < batch; ++b) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < positions; ++i)
      if (mask(i, b) != 0.0) top = std::max(top, alpha(i, b));
    double total = 0.0;
    for (Eigen::Index i = 0; i < positions; ++i) {
      alpha(i, b) = mask(i, b) != 0.0 ? std::exp(alpha(i, b) - top) : 0.0;
      total += alpha(i, b);
    }
    alpha.col(b) /= total;
  }
  Matrix context = Matrix::Zero(q.rows(), batch);
  for (Eigen::Index i = 0; i < positions; ++i) {
    context += values[static_cast<std::size_t>(i)].value() * alpha.row(i).asDiagonal();
  }
  if (weights_out) *weights_out = alpha;

  bool needs = t.needs_grad(query.id);
  for (const auto& k : keys) needs = needs || t.needs_grad(k.id);
  for (const auto& v : values) needs = needs || t.needs_grad(v.id);
  return t.push(std::move(context), needs, [query, keys, values, alpha](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Eigen::Index positions = alpha.rows();
    Matrix d_alpha(positions, alpha.cols());
    for (Eigen::Index i = 0; i < positions; ++i) {
      const Var& v = values[static_cast<std::size_t>(i)];
      d_alpha.row(i) = g.cwiseProduct(v.value()).colwise().sum();
      if (t.needs_grad(v.id)) t.accumulate(v.id, g * alpha.row(i).asDiagonal());
    }
    const Eigen::RowVectorXd inner = alpha.cwiseProduct(d_alpha).colwise().sum();
    const Matrix d_e = alpha.cwiseProduct(d_alpha - Matrix::Ones(positions, 1) * inner);
    Matrix d_q = Matrix::Zero(query.rows(), query.cols());
    for (Eigen::Index i = 0; i < positions; ++i) {
      const Var& k = keys[static_cast<std::size_t>(i)];
      d_q += k.value() * d_e.row(i).asDiagonal();
      if (t.needs_grad(k.id)) t.accumulate(k.id, query.value() * d_e.row(i).asDiagonal());
    }
    t.accumulate(query.id, d_q);
  });
}

/// sum_b weight_b * -log softmax(logits_b)[target_b], as a 1x1 value.
/// Per-column log-probabilities of the targets are written to `logp_out`.
inline Var softmax_xent(Var logits, std::vector<std::uint32_t> targets, Eigen::RowVectorXd weights,
                        Eigen::RowVectorXd* logp_out = nullptr) {
  Tape& t = *logits.tape;
  const Matrix& z = logits.value();
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  Eigen::RowVectorXd logp(z.cols());
  for (Eigen::Index b = 0; b < z.cols(); ++b) {
    const double top = z.col(b).maxCoeff();
    probs.col(b) = (z.col(b).array() - top).exp().matrix();
    const double total = probs.col(b).sum();
    probs.col(b) /= total;
    logp[b] = z(targets[static_cast<std::size_t>(b)], b) - top - std::log(total);
    loss -= weights[b] * logp[b];
  }
  if (logp_out) *logp_out = logp;
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.push(std::move(out), detail::any_grad({logits}),
                [logits, targets = std::move(targets), weights = std::move(weights), probs = std::move(probs)](
                    Tape& t, std::size_t self) {
                  const double g = t.grad(self)(0, 0);
                  Matrix d = probs;
                  for (Eigen::Index b = 0; b < d.cols(); ++b) {
                    d(targets[static_cast<std::size_t>(b)], b) -= 1.0;
                    d.col(b) *= weights[b] * g;
                  }
                  t.accumulate(logits.id, d);
                });
}

}  // namespace steer::ad
