#pragma once

// Reverse-mode differentiation tape over dense Eigen matrices.
// One tape per decision step; parameters are bound leaves whose gradients
// accumulate into external buffers owned by the parameter structs.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sdb::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix<Scalar>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const {
    assert(value().size() == 1);
    return value()(0, 0);
  }
};

template <typename Scalar>
class Tape {
 public:
  struct Node {
    Matrix<Scalar> value;
    Matrix<Scalar> grad;
    std::function<void(Tape&, const Matrix<Scalar>&)> backprop;
  };

  Var<Scalar> emplace(Matrix<Scalar> value,
                      std::function<void(Tape&, const Matrix<Scalar>&)> backprop = nullptr) {
    nodes_.push_back(Node{std::move(value), Matrix<Scalar>(), std::move(backprop)});
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<Scalar> constant(Matrix<Scalar> value) { return emplace(std::move(value)); }

  Var<Scalar> constant_scalar(Scalar v) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  // Leaf bound to an external gradient accumulator. `grad_accum` must outlive
  // the backward pass and be sized like `value` (or empty; it gets resized).
  Var<Scalar> leaf(const Matrix<Scalar>& value, Matrix<Scalar>* grad_accum) {
    Var<Scalar> v = constant(value);
    if (grad_accum != nullptr) bindings_.push_back({v.id, grad_accum});
    return v;
  }

  const Matrix<Scalar>& value(int id) const { return nodes_[id].value; }
  Matrix<Scalar>& grad(int id) { return nodes_[id].grad; }

  void accumulate(int id, const Matrix<Scalar>& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Reverse sweep from a 1x1 loss node. Gradients of bound leaves are added
  // into their external accumulators.
  void backward(Var<Scalar> loss) {
    assert(loss.tape == this);
    assert(nodes_[loss.id].value.size() == 1);
    Matrix<Scalar> seed(1, 1);
    seed(0, 0) = Scalar(1);
    accumulate(loss.id, seed);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backprop) continue;
      n.backprop(*this, n.grad);
    }
    for (auto& [id, accum] : bindings_) {
      const Matrix<Scalar>& g = nodes_[id].grad;
      if (g.size() == 0) continue;
      if (accum->size() == 0) {
        *accum = g;
      } else {
        *accum += g;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Matrix<Scalar>*>> bindings_;
};

template <typename Scalar>
const Matrix<Scalar>& Var<Scalar>::value() const {
  return tape->value(id);
}

namespace detail {

template <typename Scalar>
Tape<Scalar>& same_tape(Var<Scalar> a, Var<Scalar> b) {
  assert(a.tape == b.tape);
  return *a.tape;
}

}  // namespace detail

// ---- primitive ops -------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  Matrix<Scalar> out = a.value() * b.value();
  return t.emplace(std::move(out), [ia = a.id, ib = b.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g * t.value(ib).transpose());
    t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  Matrix<Scalar> out = a.value() + b.value();
  return t.emplace(std::move(out), [ia = a.id, ib = b.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  Matrix<Scalar> out = a.value() - b.value();
  return t.emplace(std::move(out), [ia = a.id, ib = b.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, Matrix<Scalar>(-g));
  });
}

// Adds a [1 x m] row vector to every row of a.
template <typename Scalar>
Var<Scalar> add_rowvec(Var<Scalar> a, Var<Scalar> row) {
  Tape<Scalar>& t = detail::same_tape(a, row);
  assert(row.rows() == 1 && row.cols() == a.cols());
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return t.emplace(std::move(out), [ia = a.id, ir = row.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ir, Matrix<Scalar>(g.colwise().sum()));
  });
}

template <typename Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return t.emplace(std::move(out), [ia = a.id, ib = b.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

// Multiply a matrix by a differentiable 1x1 scalar node.
template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Var<Scalar> s) {
  Tape<Scalar>& t = detail::same_tape(a, s);
  assert(s.value().size() == 1);
  Matrix<Scalar> out = a.value() * s.scalar();
  return t.emplace(std::move(out), [ia = a.id, is = s.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, Matrix<Scalar>(g * t.value(is)(0, 0)));
    Matrix<Scalar> gs(1, 1);
    gs(0, 0) = g.cwiseProduct(t.value(ia)).sum();
    t.accumulate(is, gs);
  });
}

// Multiply by a plain (non-differentiable) constant.
template <typename Scalar>
Var<Scalar> cmul(Var<Scalar> a, Scalar c) {
  Matrix<Scalar> out = a.value() * c;
  return a.tape->emplace(std::move(out), [ia = a.id, c](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, Matrix<Scalar>(g * c));
  });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().transpose();
  return a.tape->emplace(std::move(out), [ia = a.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, Matrix<Scalar>(g.transpose()));
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape->emplace(std::move(out), [ia = a.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> mask = (t.value(ia).array() > Scalar(0)).template cast<Scalar>();
    t.accumulate(ia, Matrix<Scalar>(g.cwiseProduct(mask)));
  });
}

template <typename Scalar>
Var<Scalar> tanh_of(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().tanh();
  auto bp = [ia = a.id, y = out](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, Matrix<Scalar>(g.array() * (Scalar(1) - y.array().square())));
  };
  return a.tape->emplace(std::move(out), std::move(bp));
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Matrix<Scalar> out = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp()));
  auto bp = [ia = a.id, y = out](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, Matrix<Scalar>(g.array() * y.array() * (Scalar(1) - y.array())));
  };
  return a.tape->emplace(std::move(out), std::move(bp));
}

// log(1 + e^x), computed as max(x,0) + log1p(e^{-|x|}) for stability.
template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> a) {
  Matrix<Scalar> out = a.value().array().max(Scalar(0)) +
                       (-a.value().array().abs()).exp().log1p();
  return a.tape->emplace(std::move(out), [ia = a.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> s = Scalar(1) / (Scalar(1) + (-t.value(ia).array()).exp());
    t.accumulate(ia, Matrix<Scalar>(g.cwiseProduct(s)));
  });
}

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->emplace(std::move(out), [ia = a.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, Matrix<Scalar>(Matrix<Scalar>::Constant(t.value(ia).rows(), t.value(ia).cols(), g(0, 0))));
  });
}

template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> a) {
  return cmul(sum_all(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

template <typename Scalar>
Var<Scalar> pick(Var<Scalar> a, Eigen::Index i, Eigen::Index j) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value()(i, j);
  return a.tape->emplace(std::move(out), [ia = a.id, i, j](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> gi = Matrix<Scalar>::Zero(t.value(ia).rows(), t.value(ia).cols());
    gi(i, j) = g(0, 0);
    t.accumulate(ia, gi);
  });
}

// Stack a list of equal-width row blocks into one matrix.
template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  assert(!parts.empty());
  Tape<Scalar>& t = *parts.front().tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) rows += p.rows();
  Matrix<Scalar> out(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> extents;
  ids.reserve(parts.size());
  extents.reserve(parts.size());
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    ids.push_back(p.id);
    extents.push_back(p.rows());
    at += p.rows();
  }
  return t.emplace(std::move(out), [ids, extents](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      t.accumulate(ids[k], Matrix<Scalar>(g.middleRows(at, extents[k])));
      at += extents[k];
    }
  });
}

// Horizontal concatenation of row vectors (or any equal-height blocks).
template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  assert(!parts.empty());
  Tape<Scalar>& t = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Matrix<Scalar> out(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> extents;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id);
    extents.push_back(p.cols());
    at += p.cols();
  }
  return t.emplace(std::move(out), [ids, extents](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Eigen::Index at = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      t.accumulate(ids[k], Matrix<Scalar>(g.middleCols(at, extents[k])));
      at += extents[k];
    }
  });
}

// Row-wise softmax. Columns where keep[j] is false get probability zero;
// every row must keep at least one column.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a, const std::vector<bool>* keep = nullptr) {
  const Matrix<Scalar>& z = a.value();
  if (keep != nullptr) {
    assert(static_cast<Eigen::Index>(keep->size()) == z.cols());
    assert(std::find(keep->begin(), keep->end(), true) != keep->end());
  }
  Matrix<Scalar> p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Scalar zmax = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (keep == nullptr || (*keep)[j]) zmax = std::max(zmax, z(i, j));
    }
    Scalar denom = Scalar(0);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (keep == nullptr || (*keep)[j]) {
        p(i, j) = std::exp(z(i, j) - zmax);
        denom += p(i, j);
      } else {
        p(i, j) = Scalar(0);
      }
    }
    p.row(i) /= denom;
  }
  auto bp = [ia = a.id, p](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> gz(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      Scalar dot = g.row(i).cwiseProduct(p.row(i)).sum();
      gz.row(i) = p.row(i).cwiseProduct(g.row(i) - Matrix<Scalar>::Constant(1, p.cols(), dot));
    }
    t.accumulate(ia, gz);
  };
  return a.tape->emplace(std::move(p), std::move(bp));
}

// log(sum_j exp(a_0j)) of a [1 x n] row.
template <typename Scalar>
Var<Scalar> logsumexp_row(Var<Scalar> a) {
  assert(a.rows() == 1);
  const Matrix<Scalar>& z = a.value();
  Scalar zmax = z.maxCoeff();
  Scalar lse = zmax + std::log((z.array() - zmax).exp().sum());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = lse;
  return a.tape->emplace(std::move(out), [ia = a.id, lse](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> p = (t.value(ia).array() - lse).exp();
    t.accumulate(ia, Matrix<Scalar>(p * g(0, 0)));
  });
}

// Per-row layer normalization with learnable [1 x H] gain and bias.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> a, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-5)) {
  Tape<Scalar>& t = *a.tape;
  const Matrix<Scalar>& x = a.value();
  const Eigen::Index n = x.cols();
  Matrix<Scalar> xhat(x.rows(), n);
  Matrix<Scalar> inv_std(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Scalar mu = x.row(i).mean();
    Scalar var = (x.row(i).array() - mu).square().mean();
    Scalar is = Scalar(1) / std::sqrt(var + eps);
    inv_std(i, 0) = is;
    xhat.row(i) = (x.row(i).array() - mu) * is;
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                       bias.value().row(0).array();
  return t.emplace(std::move(out),
                   [ia = a.id, ig = gain.id, ib = bias.id, xhat, inv_std, n](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                     const Matrix<Scalar>& gm = t.value(ig);
                     Matrix<Scalar> gx(xhat.rows(), n);
                     for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                       Eigen::Array<Scalar, 1, Eigen::Dynamic> gy = g.row(i).array() * gm.row(0).array();
                       Scalar mean_gy = gy.mean();
                       Scalar mean_gy_xhat = (gy * xhat.row(i).array()).mean();
                       gx.row(i) = ((gy - mean_gy) - xhat.row(i).array() * mean_gy_xhat) * inv_std(i, 0);
                     }
                     t.accumulate(ia, gx);
                     t.accumulate(ig, Matrix<Scalar>(g.cwiseProduct(xhat).colwise().sum()));
                     t.accumulate(ib, Matrix<Scalar>(g.colwise().sum()));
                   });
}

// Frobenius norm as a 1x1 node. Guarded: zero input yields zero gradient.
template <typename Scalar>
Var<Scalar> frobenius_norm(Var<Scalar> a) {
  Scalar n = a.value().norm();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = n;
  return a.tape->emplace(std::move(out), [ia = a.id, n](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (n <= Scalar(0)) return;
    t.accumulate(ia, Matrix<Scalar>(t.value(ia) * (g(0, 0) / n)));
  });
}

template <typename Scalar>
Var<Scalar> sum_squares(Var<Scalar> a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape->emplace(std::move(out), [ia = a.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, Matrix<Scalar>(t.value(ia) * (Scalar(2) * g(0, 0))));
  });
}

// ---- 1x1 helpers ----------------------------------------------------------

template <typename Scalar>
Var<Scalar> mul11(Var<Scalar> a, Var<Scalar> b) {
  return hadamard(a, b);
}

template <typename Scalar>
Var<Scalar> div11(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  assert(a.value().size() == 1 && b.value().size() == 1);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.scalar() / b.scalar();
  return t.emplace(std::move(out), [ia = a.id, ib = b.id](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Scalar av = t.value(ia)(0, 0), bv = t.value(ib)(0, 0);
    Matrix<Scalar> ga(1, 1), gb(1, 1);
    ga(0, 0) = g(0, 0) / bv;
    gb(0, 0) = -g(0, 0) * av / (bv * bv);
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

// cos(a, b) for two row vectors. Throws if either norm falls below `tiny`.
template <typename Scalar>
Var<Scalar> cosine(Var<Scalar> a, Var<Scalar> b, Scalar tiny = Scalar(1e-12)) {
  if (a.value().norm() < tiny || b.value().norm() < tiny) {
    throw std::domain_error("ZeroVector: cosine of a near-zero vector");
  }
  Var<Scalar> d = sum_all(hadamard(a, b));
  Var<Scalar> nn = mul11(frobenius_norm(a), frobenius_norm(b));
  return div11(d, nn);
}

// Mean per-dimension population variance across the rows of a [K x H] stack.
template <typename Scalar>
Var<Scalar> mean_row_variance(Var<Scalar> stacked) {
  Tape<Scalar>& t = *stacked.tape;
  const Eigen::Index k = stacked.rows();
  Matrix<Scalar> avg_row = Matrix<Scalar>::Constant(1, k, Scalar(1) / static_cast<Scalar>(k));
  Var<Scalar> mean = matmul(t.constant(avg_row), stacked);            // [1 x H]
  Var<Scalar> centered = sub(stacked, matmul(t.constant(Matrix<Scalar>::Ones(k, 1)), mean));
  return mean_all(hadamard(centered, centered));
}

template <typename Scalar>
bool all_finite(const Matrix<Scalar>& m) {
  return m.allFinite();
}

}  // namespace sdb::ad
