/* Copyright 2026 The fedrec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedrec/numkit/tensor.hpp"

namespace fedrec::numkit {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// index order is a topological order and backward() walks it in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  /// Differentiable leaf that aliases caller-owned storage (must outlive the tape).
  Var leaf(const Tensor& t) {
    Node n;
    n.external = &t;
    n.needs_grad = record_;
    return push(std::move(n));
  }

  /// Differentiable leaf owning its value.
  Var variable(Tensor t) {
    Node n;
    n.owned = std::move(t);
    n.needs_grad = record_;
    return push(std::move(n));
  }

  /// Non-differentiable input.
  Var constant(Tensor t) {
    Node n;
    n.owned = std::move(t);
    return push(std::move(n));
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Adjoint buffer; zero-shaped-like-value if nothing flowed into the node.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(value(v.id).shape(), 0.0);
    return n.grad;
  }

  /// Accumulation target for a parent's adjoint, allocated on first touch.
  Tensor& adjoint(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
    return n.grad;
  }

  bool has_adjoint(std::size_t id) const { return !nodes_[id].grad.empty(); }

  Var record(Tensor value, std::vector<std::size_t> parents, Backward fn) {
    Node n;
    n.owned = std::move(value);
    if (record_) {
      for (auto p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
      if (n.needs_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(fn);
      }
    }
    return push(std::move(n));
  }

  void backward(Var loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward expects a scalar loss, got " + shape_string(value(loss.id).shape()));
    }
    adjoint(loss.id)[0] += 1.0;
    ++backward_passes_;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_passes() const { return backward_passes_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
    std::vector<std::size_t> parents;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  bool record_;
  std::size_t backward_passes_ = 0;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {
inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("vars live on different tapes");
}
inline void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}
}  // namespace detail

// ---- differentiable primitives --------------------------------------------

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  Tensor C;
  gemm(A, false, B, false, C);
  return a.tape->record(std::move(C), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    if (t.needs_grad(ai)) gemm(g, false, t.value(bi), true, t.adjoint(ai), true);
    if (t.needs_grad(bi)) gemm(t.value(ai), true, g, false, t.adjoint(bi), true);
  });
}

/// a · bᵀ
inline Var matmul_nt(Var a, Var b) {
  detail::same_tape(a, b);
  Tensor C;
  gemm(a.value(), false, b.value(), true, C);
  return a.tape->record(std::move(C), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    if (t.needs_grad(ai)) gemm(g, false, t.value(bi), false, t.adjoint(ai), true);
    if (t.needs_grad(bi)) gemm(g, true, t.value(ai), false, t.adjoint(bi), true);
  });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  Tensor y = a.value() + b.value();
  return a.tape->record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    if (t.needs_grad(ai)) detail::add_into(t.adjoint(ai), g);
    if (t.needs_grad(bi)) detail::add_into(t.adjoint(bi), g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  Tensor y = a.value() - b.value();
  return a.tape->record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    if (t.needs_grad(ai)) detail::add_into(t.adjoint(ai), g);
    if (t.needs_grad(bi)) {
      Tensor& d = t.adjoint(bi);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.size() != B.size()) throw ShapeError("mul: " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  Tensor y = A;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= B[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    if (t.needs_grad(ai)) {
      Tensor& d = t.adjoint(ai);
      const Tensor& B = t.value(bi);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * B[i];
    }
    if (t.needs_grad(bi)) {
      Tensor& d = t.adjoint(bi);
      const Tensor& A = t.value(ai);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * A[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor y = s * a.value();
  return a.tape->record(std::move(y), {a.id}, [ai = a.id, s](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    Tensor& d = t.adjoint(ai);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
  });
}

/// x (r×n) + b (1×n or n), broadcast over rows.
inline Var add_bias(Var x, Var b) {
  detail::same_tape(x, b);
  const Tensor& X = x.value();
  const Tensor& B = b.value();
  const std::size_t n = X.cols();
  if (B.size() != n) {
    throw ShapeError("add_bias: bias " + shape_string(B.shape()) + " does not fit " + shape_string(X.shape()));
  }
  Tensor y = X;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) y.ptr()[r * n + j] += B[j];
  return x.tape->record(std::move(y), {x.id, b.id}, [xi = x.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    if (t.needs_grad(xi)) detail::add_into(t.adjoint(xi), g);
    if (t.needs_grad(bi)) {
      Tensor& d = t.adjoint(bi);
      const std::size_t n = d.size();
      for (std::size_t r = 0; r < g.size() / n; ++r)
        for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j];
    }
  });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
inline Var relu(Var x) {
  Tensor y = relu(x.value());
  return x.tape->record(std::move(y), {x.id}, [xi = x.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& X = t.value(xi);
    Tensor& d = t.adjoint(xi);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (X[i] > 0.0) d[i] += g[i];
  });
}

inline Var softmax_rows(Var x) {
  Tensor y = softmax_rows(x.value());
  return x.tape->record(std::move(y), {x.id}, [xi = x.id](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& Y = t.value(self);
    Tensor& d = t.adjoint(xi);
    const std::size_t n = Y.cols();
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      const double* yr = Y.ptr() + r * n;
      const double* gr = g.ptr() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      double* dr = d.ptr() + r * n;
      for (std::size_t j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-12;

/// Per-row normalization to zero mean, unit variance (no affine part).
inline Var layer_norm_rows(Var x, double eps = kLayerNormEps) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  Tensor y = X;
  std::vector<double> inv_std(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double* row = y.ptr() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) row[j] = (row[j] - mean) * inv_std[r];
  }
  return x.tape->record(std::move(y), {x.id}, [xi = x.id, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& Y = t.value(self);
    Tensor& d = t.adjoint(xi);
    const std::size_t n = Y.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      const double* yr = Y.ptr() + r * n;
      const double* gr = g.ptr() + r * n;
      double gm = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        gm += gr[j];
        gy += gr[j] * yr[j];
      }
      gm *= inv_n;
      gy *= inv_n;
      double* dr = d.ptr() + r * n;
      for (std::size_t j = 0; j < n; ++j) dr[j] += inv_std[r] * (gr[j] - gm - yr[j] * gy);
    }
  });
}

inline Var reshape(Var x, Shape s) {
  Tensor y = x.value().reshaped(std::move(s));
  return x.tape->record(std::move(y), {x.id}, [xi = x.id](Tape& t, std::size_t self) {
    detail::add_into(t.adjoint(xi), t.adjoint(self));
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Tensor y = Tensor::matrix(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < v.cols(); ++j) y(r, off + j) = v(r, j);
    off += v.cols();
  }
  return parts.front().tape->record(std::move(y), ids, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t c = t.value(id).cols();
      if (t.needs_grad(id)) {
        Tensor& d = t.adjoint(id);
        for (std::size_t r = 0; r < d.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) d(r, j) += g(r, off + j);
      }
      off += c;
    }
  });
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  if (begin >= end || end > X.cols()) throw ShapeError("slice_cols: bad range");
  Tensor y = Tensor::matrix(X.rows(), end - begin);
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t j = begin; j < end; ++j) y(r, j - begin) = X(r, j);
  return x.tape->record(std::move(y), {x.id}, [xi = x.id, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    Tensor& d = t.adjoint(xi);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < g.cols(); ++j) d(r, begin + j) += g(r, j);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
    ids.push_back(p.id);
  }
  Tensor y = Tensor::matrix(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& v = p.value().data();
    std::copy(v.begin(), v.end(), y.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return parts.front().tape->record(std::move(y), ids, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.needs_grad(id)) {
        Tensor& d = t.adjoint(id);
        for (std::size_t i = 0; i < n; ++i) d[i] += g[off + i];
      }
      off += n;
    }
  });
}

/// Row gather; repeated indices are allowed and their adjoints summed.
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  Tensor y = Tensor::matrix(index.size(), n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= X.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(X.ptr() + index[r] * n, n, y.ptr() + r * n);
  }
  return x.tape->record(std::move(y), {x.id}, [xi = x.id, index = std::move(index)](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    Tensor& d = t.adjoint(xi);
    const std::size_t n = d.cols();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) d.ptr()[index[r] * n + j] += g.ptr()[r * n + j];
  });
}

/// Multiplies row r by w[r] (w is a constant).
inline Var scale_rows(Var x, std::vector<double> w) {
  const Tensor& X = x.value();
  if (w.size() != X.rows()) throw ShapeError("scale_rows: weight count mismatch");
  Tensor y = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) y.ptr()[r * n + j] *= w[r];
  return x.tape->record(std::move(y), {x.id}, [xi = x.id, w = std::move(w)](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    Tensor& d = t.adjoint(xi);
    const std::size_t n = d.cols();
    for (std::size_t r = 0; r < w.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) d.ptr()[r * n + j] += w[r] * g.ptr()[r * n + j];
  });
}

/// Block-diagonal q·kᵀ: q is (G·sq × p), k is (G·sk × p), output (G·sq × sk).
inline Var group_matmul_nt(Var q, Var k, std::size_t groups) {
  detail::same_tape(q, k);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  if (Q.cols() != K.cols()) {
    throw ShapeError("group_matmul_nt: token dims differ " + shape_string(Q.shape()) + " vs " + shape_string(K.shape()));
  }
  if (groups == 0 || Q.rows() % groups || K.rows() % groups) throw ShapeError("group_matmul_nt: rows not divisible by groups");
  const std::size_t sq = Q.rows() / groups, sk = K.rows() / groups, p = Q.cols();
  Tensor S = Tensor::matrix(Q.rows(), sk);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < sq; ++i) {
      const double* qi = Q.ptr() + (g * sq + i) * p;
      for (std::size_t j = 0; j < sk; ++j) {
        const double* kj = K.ptr() + (g * sk + j) * p;
        double s = 0.0;
        for (std::size_t c = 0; c < p; ++c) s += qi[c] * kj[c];
        S.ptr()[(g * sq + i) * sk + j] = s;
      }
    }
  return q.tape->record(std::move(S), {q.id, k.id}, [qi_ = q.id, ki_ = k.id, groups, sq, sk, p](Tape& t, std::size_t self) {
    const Tensor& G = t.adjoint(self);
    const Tensor& Q = t.value(qi_);
    const Tensor& K = t.value(ki_);
    const bool gq = t.needs_grad(qi_), gk = t.needs_grad(ki_);
    double* dQ = gq ? t.adjoint(qi_).ptr() : nullptr;
    double* dK = gk ? t.adjoint(ki_).ptr() : nullptr;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < sq; ++i)
        for (std::size_t j = 0; j < sk; ++j) {
          const double gv = G.ptr()[(g * sq + i) * sk + j];
          if (gv == 0.0) continue;
          const std::size_t qr = (g * sq + i) * p, kr = (g * sk + j) * p;
          if (gq)
            for (std::size_t c = 0; c < p; ++c) dQ[qr + c] += gv * K.ptr()[kr + c];
          if (gk)
            for (std::size_t c = 0; c < p; ++c) dK[kr + c] += gv * Q.ptr()[qr + c];
        }
  });
}

/// Block-diagonal a·v: a is (G·sq × sk), v is (G·sk × p), output (G·sq × p).
inline Var group_matmul(Var a, Var v, std::size_t groups) {
  detail::same_tape(a, v);
  const Tensor& A = a.value();
  const Tensor& V = v.value();
  if (groups == 0 || A.rows() % groups || V.rows() % groups) throw ShapeError("group_matmul: rows not divisible by groups");
  const std::size_t sq = A.rows() / groups, sk = V.rows() / groups, p = V.cols();
  if (A.cols() != sk) throw ShapeError("group_matmul: key count mismatch");
  Tensor O = Tensor::matrix(A.rows(), p);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < sq; ++i) {
      double* o = O.ptr() + (g * sq + i) * p;
      for (std::size_t j = 0; j < sk; ++j) {
        const double w = A.ptr()[(g * sq + i) * sk + j];
        const double* vj = V.ptr() + (g * sk + j) * p;
        for (std::size_t c = 0; c < p; ++c) o[c] += w * vj[c];
      }
    }
  return a.tape->record(std::move(O), {a.id, v.id}, [ai = a.id, vi = v.id, groups, sq, sk, p](Tape& t, std::size_t self) {
    const Tensor& G = t.adjoint(self);
    const Tensor& A = t.value(ai);
    const Tensor& V = t.value(vi);
    const bool ga = t.needs_grad(ai), gv = t.needs_grad(vi);
    double* dA = ga ? t.adjoint(ai).ptr() : nullptr;
    double* dV = gv ? t.adjoint(vi).ptr() : nullptr;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < sq; ++i) {
        const double* gi = G.ptr() + (g * sq + i) * p;
        for (std::size_t j = 0; j < sk; ++j) {
          const std::size_t ar = (g * sq + i) * sk + j, vr = (g * sk + j) * p;
          if (ga) {
            double s = 0.0;
            for (std::size_t c = 0; c < p; ++c) s += gi[c] * V.ptr()[vr + c];
            dA[ar] += s;
          }
          if (gv) {
            const double w = A.ptr()[ar];
            for (std::size_t c = 0; c < p; ++c) dV[vr + c] += w * gi[c];
          }
        }
      }
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor({1}, s), {x.id}, [xi = x.id](Tape& t, std::size_t self) {
    const double g = t.adjoint(self)[0];
    for (double& d : t.adjoint(xi).data()) d += g;
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Mean over rows of −log softmax(logits)[i, label_i].
inline Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& L = logits.value();
  require_matrix(L, "cross_entropy");
  if (labels.size() != L.rows()) throw ShapeError("cross_entropy: label count does not match logits rows");
  const std::size_t c = L.cols();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  Tensor P = softmax_rows(L);
  double loss = 0.0;
  for (std::size_t i = 0; i < L.rows(); ++i) {
    const double* row = L.ptr() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    loss += -(row[labels[i]] - mx - std::log(s));
  }
  loss /= static_cast<double>(L.rows());
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record(Tensor({1}, loss), {logits.id},
                             [li = logits.id, P = std::move(P), lab = std::move(lab)](Tape& t, std::size_t self) {
                               const double g = t.adjoint(self)[0] / static_cast<double>(P.rows());
                               Tensor& d = t.adjoint(li);
                               const std::size_t c = P.cols();
                               for (std::size_t i = 0; i < P.rows(); ++i)
                                 for (std::size_t j = 0; j < c; ++j)
                                   d.ptr()[i * c + j] += g * (P.ptr()[i * c + j] - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
                             });
}

/// Sum of squared entries divided by `denom`.
inline Var squared_norm(Var x, double denom = 1.0) { return scale(sum(mul(x, x)), 1.0 / denom); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace fedrec::numkit
