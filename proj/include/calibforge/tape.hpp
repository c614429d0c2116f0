#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace calibforge {

inline constexpr double kLogClamp = 1e-12;

/// Raised when a numeric computation leaves the finite range; callers that
/// own an optimization loop translate it into their divergence diagnostics.
struct NonFiniteValue : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Handle to a node on a Tape.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode gradient tape. Nodes are appended in topological order;
/// backward() walks them once in reverse. Single-threaded per graph.
class Tape {
 public:
  Var input(Tensor value) { return push(std::move(value), nullptr); }

  /// Leaf whose gradient will be read out after backward().
  Var param(Tensor value) { return push(std::move(value), nullptr); }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  const Tensor& grad(Var v) const { return nodes_[check(v)].grad; }

  // ---- primitives ----

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows())
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(A) + " x " + shape_str(B));
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out = Tensor::zeros({m, n});
    matmul_into(A.data.data(), B.data.data(), out.data.data(), m, k, n, false, false);
    return push(std::move(out), [a, b, m, k, n](Tape& t, const Tensor& g) {
      // dA += g * B^T ; dB += A^T * g
      matmul_into(g.data.data(), t.value_of(b).data.data(), t.grad_of(a).data.data(), m, n, k, false, true);
      matmul_into(t.value_of(a).data.data(), g.data.data(), t.grad_of(b).data.data(), k, m, n, true, false);
    });
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      auto& db = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) db.data[i] -= g.data[i];
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      auto& db = t.grad_of(b);
      const Tensor& A = t.value_of(a);
      const Tensor& B2 = t.value_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da.data[i] += g.data[i] * B2.data[i];
        db.data[i] += g.data[i] * A.data[i];
      }
    });
  }

  /// Elementwise multiply by a constant tensor (no gradient to the constant).
  Var mul_const(Var a, Tensor c) {
    if (!value(a).same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= c.data[i];
    auto cc = std::make_shared<Tensor>(std::move(c));
    return push(std::move(out), [a, cc](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * cc->data[i];
    });
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v *= c;
    return push(std::move(out), [a, c](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * c;
    });
  }

  Var add_scalar(Var a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v += c;
    return push(std::move(out), [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
  }

  /// Row-wise bias add: a is [m x n], bias is [n] (or [1 x n]).
  Var add_rowvec(Var a, Var bias) {
    const Tensor& A = value(a);
    const Tensor& B = value(bias);
    if (B.size() != A.cols()) throw std::invalid_argument("add_rowvec: bias length mismatch");
    Tensor out = A;
    const std::size_t m = A.rows(), n = A.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += B.data[j];
    return push(std::move(out), [a, bias, m, n](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      auto& db = t.grad_of(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db.data[j] += g.data[i * n + j];
    });
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), [a](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      const Tensor& A = t.value_of(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (A.data[i] > 0.0) da.data[i] += g.data[i];
    });
  }

  /// Natural log with the argument clamped at kLogClamp. Gradient is zero
  /// inside the clamped region.
  Var log(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::log(v > kLogClamp ? v : kLogClamp);
    return push(std::move(out), [a](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      const Tensor& A = t.value_of(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (A.data[i] > kLogClamp) da.data[i] += g.data[i] / A.data[i];
    });
  }

  Var exp(Var a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::exp(v);
    auto y = std::make_shared<Tensor>(out);
    return push(std::move(out), [a, y](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) da.data[i] += g.data[i] * y->data[i];
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : value(a).data) s += v;
    return push(Tensor::scalar(s), [a](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (double& v : da.data) v += g.data[0];
    });
  }

  Var mean(Var a) {
    const double n = static_cast<double>(value(a).size());
    double s = 0.0;
    for (double v : value(a).data) s += v;
    return push(Tensor::scalar(s / n), [a, n](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (double& v : da.data) v += g.data[0] / n;
    });
  }

  /// Row sums: [m x n] -> [m x 1].
  Var row_sum(Var a) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::zeros({m, 1});
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += A.data[i * n + j];
      out.data[i] = s;
    }
    return push(std::move(out), [a, m, n](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da.data[i * n + j] += g.data[i];
    });
  }

  /// Per-row gather: picks a[i, idx[i]] into an [m x 1] column.
  Var row_gather(Var a, const std::vector<int>& idx) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    if (idx.size() != m) throw std::invalid_argument("row_gather: index length mismatch");
    Tensor out = Tensor::zeros({m, 1});
    for (std::size_t i = 0; i < m; ++i) {
      if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n)
        throw std::out_of_range("row_gather: index out of range");
      out.data[i] = A.data[i * n + idx[i]];
    }
    auto ids = std::make_shared<std::vector<int>>(idx);
    return push(std::move(out), [a, ids, n](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (std::size_t i = 0; i < ids->size(); ++i) da.data[i * n + (*ids)[i]] += g.data[i];
    });
  }

  /// Row-wise softmax with max-subtraction; fused backward.
  Var softmax(Var a) {
    const Tensor& A = value(a);
    if (!A.all_finite()) throw NonFiniteValue("softmax: non-finite input");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double mx = A.data[i * n];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, A.data[i * n + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        out.data[i * n + j] = std::exp(A.data[i * n + j] - mx);
        z += out.data[i * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] /= z;
    }
    auto y = std::make_shared<Tensor>(out);
    return push(std::move(out), [a, y, m, n](Tape& t, const Tensor& g) {
      auto& da = t.grad_of(a);
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g.data[i * n + j] * y->data[i * n + j];
        for (std::size_t j = 0; j < n; ++j) da.data[i * n + j] += y->data[i * n + j] * (g.data[i * n + j] - dot);
      }
    });
  }

  /// Seeds the scalar loss node with gradient 1 and propagates to every
  /// reachable leaf. Unreachable gradients stay zero.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    for (auto& nd : nodes_) {
      nd.grad = Tensor::zeros(nd.value.shape);
    }
    nodes_[loss.idx].grad.data[0] = 1.0;
    for (int i = loss.idx; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].grad);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  using BackFn = std::function<void(Tape&, const Tensor&)>;

  struct Node {
    Tensor value;
    Tensor grad;
    BackFn back;
  };

  std::vector<Node> nodes_;

  Var push(Tensor value, BackFn back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  int check(Var v) const {
    if (v.idx < 0 || static_cast<std::size_t>(v.idx) >= nodes_.size())
      throw std::invalid_argument("Tape: invalid node handle");
    return v.idx;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(value(a)) + " vs " +
                                  shape_str(value(b)));
  }

  const Tensor& value_of(Var v) { return nodes_[v.idx].value; }
  Tensor& grad_of(Var v) { return nodes_[v.idx].grad; }

  void accumulate(Var v, const Tensor& g) {
    auto& d = grad_of(v);
    for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
  }

  // C = C + op(A) * op(B); transA/transB select A^T/B^T. Dimensions given as
  // the logical (post-transpose) m x k x n.
  static void matmul_into(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n,
                          bool transA, bool transB) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double a = transA ? A[p * m + i] : A[i * k + p];
        if (a == 0.0) continue;
        const double* brow = transB ? nullptr : B + p * n;
        double* crow = C + i * n;
        if (!transB) {
          for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) crow[j] += a * B[j * k + p];
        }
      }
    }
  }
};

}  // namespace calibforge
