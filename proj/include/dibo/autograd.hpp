#pragma once

// Tensor-level reverse-mode differentiation over 2-D matrices.
//
// A Tape records each op's output and a closure that pushes the output
// gradient back to its inputs. Ops are the handful a small transformer and
// the masked-reconstruction / RL objectives need. Parameters enter as
// external leaves (no copy); their gradients are read back after backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "dibo/error.hpp"

namespace dibo {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  int id = -1;
};

template <class T>
class Tape {
 public:
  explicit Tape(bool record_grad = true) : record_(record_grad) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  /// Parameter leaf referring to caller-owned storage that must outlive the tape.
  Var param(const Mat<T>& value) {
    Node n;
    n.external = &value;
    n.needs_grad = record_;
    return push(std::move(n));
  }

  /// Constant leaf (no gradient).
  Var constant(Mat<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  const Mat<T>& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.external ? *n.external : n.value;
  }

  /// Gradient of the last backward() target w.r.t. `v`; zero if it had none.
  Mat<T> grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) return Mat<T>::Zero(value(v).rows(), value(v).cols());
    return n.grad;
  }

  bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad.size() != 0; }
  const Mat<T>& grad_ref(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  T scalar(Var v) const { return value(v)(0, 0); }

  /// Reverse sweep from a 1x1 output.
  void backward(Var loss) {
    require(record_, ErrorKind::numeric, "backward() on a tape that does not record gradients");
    require(value(loss).size() == 1, ErrorKind::shape, "backward() target must be a scalar");
    acc(loss) = Mat<T>::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
    }
  }

  // --------------------------------------------------------------------------
  // ops

  /// Rows of `table` selected by `ids`.
  Var embedding(Var table, const std::vector<int>& ids) {
    const Mat<T>& W = value(table);
    Mat<T> out(static_cast<Eigen::Index>(ids.size()), W.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      require(ids[r] >= 0 && ids[r] < W.rows(), ErrorKind::shape, "embedding id out of range");
      out.row(static_cast<Eigen::Index>(r)) = W.row(ids[r]);
    }
    return op(std::move(out), {table}, [table, ids](Tape& t, const Mat<T>& g) {
      if (!t.wants(table)) return;
      Mat<T>& gw = t.acc(table);
      for (std::size_t r = 0; r < ids.size(); ++r) gw.row(ids[r]) += g.row(static_cast<Eigen::Index>(r));
    });
  }

  /// First `rows` rows of a parameter (positional embeddings).
  Var take_rows(Var table, Eigen::Index first, Eigen::Index rows) {
    const Mat<T>& W = value(table);
    require(first >= 0 && first + rows <= W.rows(), ErrorKind::shape, "sequence longer than positional table");
    return op(W.middleRows(first, rows), {table}, [table, first, rows](Tape& t, const Mat<T>& g) {
      if (t.wants(table)) t.acc(table).middleRows(first, rows) += g;
    });
  }

  /// Rows of `x` at `rows`, in the given order.
  Var gather_rows(Var x, const std::vector<std::size_t>& rows) {
    const Mat<T>& X = value(x);
    Mat<T> out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(rows[r]));
    return op(std::move(out), {x}, [x, rows](Tape& t, const Mat<T>& g) {
      if (!t.wants(x)) return;
      Mat<T>& gx = t.acc(x);
      for (std::size_t r = 0; r < rows.size(); ++r) gx.row(static_cast<Eigen::Index>(rows[r])) += g.row(static_cast<Eigen::Index>(r));
    });
  }

  Var add(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), ErrorKind::shape,
            "add: shape mismatch");
    return op(value(a) + value(b), {a, b}, [a, b](Tape& t, const Mat<T>& g) {
      if (t.wants(a)) t.acc(a) += g;
      if (t.wants(b)) t.acc(b) += g;
    });
  }

  /// x + bias broadcast over rows; bias is 1 x C.
  Var add_bias(Var x, Var bias) {
    require(value(bias).rows() == 1 && value(bias).cols() == value(x).cols(), ErrorKind::shape, "add_bias: shape");
    Mat<T> out = value(x);
    out.rowwise() += value(bias).row(0);
    return op(std::move(out), {x, bias}, [x, bias](Tape& t, const Mat<T>& g) {
      if (t.wants(x)) t.acc(x) += g;
      if (t.wants(bias)) t.acc(bias) += g.colwise().sum();
    });
  }

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), ErrorKind::shape, "matmul: inner dimension mismatch");
    Mat<T> out(value(a).rows(), value(b).cols());
    out.noalias() = value(a) * value(b);
    return op(std::move(out), {a, b}, [a, b](Tape& t, const Mat<T>& g) {
      if (t.wants(a)) t.acc(a).noalias() += g * t.value(b).transpose();
      if (t.wants(b)) t.acc(b).noalias() += t.value(a).transpose() * g;
    });
  }

  Var scale(Var x, T c) {
    return op(value(x) * c, {x}, [x, c](Tape& t, const Mat<T>& g) {
      if (t.wants(x)) t.acc(x) += g * c;
    });
  }

  /// Row-wise layer normalization with gain and bias (1 x C each).
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5)) {
    const Mat<T>& X = value(x);
    const Eigen::Index R = X.rows(), C = X.cols();
    Mat<T> xhat(R, C);
    std::vector<T> rstd(static_cast<std::size_t>(R));
    for (Eigen::Index r = 0; r < R; ++r) {
      const T mean = X.row(r).mean();
      const T var = (X.row(r).array() - mean).square().mean();
      const T rs = T(1) / std::sqrt(var + eps);
      rstd[static_cast<std::size_t>(r)] = rs;
      xhat.row(r) = (X.row(r).array() - mean) * rs;
    }
    Mat<T> out = (xhat.array().rowwise() * value(gain).row(0).array()).matrix();
    out.rowwise() += value(bias).row(0);
    return op(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, rstd](Tape& t, const Mat<T>& g) {
      if (t.wants(gain)) t.acc(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
      if (t.wants(bias)) t.acc(bias) += g.colwise().sum();
      if (!t.wants(x)) return;
      const auto& gam = t.value(gain);
      Mat<T>& gx = t.acc(x);
      const T inv_c = T(1) / static_cast<T>(g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const auto dxhat = (g.row(r).array() * gam.row(0).array()).eval();
        const T m1 = dxhat.sum() * inv_c;
        const T m2 = (dxhat * xhat.row(r).array()).sum() * inv_c;
        gx.row(r).array() += rstd[static_cast<std::size_t>(r)] * (dxhat - m1 - xhat.row(r).array() * m2);
      }
    });
  }

  /// tanh-approximated GELU.
  Var gelu(Var x) {
    const Mat<T>& X = value(x);
    const T k = T(0.7978845608028654);  // sqrt(2 / pi)
    const T c = T(0.044715);
    Mat<T> th = (k * (X.array() + c * X.array().cube())).tanh().matrix();
    Mat<T> out = (T(0.5) * X.array() * (T(1) + th.array())).matrix();
    return op(std::move(out), {x}, [x, th, k, c](Tape& t, const Mat<T>& g) {
      if (!t.wants(x)) return;
      const auto& X = t.value(x);
      const auto dydx = T(0.5) * (T(1) + th.array()) +
                        T(0.5) * X.array() * (T(1) - th.array().square()) * k *
                            (T(1) + T(3) * c * X.array().square());
      t.acc(x).array() += g.array() * dydx;
    });
  }

  /// Multi-head scaled dot-product attention on packed q, k, v (T x d).
  /// A key j is visible to query i when key_valid[j] and, in causal mode, j <= i.
  Var attention(Var q, Var k, Var v, int heads, const std::vector<unsigned char>& key_valid, bool causal) {
    const Mat<T>& Q = value(q);
    const Mat<T>& K = value(k);
    const Mat<T>& V = value(v);
    const Eigen::Index n = Q.rows(), d = Q.cols();
    require(d % heads == 0, ErrorKind::shape, "attention: d_model not divisible by heads");
    require(static_cast<Eigen::Index>(key_valid.size()) == n, ErrorKind::shape, "attention: mask length");
    const Eigen::Index dh = d / heads;
    const bool all_valid = std::all_of(key_valid.begin(), key_valid.end(), [](unsigned char c) { return c != 0; });
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> out(n, d);
    auto probs = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = h * dh;
      Mat<T> S(n, n);
      S.noalias() = Q.middleCols(c0, dh) * K.middleCols(c0, dh).transpose();
      S *= scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        // Visible keys are a prefix [0, limit) minus pad keys; everything
        // else gets an exact zero weight.
        const Eigen::Index limit = causal ? i + 1 : n;
        auto row = S.row(i);
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j < limit; ++j)
          if (key_valid[static_cast<std::size_t>(j)]) mx = std::max(mx, row(j));
        if (mx == -std::numeric_limits<T>::infinity()) {
          row.setZero();
          continue;
        }
        row.head(limit) = (row.head(limit).array() - mx).exp();
        row.tail(n - limit).setZero();
        if (!all_valid)
          for (Eigen::Index j = 0; j < limit; ++j)
            if (!key_valid[static_cast<std::size_t>(j)]) row(j) = T(0);
        row /= row.sum();
      }
      out.middleCols(c0, dh).noalias() = S * V.middleCols(c0, dh);
      (*probs)[static_cast<std::size_t>(h)] = std::move(S);
    }
    if (!record_) probs.reset();
    return op(std::move(out), {q, k, v}, [q, k, v, heads, dh, scale, probs](Tape& t, const Mat<T>& g) {
      const auto& Q = t.value(q);
      const auto& K = t.value(k);
      const auto& V = t.value(v);
      const Eigen::Index n = Q.rows();
      const bool wq = t.wants(q), wk = t.wants(k), wv = t.wants(v);
      for (int h = 0; h < heads; ++h) {
        const Eigen::Index c0 = h * dh;
        const Mat<T>& P = (*probs)[static_cast<std::size_t>(h)];
        const auto gO = g.middleCols(c0, dh);
        if (wv) t.acc(v).middleCols(c0, dh).noalias() += P.transpose() * gO;
        if (!wq && !wk) continue;
        Mat<T> dP(n, n);
        dP.noalias() = gO * V.middleCols(c0, dh).transpose();
        Mat<T> dS = P.cwiseProduct(dP);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dS.rowwise().sum();
        dS.noalias() -= (P.array().colwise() * rowdot.array()).matrix();
        dS *= scale;
        if (wq) t.acc(q).middleCols(c0, dh).noalias() += dS * K.middleCols(c0, dh);
        if (wk) t.acc(k).middleCols(c0, dh).noalias() += dS.transpose() * Q.middleCols(c0, dh);
      }
    });
  }

  /// Per-row cross-entropy -log softmax(logits)[target] as an R x 1 column.
  Var cross_entropy(Var logits, const std::vector<int>& targets) {
    auto [P, out] = softmax_rows(logits, targets, Gather::neg_log_prob);
    return op(std::move(out), {logits}, [logits, targets, P = std::move(P)](Tape& t, const Mat<T>& g) {
      if (!t.wants(logits)) return;
      Mat<T>& gl = t.acc(logits);
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        gl.row(r) += g(r, 0) * P.row(r);
        gl(r, targets[static_cast<std::size_t>(r)]) -= g(r, 0);
      }
    });
  }

  /// Per-row log softmax(logits)[target].
  Var log_prob(Var logits, const std::vector<int>& targets) {
    auto [P, out] = softmax_rows(logits, targets, Gather::log_prob);
    return op(std::move(out), {logits}, [logits, targets, P = std::move(P)](Tape& t, const Mat<T>& g) {
      if (!t.wants(logits)) return;
      Mat<T>& gl = t.acc(logits);
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        gl.row(r) -= g(r, 0) * P.row(r);
        gl(r, targets[static_cast<std::size_t>(r)]) += g(r, 0);
      }
    });
  }

  /// Per-row softmax(logits)[target].
  Var prob(Var logits, const std::vector<int>& targets) {
    auto [P, out] = softmax_rows(logits, targets, Gather::prob);
    return op(std::move(out), {logits}, [logits, targets, P = std::move(P)](Tape& t, const Mat<T>& g) {
      if (!t.wants(logits)) return;
      Mat<T>& gl = t.acc(logits);
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        const int tgt = targets[static_cast<std::size_t>(r)];
        const T pt = P(r, tgt);
        gl.row(r) -= g(r, 0) * pt * P.row(r);
        gl(r, tgt) += g(r, 0) * pt;
      }
    });
  }

  /// sum_i w_i x_i over an R x 1 column (masked / weighted sums and means).
  Var weighted_sum(Var x, const std::vector<T>& weights) {
    const Mat<T>& X = value(x);
    require(X.cols() == 1 && static_cast<std::size_t>(X.rows()) == weights.size(), ErrorKind::shape,
            "weighted_sum: expects R x 1 input and R weights");
    T s = 0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) s += weights[static_cast<std::size_t>(r)] * X(r, 0);
    Mat<T> out(1, 1);
    out(0, 0) = s;
    return op(std::move(out), {x}, [x, weights](Tape& t, const Mat<T>& g) {
      if (!t.wants(x)) return;
      Mat<T>& gx = t.acc(x);
      for (Eigen::Index r = 0; r < gx.rows(); ++r) gx(r, 0) += g(0, 0) * weights[static_cast<std::size_t>(r)];
    });
  }

 private:
  struct Node {
    Mat<T> value;
    const Mat<T>* external = nullptr;
    Mat<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&, const Mat<T>&)> backward;
  };

  enum class Gather { neg_log_prob, log_prob, prob };

  std::pair<Mat<T>, Mat<T>> softmax_rows(Var logits, const std::vector<int>& targets, Gather what) const {
    const Mat<T>& Z = value(logits);
    require(static_cast<std::size_t>(Z.rows()) == targets.size(), ErrorKind::shape, "softmax: target count");
    Mat<T> P(Z.rows(), Z.cols());
    Mat<T> out(Z.rows(), 1);
    for (Eigen::Index r = 0; r < Z.rows(); ++r) {
      const int tgt = targets[static_cast<std::size_t>(r)];
      require(tgt >= 0 && tgt < Z.cols(), ErrorKind::shape, "softmax: target out of range");
      const T mx = Z.row(r).maxCoeff();
      P.row(r) = (Z.row(r).array() - mx).exp();
      const T sum = P.row(r).sum();
      P.row(r) /= sum;
      const T lse = mx + std::log(sum);
      switch (what) {
        case Gather::neg_log_prob: out(r, 0) = lse - Z(r, tgt); break;
        case Gather::log_prob: out(r, 0) = Z(r, tgt) - lse; break;
        case Gather::prob: out(r, 0) = P(r, tgt); break;
      }
    }
    return {std::move(P), std::move(out)};
  }

  bool wants(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  Mat<T>& acc(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) {
      const Mat<T>& val = n.external ? *n.external : n.value;
      n.grad = Mat<T>::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  template <class F>
  Var op(Mat<T> out, std::initializer_list<Var> inputs, F&& backward) {
    Node n;
    n.value = std::move(out);
    if (record_) {
      for (Var in : inputs) n.needs_grad = n.needs_grad || wants(in);
      if (n.needs_grad) n.backward = std::forward<F>(backward);
    }
    return push(std::move(n));
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace dibo
