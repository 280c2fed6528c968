#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
// Ops are coarse (linear, layer norm, fused multi-head attention, fused
// softmax cross-entropy) so the tape stays short and the inner loops are GEMMs.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "symplex/error.hpp"

namespace symplex::ag {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;

  void zeroGrad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
};

template <class S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Matrix<S> m) { return push(std::move(m), false, {}); }

  /// Trainable leaf; gradients accumulate into `p.grad`.
  Var param(Parameter<S>& p) {
    Node n;
    n.extValue = &p.value;
    if (recording_) {
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zeroGrad();
      n.extGrad = &p.grad;
      n.needsGrad = true;
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Read-only leaf bound to a parameter's value, without copying it.
  Var param(const Parameter<S>& p) {
    Node n;
    n.extValue = &p.value;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix<S>& value(Var v) const {
    const auto& n = nodes_[v.id];
    return n.extValue ? *n.extValue : n.value;
  }

  bool needsGrad(Var v) const { return nodes_[v.id].needsGrad; }

  Matrix<S>& grad(Var v) {
    auto& n = nodes_[v.id];
    if (n.extGrad) return *n.extGrad;
    if (n.grad.size() == 0) n.grad.setZero(value(v).rows(), value(v).cols());
    return n.grad;
  }

  void backward(Var loss) {
    if (!recording_) throw Error(Errc::InvalidArgument, "backward on a non-recording tape");
    grad(loss).setOnes();
    for (int id = loss.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (n.backward && n.grad.size() != 0) n.backward();
    }
  }

  // --- ops -----------------------------------------------------------------

  Var matmul(Var a, Var b) {
    Matrix<S> y;
    y.noalias() = value(a) * value(b);
    return push(std::move(y), any(a, b), [this, a, b, out = next()] {
      const auto& g = nodes_[out].grad;
      if (needsGrad(a)) grad(a).noalias() += g * value(b).transpose();
      if (needsGrad(b)) grad(b).noalias() += value(a).transpose() * g;
    });
  }

  /// x W + b, with b a 1 x out row broadcast over rows.
  Var linear(Var x, Var w, Var b) {
    Matrix<S> y;
    y.noalias() = value(x) * value(w);
    y.rowwise() += value(b).row(0);
    return push(std::move(y), any(x, w, b), [this, x, w, b, out = next()] {
      const auto& g = nodes_[out].grad;
      if (needsGrad(x)) grad(x).noalias() += g * value(w).transpose();
      if (needsGrad(w)) grad(w).noalias() += value(x).transpose() * g;
      if (needsGrad(b)) grad(b) += g.colwise().sum();
    });
  }

  Var add(Var a, Var b) {
    Matrix<S> y = value(a) + value(b);
    return push(std::move(y), any(a, b), [this, a, b, out = next()] {
      const auto& g = nodes_[out].grad;
      if (needsGrad(a)) grad(a) += g;
      if (needsGrad(b)) grad(b) += g;
    });
  }

  /// x has groups * groupSize rows; row g of r is added to every row of group g.
  Var addGroupRows(Var x, Var r, int groupSize) {
    Matrix<S> y = value(x);
    const auto& rv = value(r);
    for (Eigen::Index g = 0; g < rv.rows(); ++g) y.middleRows(g * groupSize, groupSize).rowwise() += rv.row(g);
    return push(std::move(y), any(x, r), [this, x, r, groupSize, out = next()] {
      const auto& gy = nodes_[out].grad;
      if (needsGrad(x)) grad(x) += gy;
      if (needsGrad(r)) {
        auto& gr = grad(r);
        for (Eigen::Index g = 0; g < gr.rows(); ++g) gr.row(g) += gy.middleRows(g * groupSize, groupSize).colwise().sum();
      }
    });
  }

  /// tanh-approximated GELU.
  Var gelu(Var x) {
    const auto& xv = value(x);
    Matrix<S> y(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const S v = xv.data()[i];
      y.data()[i] = S(0.5) * v * (S(1) + std::tanh(kGeluC * (v + S(0.044715) * v * v * v)));
    }
    return push(std::move(y), any(x), [this, x, out = next()] {
      const auto& g = nodes_[out].grad;
      const auto& xv = value(x);
      auto& gx = grad(x);
      for (Eigen::Index i = 0; i < xv.size(); ++i) {
        const S v = xv.data()[i];
        const S th = std::tanh(kGeluC * (v + S(0.044715) * v * v * v));
        const S d = S(0.5) * (S(1) + th) +
                    S(0.5) * v * (S(1) - th * th) * kGeluC * (S(1) + S(3) * S(0.044715) * v * v);
        gx.data()[i] += g.data()[i] * d;
      }
    });
  }

  /// Row-wise layer normalization with affine 1 x H gamma and beta.
  Var layerNorm(Var x, Var gamma, Var beta, S eps = S(1e-5)) {
    const auto& xv = value(x);
    const Eigen::Index rows = xv.rows(), cols = xv.cols();
    auto xhat = std::make_shared<Matrix<S>>(rows, cols);
    auto invStd = std::make_shared<std::vector<S>>(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const S mean = xv.row(r).mean();
      const S var = (xv.row(r).array() - mean).square().mean();
      (*invStd)[r] = S(1) / std::sqrt(var + eps);
      xhat->row(r) = (xv.row(r).array() - mean) * (*invStd)[r];
    }
    Matrix<S> y = (xhat->array().rowwise() * value(gamma).row(0).array()).rowwise() + value(beta).row(0).array();
    return push(std::move(y), any(x, gamma, beta), [this, x, gamma, beta, xhat, invStd, out = next()] {
      const auto& g = nodes_[out].grad;
      if (needsGrad(gamma)) grad(gamma) += (g.array() * xhat->array()).colwise().sum().matrix();
      if (needsGrad(beta)) grad(beta) += g.colwise().sum();
      if (needsGrad(x)) {
        auto& gx = grad(x);
        const auto gam = value(gamma).row(0).array();
        const S n = static_cast<S>(g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const auto dxhat = (g.row(r).array() * gam).eval();
          const S m1 = dxhat.sum() / n;
          const S m2 = (dxhat * xhat->row(r).array()).sum() / n;
          gx.row(r).array() += (*invStd)[r] * (dxhat - m1 - xhat->row(r).array() * m2);
        }
      }
    });
  }

  /// Multi-head self-attention core softmax(Q K^T / sqrt(d)) V, computed
  /// independently within each group of `groupSize` consecutive rows.
  Var attention(Var q, Var k, Var v, int groupSize, int heads) {
    const auto& Q = value(q);
    const auto& K = value(k);
    const auto& V = value(v);
    const Eigen::Index hidden = Q.cols();
    const Eigen::Index d = hidden / heads;
    const Eigen::Index groups = Q.rows() / groupSize;
    const S scale = S(1) / std::sqrt(static_cast<S>(d));
    auto probs = std::make_shared<std::vector<Matrix<S>>>(static_cast<std::size_t>(groups * heads));
    Matrix<S> y(Q.rows(), hidden);
    for (Eigen::Index g = 0; g < groups; ++g) {
      for (Eigen::Index h = 0; h < heads; ++h) {
        const auto Qb = Q.block(g * groupSize, h * d, groupSize, d);
        const auto Kb = K.block(g * groupSize, h * d, groupSize, d);
        const auto Vb = V.block(g * groupSize, h * d, groupSize, d);
        Matrix<S> A;
        A.noalias() = (Qb * Kb.transpose()) * scale;
        for (Eigen::Index r = 0; r < A.rows(); ++r) {
          const S m = A.row(r).maxCoeff();
          A.row(r) = (A.row(r).array() - m).exp();
          A.row(r) /= A.row(r).sum();
        }
        y.block(g * groupSize, h * d, groupSize, d).noalias() = A * Vb;
        (*probs)[static_cast<std::size_t>(g * heads + h)] = std::move(A);
      }
    }
    return push(std::move(y), any(q, k, v), [this, q, k, v, groupSize, heads, d, groups, scale, probs, out = next()] {
      const auto& G = nodes_[out].grad;
      const auto& Q = value(q);
      const auto& K = value(k);
      const auto& V = value(v);
      const bool gq = needsGrad(q), gk = needsGrad(k), gv = needsGrad(v);
      for (Eigen::Index g = 0; g < groups; ++g) {
        for (Eigen::Index h = 0; h < heads; ++h) {
          const auto& A = (*probs)[static_cast<std::size_t>(g * heads + h)];
          const auto Gb = G.block(g * groupSize, h * d, groupSize, d);
          if (gv) grad(v).block(g * groupSize, h * d, groupSize, d).noalias() += A.transpose() * Gb;
          if (!gq && !gk) continue;
          Matrix<S> dA;
          dA.noalias() = Gb * V.block(g * groupSize, h * d, groupSize, d).transpose();
          Matrix<S> dS = A.cwiseProduct(dA);
          const Eigen::Matrix<S, Eigen::Dynamic, 1> rowDot = dS.rowwise().sum();
          dS -= (A.array().colwise() * rowDot.array()).matrix();
          dS *= scale;
          if (gq) grad(q).block(g * groupSize, h * d, groupSize, d).noalias() += dS * K.block(g * groupSize, h * d, groupSize, d);
          if (gk) grad(k).block(g * groupSize, h * d, groupSize, d).noalias() += dS.transpose() * Q.block(g * groupSize, h * d, groupSize, d);
        }
      }
    });
  }

  /// scale * sum over rows of (logsumexp(row) - row[target]); a 1 x 1 result.
  Var crossEntropy(Var logits, std::vector<int> targets, S scale) {
    const auto& L = value(logits);
    auto probs = std::make_shared<Matrix<S>>(L.rows(), L.cols());
    S total = 0;
    for (Eigen::Index r = 0; r < L.rows(); ++r) {
      const S m = L.row(r).maxCoeff();
      probs->row(r) = (L.row(r).array() - m).exp();
      const S sum = probs->row(r).sum();
      probs->row(r) /= sum;
      total += m + std::log(sum) - L(r, targets[static_cast<std::size_t>(r)]);
    }
    Matrix<S> y(1, 1);
    y(0, 0) = total * scale;
    return push(std::move(y), any(logits), [this, logits, probs, targets = std::move(targets), scale, out = next()] {
      const S g = nodes_[out].grad(0, 0) * scale;
      auto& gl = grad(logits);
      gl += *probs * g;
      for (Eigen::Index r = 0; r < gl.rows(); ++r) gl(r, targets[static_cast<std::size_t>(r)]) -= g;
    });
  }

  Var sum(const std::vector<Var>& scalars) {
    Matrix<S> y = Matrix<S>::Zero(1, 1);
    bool ng = false;
    for (auto s : scalars) {
      y(0, 0) += value(s)(0, 0);
      ng = ng || needsGrad(s);
    }
    return push(std::move(y), ng && recording_, [this, scalars, out = next()] {
      const S g = nodes_[out].grad(0, 0);
      for (auto s : scalars)
        if (needsGrad(s)) grad(s)(0, 0) += g;
    });
  }

 private:
  static constexpr S kGeluC = S(0.7978845608028654);  // sqrt(2/pi)

  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    const Matrix<S>* extValue = nullptr;
    Matrix<S>* extGrad = nullptr;
    bool needsGrad = false;
    std::function<void()> backward;
  };

  int next() const { return static_cast<int>(nodes_.size()); }

  template <class... Vs>
  bool any(Vs... vs) const {
    return recording_ && (needsGrad(vs) || ...);
  }

  Var push(Matrix<S> value, bool needsGrad, std::function<void()> bw) {
    Node n;
    n.value = std::move(value);
    n.needsGrad = needsGrad;
    if (needsGrad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool recording_;
  std::vector<Node> nodes_;
};

}  // namespace symplex::ag
