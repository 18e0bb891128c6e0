#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/tensor.hpp"

namespace fedlab {

// Operator set. Fixed and first-order only: the training losses, including
// the gradient-penalty residual, are expressed as compositions of these.
enum class Op {
  kLeaf,
  kAdd,
  kSub,
  kMul,          // elementwise
  kMatVec,       // matrix [r x c] times vector [c]
  kRelu,
  kSigmoid,
  kSoftmax,
  kSoftmaxXent,  // fused cross-entropy against an integer target class
  kDot,
  kSquare,
  kSum,
  kScale,        // multiply by an immediate constant
  kL1Norm,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "multiply";
    case Op::kMatVec: return "matvec";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kSoftmaxXent: return "softmax-cross-entropy";
    case Op::kDot: return "dot";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kScale: return "scale";
    case Op::kL1Norm: return "l1-norm";
  }
  return "?";
}

namespace detail {

inline std::vector<double> stable_softmax(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    denom += p[i];
  }
  for (double& v : p) v /= denom;
  return p;
}

inline double log_sum_exp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

}  // namespace detail

// Append-only evaluation tape. Inputs of a node always precede it, so the
// backward sweep is a single reverse pass over the insertion order.
class Graph {
 public:
  int leaf(Tensor value) { return push(Op::kLeaf, -1, -1, std::move(value)); }

  // A leaf registered as a differentiation root.
  int param(Tensor value) {
    const int id = leaf(std::move(value));
    roots_.push_back(id);
    return id;
  }

  int apply(Op op, int a) {
    const Tensor& va = value(a);
    switch (op) {
      case Op::kRelu: {
        Tensor out = va;
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(op, a, -1, std::move(out));
      }
      case Op::kSigmoid: {
        Tensor out = va;
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        return push(op, a, -1, std::move(out));
      }
      case Op::kSoftmax: {
        require(va.shape.size() == 1, op, a, -1);
        return push(op, a, -1, Tensor(va.shape, detail::stable_softmax(va.data)));
      }
      case Op::kSquare: {
        Tensor out = va;
        for (double& v : out.data) v = v * v;
        return push(op, a, -1, std::move(out));
      }
      case Op::kSum: {
        double acc = 0.0;
        for (double v : va.data) acc += v;
        return push(op, a, -1, Tensor::scalar(acc));
      }
      case Op::kL1Norm: {
        double acc = 0.0;
        for (double v : va.data) acc += std::abs(v);
        return push(op, a, -1, Tensor::scalar(acc));
      }
      default:
        throw std::invalid_argument(std::string("apply: ") + op_name(op) +
                                    " is not a unary operator");
    }
  }

  int apply(Op op, int a, int b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    switch (op) {
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul: {
        require(va.shape == vb.shape, op, a, b);
        Tensor out = va;
        for (std::size_t i = 0; i < out.data.size(); ++i) {
          out.data[i] = op == Op::kAdd   ? va.data[i] + vb.data[i]
                        : op == Op::kSub ? va.data[i] - vb.data[i]
                                         : va.data[i] * vb.data[i];
        }
        return push(op, a, b, std::move(out));
      }
      case Op::kMatVec: {
        require(va.shape.size() == 2 && vb.shape.size() == 1 &&
                    va.cols() == vb.numel(),
                op, a, b);
        const std::size_t r = va.rows(), c = va.cols();
        std::vector<double> out(r, 0.0);
        for (std::size_t i = 0; i < r; ++i) {
          const double* row = va.data.data() + i * c;
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += row[j] * vb.data[j];
          out[i] = acc;
        }
        return push(op, a, b, Tensor({r}, std::move(out)));
      }
      case Op::kDot: {
        require(va.shape.size() == 1 && va.shape == vb.shape, op, a, b);
        double acc = 0.0;
        for (std::size_t i = 0; i < va.data.size(); ++i) {
          acc += va.data[i] * vb.data[i];
        }
        return push(op, a, b, Tensor::scalar(acc));
      }
      default:
        throw std::invalid_argument(std::string("apply: ") + op_name(op) +
                                    " is not a binary operator");
    }
  }

  int scale(int a, double factor) {
    Tensor out = value(a);
    for (double& v : out.data) v *= factor;
    const int id = push(Op::kScale, a, -1, std::move(out));
    nodes_[static_cast<std::size_t>(id)].factor = factor;
    return id;
  }

  // Cross-entropy of softmax(logits) against `target`, computed via
  // log-sum-exp so the value is exact for confident logits.
  int softmax_xent(int logits, int target) {
    const Tensor& z = value(logits);
    if (z.shape.size() != 1) {
      throw std::invalid_argument(
          "softmax-cross-entropy: logits must be a vector, got " +
          shape_to_string(z.shape));
    }
    if (target < 0 || static_cast<std::size_t>(target) >= z.numel()) {
      throw std::invalid_argument("softmax-cross-entropy: target class " +
                                  std::to_string(target) + " out of range");
    }
    const double loss =
        detail::log_sum_exp(z.data) - z.data[static_cast<std::size_t>(target)];
    const int id =
        push(Op::kSoftmaxXent, logits, -1, Tensor::scalar(std::max(loss, 0.0)));
    nodes_[static_cast<std::size_t>(id)].target = target;
    return id;
  }

  const Tensor& value(int id) const {
    return nodes_.at(static_cast<std::size_t>(id)).value;
  }

  const std::vector<int>& params() const { return roots_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of a scalar node w.r.t. every registered param, accumulated in
  // strict reverse insertion order. Params the loss does not reach get zeros.
  std::map<int, Tensor> backward(int loss) const {
    const Tensor& lv = value(loss);
    if (!lv.is_scalar()) {
      throw std::invalid_argument("backward: loss node must be scalar, got " +
                                  shape_to_string(lv.shape));
    }
    std::vector<std::vector<double>> grad(nodes_.size());
    grad[static_cast<std::size_t>(loss)] = {1.0};
    for (int i = loss; i >= 0; --i) {
      const auto& g = grad[static_cast<std::size_t>(i)];
      if (g.empty()) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      backprop(n, g, grad);
    }
    std::map<int, Tensor> out;
    for (int root : roots_) {
      auto& g = grad[static_cast<std::size_t>(root)];
      if (g.empty()) g.assign(value(root).numel(), 0.0);
      out.emplace(root, Tensor(value(root).shape, std::move(g)));
    }
    return out;
  }

 private:
  struct Node {
    Op op;
    int a;
    int b;
    double factor = 0.0;
    int target = -1;
    Tensor value;
  };

  int push(Op op, int a, int b, Tensor value) {
    nodes_.push_back(Node{op, a, b, 0.0, -1, std::move(value)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void require(bool ok, Op op, int a, int b) const {
    if (ok) return;
    std::string msg = std::string(op_name(op)) + ": shape mismatch " +
                      shape_to_string(value(a).shape);
    if (b >= 0) msg += " vs " + shape_to_string(value(b).shape);
    throw std::invalid_argument(msg);
  }

  static void axpy(std::vector<double>& dst, std::size_t n,
                   const double* src, double s) {
    if (dst.empty()) dst.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) dst[i] += s * src[i];
  }

  void backprop(const Node& n, const std::vector<double>& g,
                std::vector<std::vector<double>>& grad) const {
    auto acc = [&grad, this](int id) -> std::vector<double>& {
      auto& slot = grad[static_cast<std::size_t>(id)];
      if (slot.empty()) slot.assign(value(id).numel(), 0.0);
      return slot;
    };
    switch (n.op) {
      case Op::kLeaf:
        return;
      case Op::kAdd: {
        auto& ga = acc(n.a);
        auto& gb = acc(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        return;
      }
      case Op::kSub: {
        auto& ga = acc(n.a);
        auto& gb = acc(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        return;
      }
      case Op::kMul: {
        const Tensor& va = value(n.a);
        const Tensor& vb = value(n.b);
        auto& ga = acc(n.a);
        auto& gb = acc(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * vb.data[i];
          gb[i] += g[i] * va.data[i];
        }
        return;
      }
      case Op::kMatVec: {
        const Tensor& va = value(n.a);
        const Tensor& vb = value(n.b);
        const std::size_t r = va.rows(), c = va.cols();
        auto& ga = acc(n.a);
        auto& gb = acc(n.b);
        for (std::size_t i = 0; i < r; ++i) {
          const double gi = g[i];
          const double* row = va.data.data() + i * c;
          double* garow = ga.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) {
            garow[j] += gi * vb.data[j];
            gb[j] += gi * row[j];
          }
        }
        return;
      }
      case Op::kRelu: {
        const Tensor& va = value(n.a);
        auto& ga = acc(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (va.data[i] > 0.0) ga[i] += g[i];
        }
        return;
      }
      case Op::kSigmoid: {
        const Tensor& out = n.value;
        auto& ga = acc(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * out.data[i] * (1.0 - out.data[i]);
        }
        return;
      }
      case Op::kSoftmax: {
        const Tensor& p = n.value;
        auto& ga = acc(n.a);
        double pg = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) pg += p.data[i] * g[i];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += p.data[i] * (g[i] - pg);
        }
        return;
      }
      case Op::kSoftmaxXent: {
        const std::vector<double> p = detail::stable_softmax(value(n.a).data);
        auto& ga = acc(n.a);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double h = static_cast<int>(i) == n.target ? 1.0 : 0.0;
          ga[i] += g[0] * (p[i] - h);
        }
        return;
      }
      case Op::kDot: {
        axpy(acc(n.a), value(n.a).numel(), value(n.b).data.data(), g[0]);
        axpy(acc(n.b), value(n.b).numel(), value(n.a).data.data(), g[0]);
        return;
      }
      case Op::kSquare: {
        const Tensor& va = value(n.a);
        auto& ga = acc(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * 2.0 * va.data[i];
        }
        return;
      }
      case Op::kSum: {
        auto& ga = acc(n.a);
        for (double& v : ga) v += g[0];
        return;
      }
      case Op::kScale: {
        auto& ga = acc(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.factor;
        return;
      }
      case Op::kL1Norm: {
        const Tensor& va = value(n.a);
        auto& ga = acc(n.a);
        for (std::size_t i = 0; i < va.data.size(); ++i) {
          // subgradient 0 at the kink
          ga[i] += g[0] * (va.data[i] > 0.0 ? 1.0 : va.data[i] < 0.0 ? -1.0 : 0.0);
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<int> roots_;
};

// Central-difference gradient estimate; the test oracle for backward().
inline Tensor finite_diff_gradient(
    const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be > 0");
  Tensor probe = x;
  Tensor grad = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double fp = f(probe);
    probe.data[i] = orig - h;
    const double fm = f(probe);
    probe.data[i] = orig;
    grad.data[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace fedlab
