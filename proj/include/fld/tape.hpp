#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fld/tensor.hpp"

namespace fld {

using GradMap = std::unordered_map<std::int64_t, Tensor>;

// Define-by-run reverse-mode tape. A fresh tape is built for every forward
// pass and consumed by backward(); nothing is retained across passes.
//
// Tensors whose `node` is -1 are constants: an operation whose inputs are
// all constants is computed eagerly and not recorded, so inference runs
// through the same code paths as training with no tape overhead.
//
// add/sub/mul accept equal shapes or a 1x1 operand broadcast against any
// shape; no other broadcasting exists.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `value` as a differentiable leaf (parameter or input).
  Tensor leaf(Tensor value);

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor softmax_rows(const Tensor& a);  // max-shifted, numerically safe
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
  Tensor scale(const Tensor& a, double s);
  Tensor sin(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor concat_columns(const std::vector<Tensor>& parts);
  Tensor slice_rows(const Tensor& a, int begin, int count);
  Tensor sum(const Tensor& a);  // all entries -> 1x1

  // Gradients of a scalar loss with respect to every leaf it reaches, keyed
  // by leaf node id; each gradient has the leaf's shape. Leaves the loss
  // does not depend on are absent. The tape is cleared and its epoch
  // retired, so tensors recorded before this call become stale.
  GradMap backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    Leaf,
    MatMul,
    Transpose,
    Softmax,
    Add,
    Sub,
    Mul,
    Scale,
    Sin,
    Relu,
    ConcatCols,
    SliceRows,
    Sum,
  };

  struct Node {
    Op op;
    std::vector<std::int64_t> inputs;  // node ids; -1 marks a constant input
    std::vector<Tensor> saved;         // values the backward rule needs
    std::vector<int> meta;             // op-specific integers (shapes, offsets)
    double factor = 0.0;               // Scale
    int out_rows = 0;
    int out_cols = 0;
  };

  std::int64_t push(Node n);
  // Index of `t` on this tape, -1 for constants; throws on stale tensors.
  std::int64_t index_of(const Tensor& t, const char* op) const;
  Tensor binary(Op op, const Tensor& a, const Tensor& b, const char* name);
  Tensor unary(Op op, const Tensor& a, const char* name);
  void retire();

  std::uint32_t epoch_;
  std::vector<Node> nodes_;
};

// One parameter group for gradient checking: a name plus its current value.
struct GradCheckParam {
  std::string name;
  Tensor value;
};

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::vector<GradCheckGroup> groups;
};

// Builds a scalar loss from bound parameters. Called once with tracked
// leaves (AD pass) and repeatedly with constants (finite differences), so it
// must be a pure function of the parameter values.
using ScalarFn =
    std::function<Tensor(Tape& tape, const std::vector<Tensor>& params)>;

// Central-difference check of reverse-mode gradients: for every scalar
// parameter w, compares dloss/dw from backward() against
// (f(w+eps) - f(w-eps)) / (2*eps) using
//   rel_err = |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckResult finite_diff_check(const ScalarFn& f,
                                  const std::vector<GradCheckParam>& params,
                                  double eps = 1e-5);

}  // namespace fld
