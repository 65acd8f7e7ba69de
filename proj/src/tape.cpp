#include "fld/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "fld/errors.hpp"

namespace fld {

namespace {

// Epochs are global so a tensor can never be mistaken for a node of another
// live tape: ids embed the epoch, and each tape owns a unique epoch.
std::atomic<std::uint32_t> g_epoch{1};

std::int64_t pack_id(std::uint32_t epoch, std::size_t index) {
  return (static_cast<std::int64_t>(epoch) << 32) |
         static_cast<std::int64_t>(index & 0xffffffffu);
}

std::uint32_t epoch_of(std::int64_t id) {
  return static_cast<std::uint32_t>(static_cast<std::uint64_t>(id) >> 32);
}

std::size_t index_of_id(std::int64_t id) {
  return static_cast<std::size_t>(id & 0xffffffff);
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// Accumulates over k in ascending order for every output cell, so results
// are independent of loop arrangement and reproducible.
Tensor matmul_values(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[static_cast<std::size_t>(i) * a.cols];
    double* orow = &out.data[static_cast<std::size_t>(i) * b.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor transpose_values(const Tensor& a) {
  Tensor out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// Collapses a gradient to the shape of a 1x1 operand that was broadcast.
Tensor reduce_to(const Tensor& g, int rows, int cols) {
  if (g.rows == rows && g.cols == cols) return g;
  double s = 0.0;
  for (double v : g.data) s += v;
  return Tensor::scalar(s);
}

}  // namespace

Tape::Tape() : epoch_(g_epoch.fetch_add(1)) {}

void Tape::retire() {
  nodes_.clear();
  epoch_ = g_epoch.fetch_add(1);
}

std::int64_t Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return pack_id(epoch_, nodes_.size() - 1);
}

std::int64_t Tape::index_of(const Tensor& t, const char* op) const {
  if (t.node < 0) return -1;
  if (epoch_of(t.node) != epoch_) {
    throw ContractError(std::string(op) +
                        ": tensor was recorded on a different or already "
                        "consumed tape");
  }
  std::size_t idx = index_of_id(t.node);
  if (idx >= nodes_.size()) {
    throw ContractError(std::string(op) + ": tensor has an invalid node id");
  }
  return static_cast<std::int64_t>(idx);
}

Tensor Tape::leaf(Tensor value) {
  check_finite(value, "leaf");
  Node n{};
  n.op = Op::Leaf;
  n.out_rows = value.rows;
  n.out_cols = value.cols;
  value.node = push(std::move(n));
  return value;
}

Tensor Tape::binary(Op op, const Tensor& a, const Tensor& b, const char* name) {
  const bool as = a.is_scalar();
  const bool bs = b.is_scalar();
  if (!a.same_shape(b) && !as && !bs) {
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a) + " and " +
                     shape_str(b) + " do not match and neither is 1x1");
  }
  const Tensor& big = as ? b : a;
  Tensor out(big.rows, big.cols);
  const std::size_t n = out.data.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = as ? a.data[0] : a.data[i];
    const double y = bs ? b.data[0] : b.data[i];
    out.data[i] = op == Op::Add ? x + y : op == Op::Sub ? x - y : x * y;
  }
  check_finite(out, name);

  const std::int64_t ia = index_of(a, name);
  const std::int64_t ib = index_of(b, name);
  if (ia < 0 && ib < 0) return out;
  Node node{};
  node.op = op;
  node.inputs = {ia, ib};
  node.meta = {a.rows, a.cols, b.rows, b.cols};
  if (op == Op::Mul) node.saved = {a, b};
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::unary(Op op, const Tensor& a, const char* name) {
  Tensor out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    out.data[i] = op == Op::Sin ? std::sin(a.data[i])
                                : std::max(0.0, a.data[i]);  // Relu
  }
  check_finite(out, name);
  const std::int64_t ia = index_of(a, name);
  if (ia < 0) return out;
  Node node{};
  node.op = op;
  node.inputs = {ia};
  node.saved = {a};
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) { return binary(Op::Add, a, b, "add"); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return binary(Op::Sub, a, b, "sub"); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return binary(Op::Mul, a, b, "mul"); }
Tensor Tape::sin(const Tensor& a) { return unary(Op::Sin, a, "sin"); }
Tensor Tape::relu(const Tensor& a) { return unary(Op::Relu, a, "relu"); }

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a) +
                     " * " + shape_str(b));
  }
  Tensor out = matmul_values(a, b);
  check_finite(out, "matmul");
  const std::int64_t ia = index_of(a, "matmul");
  const std::int64_t ib = index_of(b, "matmul");
  if (ia < 0 && ib < 0) return out;
  Node node{};
  node.op = Op::MatMul;
  node.inputs = {ia, ib};
  node.saved = {a, b};
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  Tensor out = transpose_values(a);
  const std::int64_t ia = index_of(a, "transpose");
  if (ia < 0) return out;
  Node node{};
  node.op = Op::Transpose;
  node.inputs = {ia};
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::softmax_rows(const Tensor& a) {
  Tensor out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = a.at(i, 0);
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      double e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j < a.cols; ++j) out.at(i, j) /= denom;
  }
  check_finite(out, "softmax_rows");
  const std::int64_t ia = index_of(a, "softmax_rows");
  if (ia < 0) return out;
  Node node{};
  node.op = Op::Softmax;
  node.inputs = {ia};
  node.saved = {out};  // backward needs the probabilities, not the logits
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::scale(const Tensor& a, double s) {
  if (!std::isfinite(s)) throw NumericError("scale: factor is not finite");
  Tensor out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * s;
  check_finite(out, "scale");
  const std::int64_t ia = index_of(a, "scale");
  if (ia < 0) return out;
  Node node{};
  node.op = Op::Scale;
  node.inputs = {ia};
  node.factor = s;
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::concat_columns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_columns: no inputs");
  const int rows = parts[0].rows;
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows != rows) {
      throw ShapeError("concat_columns: row counts differ: " +
                       shape_str(parts[0]) + " vs " + shape_str(p));
    }
    cols += p.cols;
  }
  Tensor out(rows, cols);
  int off = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < p.cols; ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols;
  }

  Node node{};
  node.op = Op::ConcatCols;
  bool tracked = false;
  node.meta.push_back(rows);
  for (const Tensor& p : parts) {
    std::int64_t ip = index_of(p, "concat_columns");
    tracked = tracked || ip >= 0;
    node.inputs.push_back(ip);
    node.meta.push_back(p.cols);
  }
  if (!tracked) return out;
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::slice_rows(const Tensor& a, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > a.rows) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_str(a));
  }
  Tensor out(count, a.cols);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = a.at(begin + i, j);
  const std::int64_t ia = index_of(a, "slice_rows");
  if (ia < 0) return out;
  Node node{};
  node.op = Op::SliceRows;
  node.inputs = {ia};
  node.meta = {begin, a.rows};
  node.out_rows = out.rows;
  node.out_cols = out.cols;
  out.node = push(std::move(node));
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  const std::int64_t ia = index_of(a, "sum");
  if (ia < 0) return out;
  Node node{};
  node.op = Op::Sum;
  node.inputs = {ia};
  node.meta = {a.rows, a.cols};
  node.out_rows = 1;
  node.out_cols = 1;
  out.node = push(std::move(node));
  return out;
}

GradMap Tape::backward(const Tensor& loss) {
  if (!loss.is_scalar()) {
    throw ContractError("backward: loss must be 1x1, got " + shape_str(loss));
  }
  const std::int64_t li = index_of(loss, "backward");
  if (li < 0) {
    throw ContractError("backward: loss does not depend on any tracked leaf");
  }

  std::vector<Tensor> grad(nodes_.size());
  std::vector<char> has(nodes_.size(), 0);
  grad[static_cast<std::size_t>(li)] = Tensor::scalar(1.0);
  has[static_cast<std::size_t>(li)] = 1;

  auto accum = [&](std::int64_t input, Tensor delta) {
    if (input < 0) return;
    auto idx = static_cast<std::size_t>(input);
    if (!has[idx]) {
      grad[idx] = std::move(delta);
      has[idx] = 1;
    } else {
      add_into(grad[idx], delta);
    }
  };

  for (std::size_t pos = static_cast<std::size_t>(li) + 1; pos-- > 0;) {
    if (!has[pos]) continue;
    const Node& n = nodes_[pos];
    const Tensor& g = grad[pos];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Tensor& a = n.saved[0];
        const Tensor& b = n.saved[1];
        if (n.inputs[0] >= 0) accum(n.inputs[0], matmul_values(g, transpose_values(b)));
        if (n.inputs[1] >= 0) accum(n.inputs[1], matmul_values(transpose_values(a), g));
        break;
      }
      case Op::Transpose:
        accum(n.inputs[0], transpose_values(g));
        break;
      case Op::Softmax: {
        const Tensor& y = n.saved[0];
        Tensor dx(y.rows, y.cols);
        for (int i = 0; i < y.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
          for (int j = 0; j < y.cols; ++j)
            dx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
        }
        accum(n.inputs[0], std::move(dx));
        break;
      }
      case Op::Add:
      case Op::Sub: {
        if (n.inputs[0] >= 0) accum(n.inputs[0], reduce_to(g, n.meta[0], n.meta[1]));
        if (n.inputs[1] >= 0) {
          Tensor gb = g;
          if (n.op == Op::Sub)
            for (double& v : gb.data) v = -v;
          accum(n.inputs[1], reduce_to(gb, n.meta[2], n.meta[3]));
        }
        break;
      }
      case Op::Mul: {
        const Tensor& a = n.saved[0];
        const Tensor& b = n.saved[1];
        if (n.inputs[0] >= 0) {
          Tensor da(g.rows, g.cols);
          for (std::size_t i = 0; i < da.data.size(); ++i)
            da.data[i] = g.data[i] * (b.is_scalar() ? b.data[0] : b.data[i]);
          accum(n.inputs[0], reduce_to(da, a.rows, a.cols));
        }
        if (n.inputs[1] >= 0) {
          Tensor db(g.rows, g.cols);
          for (std::size_t i = 0; i < db.data.size(); ++i)
            db.data[i] = g.data[i] * (a.is_scalar() ? a.data[0] : a.data[i]);
          accum(n.inputs[1], reduce_to(db, b.rows, b.cols));
        }
        break;
      }
      case Op::Scale: {
        Tensor da = g;
        for (double& v : da.data) v *= n.factor;
        accum(n.inputs[0], std::move(da));
        break;
      }
      case Op::Sin: {
        const Tensor& a = n.saved[0];
        Tensor da(g.rows, g.cols);
        for (std::size_t i = 0; i < da.data.size(); ++i)
          da.data[i] = g.data[i] * std::cos(a.data[i]);
        accum(n.inputs[0], std::move(da));
        break;
      }
      case Op::Relu: {
        const Tensor& a = n.saved[0];
        Tensor da(g.rows, g.cols);
        for (std::size_t i = 0; i < da.data.size(); ++i)
          da.data[i] = a.data[i] > 0.0 ? g.data[i] : 0.0;
        accum(n.inputs[0], std::move(da));
        break;
      }
      case Op::ConcatCols: {
        const int rows = n.meta[0];
        int off = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
          const int w = n.meta[p + 1];
          if (n.inputs[p] >= 0) {
            Tensor part(rows, w);
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < w; ++j) part.at(i, j) = g.at(i, off + j);
            accum(n.inputs[p], std::move(part));
          }
          off += w;
        }
        break;
      }
      case Op::SliceRows: {
        const int begin = n.meta[0];
        Tensor da(n.meta[1], g.cols);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) da.at(begin + i, j) = g.at(i, j);
        accum(n.inputs[0], std::move(da));
        break;
      }
      case Op::Sum:
        accum(n.inputs[0], Tensor::full(n.meta[0], n.meta[1], g.data[0]));
        break;
    }
  }

  GradMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::Leaf && has[i]) {
      out.emplace(pack_id(epoch_, i), std::move(grad[i]));
    }
  }
  retire();
  return out;
}

namespace {

double eval_loss(const ScalarFn& f, const std::vector<GradCheckParam>& params) {
  Tape tape;
  std::vector<Tensor> consts;
  consts.reserve(params.size());
  for (const GradCheckParam& p : params) {
    Tensor c = p.value;
    c.node = -1;
    consts.push_back(std::move(c));
  }
  return f(tape, consts).value();
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f,
                                  const std::vector<GradCheckParam>& params,
                                  double eps) {
  if (eps <= 0.0) throw ValidationError("finite_diff_check: eps must be positive");

  Tape tape;
  std::vector<Tensor> bound;
  bound.reserve(params.size());
  for (const GradCheckParam& p : params) bound.push_back(tape.leaf(p.value));
  Tensor loss = f(tape, bound);
  if (!loss.is_scalar()) {
    throw ContractError("finite_diff_check: f must return a 1x1 loss, got " +
                        shape_str(loss));
  }
  GradMap grads = tape.backward(loss);

  std::vector<GradCheckParam> work = params;
  GradCheckResult res;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = grads.find(bound[i].node);
    const Tensor g_ad = it != grads.end()
                            ? it->second
                            : Tensor(params[i].value.rows, params[i].value.cols);
    GradCheckGroup grp{params[i].name, 0.0};
    Tensor& w = work[i].value;
    for (std::size_t j = 0; j < w.data.size(); ++j) {
      const double orig = w.data[j];
      w.data[j] = orig + eps;
      const double fp = eval_loss(f, work);
      w.data[j] = orig - eps;
      const double fm = eval_loss(f, work);
      w.data[j] = orig;
      const double g_fd = (fp - fm) / (2.0 * eps);
      const double rel = std::fabs(g_ad.data[j] - g_fd) /
                         std::max(1e-8, std::fabs(g_ad.data[j]) + std::fabs(g_fd));
      grp.max_rel_err = std::max(grp.max_rel_err, rel);
    }
    res.max_rel_err = std::max(res.max_rel_err, grp.max_rel_err);
    res.groups.push_back(std::move(grp));
  }
  return res;
}

}  // namespace fld
