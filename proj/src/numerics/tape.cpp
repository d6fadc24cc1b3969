#include "esam3/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esam3/error.hpp"
#include "esam3/numerics/kernels.hpp"

namespace esam3::num {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLogSigmoid: return "log_sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSlice: return "slice";
    case OpKind::kConcat: return "concat";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRowSoftmax: return "row_softmax";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kTakeRows: return "take_rows";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) fail(ErrorKind::kGraph, "use of an unbound Var");
  return tape_->value(id_);
}

// ---- Tape -------------------------------------------------------------------

Var Tape::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& t, bool trainable) {
  Node n;
  n.value = Tensor(t.shape(), t.vec());
  n.requires_grad = trainable;
  n.bound = trainable ? &t : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind op, std::span<const Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.op = op;
  std::vector<const Tensor*> vals;
  vals.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape() != this) {
      fail(ErrorKind::kGraph, std::string(op_name(op)) + ": operand belongs to a different computation record");
    }
    n.inputs.push_back(v.id());
    vals.push_back(&nodes_[v.id()].value);
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.value = forward(vals);
  if (!n.value.all_finite()) {
    fail(ErrorKind::kNumerical, std::string(op_name(op)) + " produced non-finite values");
  }
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::validate() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (auto in : nodes_[i].inputs) {
      if (in >= nodes_.size()) {
        fail(ErrorKind::kGraph, "computation record: node " + std::to_string(i) + " references missing node " +
                                    std::to_string(in));
      }
      if (in >= i) {
        fail(ErrorKind::kGraph, "computation record: node " + std::to_string(i) + " depends on node " +
                                    std::to_string(in) + " which does not precede it (cycle)");
      }
    }
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) fail(ErrorKind::kGraph, "backward: loss is not part of this record");
  if (loss.id() >= nodes_.size()) fail(ErrorKind::kGraph, "backward: loss node is missing");
  if (nodes_[loss.id()].value.numel() != 1) {
    fail(ErrorKind::kShape, "backward: loss must be scalar, got " + shape_str(nodes_[loss.id()].value.shape()));
  }
  validate();
  grads_.assign(nodes_.size(), {});
  if (!nodes_[loss.id()].requires_grad) return;
  grads_[loss.id()] = {1.0};

  std::vector<const Tensor*> in_vals;
  std::vector<std::vector<double>*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || grads_[id].empty()) continue;
    for (double g : grads_[id]) {
      if (!std::isfinite(g)) {
        fail(ErrorKind::kNumerical, "backward: non-finite gradient at " + std::string(op_name(n.op)) + " node " +
                                        std::to_string(id));
      }
    }
    if (n.op == OpKind::kLeaf) {
      if (n.bound) n.bound->accumulate_grad(grads_[id]);
      continue;
    }
    in_vals.clear();
    in_grads.clear();
    for (auto in : n.inputs) {
      in_vals.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (grads_[in].empty()) grads_[in].assign(nodes_[in].value.numel(), 0.0);
        in_grads.push_back(&grads_[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(BackwardContext{in_vals, n.value, grads_[id], in_grads});
  }
}

Tensor Tape::grad(const Var& v) const {
  const auto& val = nodes_.at(v.id()).value;
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return Tensor(val.shape(), grads_[v.id()]);
  return Tensor::zeros(val.shape());
}

std::vector<Tensor> Tape::replay() const {
  validate();
  std::vector<Tensor> out(nodes_.size());
  std::vector<const Tensor*> vals;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == OpKind::kLeaf) {
      out[i] = n.value;
      continue;
    }
    vals.clear();
    for (auto in : n.inputs) vals.push_back(&out[in]);
    out[i] = n.forward(vals);
  }
  return out;
}

// ---- ops --------------------------------------------------------------------

namespace {

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

Tape* tape_of(Var a) {
  if (!a.valid()) fail(ErrorKind::kGraph, "operation on an unbound Var");
  return a.tape();
}

template <typename F, typename D>
Var unary(OpKind op, Var a, F f, D dfdx) {
  const Var ins[] = {a};
  return tape_of(a)->record(
      op, ins,
      [f](std::span<const Tensor* const> in) {
        Tensor out = *in[0];
        for (auto& v : out.vec()) v = f(v);
        return out;
      },
      [dfdx](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        auto& gi = *ctx.in_grads[0];
        const auto& x = ctx.inputs[0]->vec();
        const auto& y = ctx.output.vec();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += ctx.out_grad[i] * dfdx(x[i], y[i]);
      });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

template <typename F, typename B>
Var binary_with_grad(OpKind op, Var a, Var b, F f, B back) {
  if (a.shape() != b.shape()) shape_error(op_name(op), a.shape(), b.shape());
  const Var ins[] = {a, b};
  return tape_of(a)->record(
      op, ins,
      [f](std::span<const Tensor* const> in) {
        Tensor out(in[0]->shape());
        const auto& x = in[0]->vec();
        const auto& y = in[1]->vec();
        auto& o = out.vec();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
        return out;
      },
      [back](const BackwardContext& ctx) {
        const auto& x = ctx.inputs[0]->vec();
        const auto& y = ctx.inputs[1]->vec();
        for (std::size_t i = 0; i < x.size(); ++i) {
          const auto [dx, dy] = back(x[i], y[i]);
          if (ctx.in_grads[0]) (*ctx.in_grads[0])[i] += ctx.out_grad[i] * dx;
          if (ctx.in_grads[1]) (*ctx.in_grads[1])[i] += ctx.out_grad[i] * dy;
        }
      });
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const Var ins[] = {a, b};
  return tape_of(a)->record(
      OpKind::kMatMul, ins,
      [](std::span<const Tensor* const> in) { return kernels::matmul(*in[0], *in[1]); },
      [](const BackwardContext& ctx) {
        const auto& x = *ctx.inputs[0];
        const auto& y = *ctx.inputs[1];
        const auto m = x.dim(0), k = x.dim(1), n = y.dim(1);
        if (ctx.in_grads[0]) kernels::gemm(ctx.out_grad, y.data(), *ctx.in_grads[0], m, k, n, false, true, true);
        if (ctx.in_grads[1]) kernels::gemm(x.data(), ctx.out_grad, *ctx.in_grads[1], k, n, m, true, false, true);
      });
}

Var add(Var a, Var b) {
  return binary_with_grad(OpKind::kAdd, a, b, [](double x, double y) { return x + y; },
                          [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary_with_grad(OpKind::kSub, a, b, [](double x, double y) { return x - y; },
                          [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary_with_grad(OpKind::kMul, a, b, [](double x, double y) { return x * y; },
                          [](double x, double y) { return std::pair{y, x}; });
}

Var div(Var a, Var b) {
  return binary_with_grad(OpKind::kDiv, a, b, [](double x, double y) { return x / y; },
                          [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Var scale(Var a, double c) {
  return unary(OpKind::kScale, a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(OpKind::kAddScalar, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var relu(Var a) {
  return unary(OpKind::kRelu, a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(OpKind::kSigmoid, a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var a) {
  return unary(OpKind::kLogSigmoid, a, stable_log_sigmoid,
               [](double x, double) { return stable_sigmoid(-x); });
}

Var log(Var a) {
  return unary(OpKind::kLog, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(OpKind::kExp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sum(Var a) {
  const Var ins[] = {a};
  return tape_of(a)->record(
      OpKind::kSum, ins,
      [](std::span<const Tensor* const> in) {
        double s = 0.0;
        for (double v : in[0]->vec()) s += v;
        return Tensor::scalar(s);
      },
      [](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        for (auto& g : *ctx.in_grads[0]) g += ctx.out_grad[0];
      });
}

Var mean(Var a) {
  const Var ins[] = {a};
  return tape_of(a)->record(
      OpKind::kMean, ins,
      [](std::span<const Tensor* const> in) {
        double s = 0.0;
        for (double v : in[0]->vec()) s += v;
        return Tensor::scalar(s / static_cast<double>(in[0]->numel()));
      },
      [](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        const double g = ctx.out_grad[0] / static_cast<double>(ctx.inputs[0]->numel());
        for (auto& v : *ctx.in_grads[0]) v += g;
      });
}

Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  const Var ins[] = {a};
  return tape_of(a)->record(
      OpKind::kReshape, ins, [shape](std::span<const Tensor* const> in) { return in[0]->reshaped(shape); },
      [](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        auto& gi = *ctx.in_grads[0];
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += ctx.out_grad[i];
      });
}

Var transpose(Var a) {
  if (a.shape().size() != 2) fail(ErrorKind::kShape, "transpose: expected a matrix, got " + shape_str(a.shape()));
  const Var ins[] = {a};
  return tape_of(a)->record(
      OpKind::kTranspose, ins, [](std::span<const Tensor* const> in) { return kernels::transpose(*in[0]); },
      [](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        const auto rows = ctx.inputs[0]->dim(0), cols = ctx.inputs[0]->dim(1);
        auto& gi = *ctx.in_grads[0];
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < cols; ++c) gi[r * cols + c] += ctx.out_grad[c * rows + r];
      });
}

Var slice(Var a, std::size_t axis, std::int64_t start, std::int64_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start < 0 || end > s[axis] || start >= end) {
    fail(ErrorKind::kShape, "slice: range [" + std::to_string(start) + ", " + std::to_string(end) + ") on axis " +
                                std::to_string(axis) + " invalid for " + shape_str(s));
  }
  const std::size_t outer = prod(s, 0, axis), inner = prod(s, axis + 1, s.size());
  const auto extent = static_cast<std::size_t>(s[axis]);
  const auto len = static_cast<std::size_t>(end - start);
  const auto off = static_cast<std::size_t>(start);
  Shape out_shape = s;
  out_shape[axis] = end - start;
  const Var ins[] = {a};
  return tape_of(a)->record(
      OpKind::kSlice, ins,
      [=](std::span<const Tensor* const> in) {
        Tensor out(out_shape);
        const auto& x = in[0]->vec();
        auto& o = out.vec();
        for (std::size_t i = 0; i < outer; ++i)
          std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((i * extent + off) * inner), len * inner,
                      o.begin() + static_cast<std::ptrdiff_t>(i * len * inner));
        return out;
      },
      [=](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        auto& gi = *ctx.in_grads[0];
        for (std::size_t i = 0; i < outer; ++i)
          for (std::size_t j = 0; j < len * inner; ++j) gi[(i * extent + off) * inner + j] += ctx.out_grad[i * len * inner + j];
      });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat: no operands");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) fail(ErrorKind::kShape, "concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != s0[d]) shape_error("concat", s0, s);
    out_shape[axis] += s[axis];
    extents.push_back(static_cast<std::size_t>(s[axis]));
  }
  const std::size_t outer = prod(s0, 0, axis), inner = prod(s0, axis + 1, s0.size());
  const auto total = static_cast<std::size_t>(out_shape[axis]);
  return tape_of(parts[0])->record(
      OpKind::kConcat, parts,
      [=](std::span<const Tensor* const> in) {
        Tensor out(out_shape);
        auto& o = out.vec();
        std::size_t off = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          const auto& x = in[p]->vec();
          for (std::size_t i = 0; i < outer; ++i)
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * extents[p] * inner), extents[p] * inner,
                        o.begin() + static_cast<std::ptrdiff_t>((i * total + off) * inner));
          off += extents[p];
        }
        return out;
      },
      [=](const BackwardContext& ctx) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ctx.inputs.size(); ++p) {
          if (ctx.in_grads[p]) {
            auto& gi = *ctx.in_grads[p];
            for (std::size_t i = 0; i < outer; ++i)
              for (std::size_t j = 0; j < extents[p] * inner; ++j)
                gi[i * extents[p] * inner + j] += ctx.out_grad[(i * total + off) * inner + j];
          }
          off += extents[p];
        }
      });
}

Var conv2d(Var x, Var w, Var bias, std::int64_t stride, std::int64_t pad) {
  const bool has_bias = bias.valid();
  std::vector<Var> ins{x, w};
  if (has_bias) ins.push_back(bias);
  return tape_of(x)->record(
      OpKind::kConv2d, ins,
      [=](std::span<const Tensor* const> in) {
        return kernels::conv2d(*in[0], *in[1], has_bias ? in[2] : nullptr, stride, pad);
      },
      [=](const BackwardContext& ctx) {
        const Tensor& xv = *ctx.inputs[0];
        const Tensor& wv = *ctx.inputs[1];
        kernels::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(2), wv.dim(3), stride, pad};
        const auto k = g.channels * g.kernel_h * g.kernel_w;
        const auto plane = g.out_h() * g.out_w();
        const auto outc = wv.dim(0);
        if (ctx.in_grads[1]) {
          std::vector<double> cols(static_cast<std::size_t>(k * plane));
          kernels::im2col(xv.data(), g, cols);
          kernels::gemm(ctx.out_grad, cols, *ctx.in_grads[1], outc, k, plane, false, true, true);
        }
        if (ctx.in_grads[0]) {
          std::vector<double> dcols(static_cast<std::size_t>(k * plane));
          kernels::gemm(wv.data(), ctx.out_grad, dcols, k, plane, outc, true, false, false);
          kernels::col2im(dcols, g, *ctx.in_grads[0]);
        }
        if (has_bias && ctx.in_grads[2]) {
          auto& gb = *ctx.in_grads[2];
          for (std::int64_t o = 0; o < outc; ++o) {
            double s = 0.0;
            for (std::int64_t p = 0; p < plane; ++p) s += ctx.out_grad[o * plane + p];
            gb[o] += s;
          }
        }
      });
}

Var row_softmax(Var a) {
  const Var ins[] = {a};
  return tape_of(a)->record(
      OpKind::kRowSoftmax, ins, [](std::span<const Tensor* const> in) { return kernels::row_softmax(*in[0]); },
      [](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        const auto cols = static_cast<std::size_t>(ctx.output.shape().back());
        const std::size_t rows = ctx.output.numel() / cols;
        const auto& y = ctx.output.vec();
        auto& gi = *ctx.in_grads[0];
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += ctx.out_grad[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += y[r * cols + c] * (ctx.out_grad[r * cols + c] - dot);
        }
      });
}

Var add_row(Var a, Var row) {
  if (a.shape().size() != 2 || row.numel() != static_cast<std::size_t>(a.shape()[1])) {
    shape_error("add_row", a.shape(), row.shape());
  }
  const Var ins[] = {a, row};
  return tape_of(a)->record(
      OpKind::kAddRow, ins,
      [](std::span<const Tensor* const> in) {
        Tensor out = *in[0];
        const auto cols = static_cast<std::size_t>(out.dim(1));
        auto& o = out.vec();
        const auto& r = in[1]->vec();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += r[i % cols];
        return out;
      },
      [](const BackwardContext& ctx) {
        const auto cols = static_cast<std::size_t>(ctx.output.dim(1));
        if (ctx.in_grads[0]) {
          auto& gi = *ctx.in_grads[0];
          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += ctx.out_grad[i];
        }
        if (ctx.in_grads[1]) {
          auto& gr = *ctx.in_grads[1];
          for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) gr[i % cols] += ctx.out_grad[i];
        }
      });
}

Var take_rows(Var a, std::vector<std::int64_t> rows) {
  if (a.shape().size() != 2) fail(ErrorKind::kShape, "take_rows: expected a matrix, got " + shape_str(a.shape()));
  const auto n = a.shape()[0];
  for (auto r : rows)
    if (r < 0 || r >= n) fail(ErrorKind::kShape, "take_rows: row " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  if (rows.empty()) fail(ErrorKind::kShape, "take_rows: no rows requested");
  const Var ins[] = {a};
  return tape_of(a)->record(
      OpKind::kTakeRows, ins,
      [rows](std::span<const Tensor* const> in) {
        const auto cols = in[0]->dim(1);
        Tensor out({static_cast<std::int64_t>(rows.size()), cols});
        for (std::size_t i = 0; i < rows.size(); ++i)
          std::copy_n(in[0]->vec().begin() + rows[i] * cols, cols, out.vec().begin() + static_cast<std::ptrdiff_t>(i) * cols);
        return out;
      },
      [rows](const BackwardContext& ctx) {
        if (!ctx.in_grads[0]) return;
        const auto cols = static_cast<std::size_t>(ctx.inputs[0]->dim(1));
        auto& gi = *ctx.in_grads[0];
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t c = 0; c < cols; ++c) gi[static_cast<std::size_t>(rows[i]) * cols + c] += ctx.out_grad[i * cols + c];
      });
}

}  // namespace esam3::num
