#pragma once

// Record-based reverse-mode differentiation.
//
// A Tape is the computation record for one forward pass: nodes are appended
// in execution order, so the record is topologically sorted by construction.
// Each non-leaf node keeps the forward closure used to produce it, which lets
// replay() recompute every output from the leaves.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "esam3/numerics/tensor.hpp"

namespace esam3::num {

enum class OpKind {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kRelu,
  kSigmoid,
  kLogSigmoid,
  kLog,
  kExp,
  kSum,
  kMean,
  kReshape,
  kTranspose,
  kSlice,
  kConcat,
  kConv2d,
  kRowSoftmax,
  kAddRow,
  kTakeRows,
};

std::string_view op_name(OpKind op);

class Tape;

/// Handle to a node of a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  double item() const { return value().item(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardContext {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  std::span<const double> out_grad;
  /// One slot per input; null when that input needs no gradient.
  std::span<std::vector<double>* const> in_grads;
};

using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
using BackwardFn = std::function<void(const BackwardContext&)>;

struct Node {
  OpKind op = OpKind::kLeaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  bool requires_grad = false;
  Tensor* bound = nullptr;
  ForwardFn forward;
  BackwardFn backward;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked leaf.
  Var constant(Tensor t);
  /// Tracked leaf local to this tape; read its gradient with grad().
  Var input(Tensor t);
  /// Leaf bound to an external tensor. When `trainable`, backward() also
  /// accumulates the gradient into `t`'s grad buffer.
  Var param(Tensor& t, bool trainable = true);

  Var record(OpKind op, std::span<const Var> inputs, ForwardFn forward, BackwardFn backward);

  /// Reverse sweep from a scalar loss.
  void backward(const Var& loss);

  /// Gradient of a node after backward(); zeros when it received none.
  Tensor grad(const Var& v) const;

  /// Recomputes every node from the leaf values in record order.
  std::vector<Tensor> replay() const;

  /// Checks that inputs precede outputs and all ids exist.
  void validate() const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  /// Test hook: rewires a node's inputs so malformed records can be built.
  void debug_set_inputs(std::size_t id, std::vector<std::size_t> inputs) { nodes_.at(id).inputs = std::move(inputs); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// ---- core ops -------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var relu(Var a);
Var sigmoid(Var a);
/// log(sigmoid(x)) evaluated without overflow.
Var log_sigmoid(Var a);
Var log(Var a);
Var exp(Var a);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
Var transpose(Var a);
/// Elements [start, end) along `axis`.
Var slice(Var a, std::size_t axis, std::int64_t start, std::int64_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
/// x: (C,H,W), w: (O,C,kh,kw), bias: (O) or an invalid Var for none.
Var conv2d(Var x, Var w, Var bias, std::int64_t stride, std::int64_t pad);
Var row_softmax(Var a);
/// (N,D) + (D) broadcast over rows.
Var add_row(Var a, Var row);
/// Gathers rows of an (N,D) matrix.
Var take_rows(Var a, std::vector<std::int64_t> rows);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

}  // namespace esam3::num
