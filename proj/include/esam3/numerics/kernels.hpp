#pragma once

// Plain (untracked) tensor kernels. The tape ops in tape.hpp are built on
// these; the memory benchmark and inference paths call them directly.

#include <span>

#include "esam3/numerics/tensor.hpp"

namespace esam3::num::kernels {

/// C = op(A) * op(B) for row-major matrices; trans flags transpose the operand.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::int64_t m,
          std::int64_t n, std::int64_t k, bool trans_a, bool trans_b, bool accumulate);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Softmax over the last axis with max subtraction.
Tensor row_softmax(const Tensor& a);

struct ConvGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride, pad;
  std::int64_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::int64_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
};

/// (C, H, W) -> (C*kh*kw, out_h*out_w).
void im2col(std::span<const double> x, const ConvGeometry& g, std::span<double> cols);
/// Scatter-add inverse of im2col.
void col2im(std::span<const double> cols, const ConvGeometry& g, std::span<double> x);

/// x: (C, H, W), w: (O, C, kh, kw), bias: (O) or empty -> (O, out_h, out_w).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::int64_t stride, std::int64_t pad);

}  // namespace esam3::num::kernels
