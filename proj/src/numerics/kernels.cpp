#include "esam3/numerics/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "esam3/error.hpp"

namespace esam3::num::kernels {

namespace {

// C[m x n] (+)= A[m x k] * B[k x n]. Each output element is accumulated in
// increasing k, independent of m and n, so computing a subset of rows gives
// bit-identical results to computing all of them.
void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n, std::int64_t k) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> transposed(const double* x, std::int64_t rows, std::int64_t cols) {
  std::vector<double> t(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) t[static_cast<std::size_t>(c * rows + r)] = x[r * cols + c];
  return t;
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::int64_t m,
          std::int64_t n, std::int64_t k, bool trans_a, bool trans_b, bool accumulate) {
  std::vector<double> at, bt;
  const double* pa = a.data();
  const double* pb = b.data();
  if (trans_a) {
    at = transposed(pa, k, m);
    pa = at.data();
  }
  if (trans_b) {
    bt = transposed(pb, n, k);
    pb = bt.data();
  }
  if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
  gemm_nn(pa, pb, c.data(), m, n, k);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorKind::kShape, "matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                " do not conform");
  }
  Tensor out({a.dim(0), b.dim(1)});
  gemm(a.data(), b.data(), out.data(), a.dim(0), b.dim(1), a.dim(1), false, false, false);
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorKind::kShape, "transpose: expected a matrix, got " + shape_str(a.shape()));
  const auto rows = a.dim(0), cols = a.dim(1);
  Tensor out({cols, rows});
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out.at(c, r) = a.at(r, c);
  return out;
}

Tensor row_softmax(const Tensor& a) {
  if (a.rank() == 0) fail(ErrorKind::kShape, "row_softmax: empty shape");
  Tensor out = a;
  const auto cols = static_cast<std::size_t>(a.shape().back());
  const std::size_t rows = a.numel() / cols;
  auto d = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = d.subspan(r * cols, cols);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : row) v /= total;
  }
  return out;
}

void im2col(std::span<const double> x, const ConvGeometry& g, std::span<double> cols) {
  const auto oh = g.out_h(), ow = g.out_w();
  const auto plane = oh * ow;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        double* dst = cols.data() + ((c * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst + oy * ow, dst + (oy + 1) * ow, 0.0);
            continue;
          }
          const double* src = x.data() + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[oy * ow + ox] = (ix < 0 || ix >= g.width) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, const ConvGeometry& g, std::span<double> x) {
  const auto oh = g.out_h(), ow = g.out_w();
  const auto plane = oh * ow;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* src = cols.data() + ((c * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          double* dst = x.data() + (c * g.height + iy) * g.width;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0)) {
    fail(ErrorKind::kShape, "conv2d: input " + shape_str(x.shape()) + " and weight " + shape_str(w.shape()) +
                                " do not conform");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != w.dim(0))) {
    fail(ErrorKind::kShape, "conv2d: bias " + shape_str(bias->shape()) + " does not match weight " +
                                shape_str(w.shape()));
  }
  if (stride <= 0 || pad < 0) fail(ErrorKind::kInvalidArgument, "conv2d: invalid stride/pad");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(2), w.dim(3), stride, pad};
  if (g.out_h() <= 0 || g.out_w() <= 0) {
    fail(ErrorKind::kShape, "conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                                shape_str(x.shape()));
  }
  const auto k = g.channels * g.kernel_h * g.kernel_w;
  const auto plane = g.out_h() * g.out_w();
  std::vector<double> cols(static_cast<std::size_t>(k * plane));
  im2col(x.data(), g, cols);
  Tensor out({w.dim(0), g.out_h(), g.out_w()});
  gemm(w.data(), cols, out.data(), w.dim(0), plane, k, false, false, false);
  if (bias) {
    auto d = out.data();
    for (std::int64_t o = 0; o < w.dim(0); ++o)
      for (std::int64_t p = 0; p < plane; ++p) d[o * plane + p] += (*bias)[o];
  }
  return out;
}

}  // namespace esam3::num::kernels
