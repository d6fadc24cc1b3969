#include "esam3/model/layers.hpp"

#include <cmath>
#include <numbers>

#include "esam3/error.hpp"

namespace esam3::model {

void add_conv(ParamStore& store, const std::string& name, ModuleTag tag, int out, int in, int k, Rng& rng, bool bias,
              double gain) {
  const double stddev = gain * std::sqrt(2.0 / (in * k * k));
  store.add(name + ".w", tag, Tensor::randn({out, in, k, k}, rng, stddev));
  if (bias) store.add(name + ".b", tag, Tensor::zeros({out}));
}

void add_linear(ParamStore& store, const std::string& name, ModuleTag tag, int in, int out, Rng& rng, bool bias,
                double gain) {
  store.add(name + ".w", tag, Tensor::randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
  if (bias) store.add(name + ".b", tag, Tensor::zeros({out}));
}

void add_mlp(ParamStore& store, const std::string& name, ModuleTag tag, int in, int hidden, int out, Rng& rng) {
  add_linear(store, name + ".0", tag, in, hidden, rng, true, std::numbers::sqrt2);
  add_linear(store, name + ".1", tag, hidden, out, rng);
}

Var conv(Session& s, Var x, const std::string& name, std::int64_t stride, std::int64_t pad) {
  Var bias = s.store().contains(name + ".b") ? s.p(name + ".b") : Var();
  return num::conv2d(x, s.p(name + ".w"), bias, stride, pad);
}

Var linear(Session& s, Var x, const std::string& name) {
  Var y = num::matmul(x, s.p(name + ".w"));
  if (s.store().contains(name + ".b")) y = num::add_row(y, s.p(name + ".b"));
  return y;
}

Var mlp(Session& s, Var x, const std::string& name) {
  return linear(s, num::relu(linear(s, x, name + ".0")), name + ".1");
}

Var dropout(Session& s, Var x, double p) {
  if (!s.training() || s.rng() == nullptr || p <= 0) return x;
  Tensor keep(x.shape());
  for (double& v : keep.vec()) v = s.rng()->bernoulli(p) ? 0.0 : 1.0 / (1.0 - p);
  return num::mul(x, s.constant(std::move(keep)));
}

Var attention(Var q, Var k, Var v) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || q.shape()[1] != k.shape()[1]) {
    fail(ErrorKind::kShape, "attention: query " + num::shape_str(q.shape()) + " and key " + num::shape_str(k.shape()) +
                                " must be 2-D with equal d_k");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  Var scores = num::scale(num::matmul(q, num::transpose(k)), inv);
  return num::matmul(num::row_softmax(scores), v);
}

Var to_tokens(Var x) {
  const num::Shape sh = x.shape();
  if (sh.size() != 3) fail(ErrorKind::kShape, "to_tokens: expected (C, H, W), got " + num::shape_str(sh));
  return num::transpose(num::reshape(x, {sh[0], sh[1] * sh[2]}));
}

Var from_tokens(Var tokens, std::int64_t h, std::int64_t w) {
  const num::Shape sh = tokens.shape();
  if (sh.size() != 2 || sh[0] != h * w) fail(ErrorKind::kShape, "from_tokens: bad token shape " + num::shape_str(sh));
  return num::reshape(num::transpose(tokens), {sh[1], h, w});
}

Var repeat_row(Var row, std::int64_t n) {
  Var flat = num::reshape(row, {static_cast<std::int64_t>(row.numel())});
  return num::add_row(row.tape()->constant(Tensor::zeros({n, static_cast<std::int64_t>(row.numel())})), flat);
}

Tensor point_pe(double gx, double gy, std::int64_t h, std::int64_t w, int dim) {
  if (dim % 4 != 0) fail(ErrorKind::kInvalidArgument, "positional encoding dim must be a multiple of 4");
  const int nf = dim / 4;
  Tensor out({1, dim});
  const double u = gx / static_cast<double>(w), v = gy / static_cast<double>(h);
  for (int i = 0; i < nf; ++i) {
    const double f = std::numbers::pi * std::pow(2.0, 0.5 * i);
    out[static_cast<std::size_t>(4 * i)] = std::sin(f * u);
    out[static_cast<std::size_t>(4 * i + 1)] = std::cos(f * u);
    out[static_cast<std::size_t>(4 * i + 2)] = std::sin(f * v);
    out[static_cast<std::size_t>(4 * i + 3)] = std::cos(f * v);
  }
  return out;
}

Tensor grid_pe(std::int64_t h, std::int64_t w, int dim) {
  Tensor out({h * w, dim});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      Tensor row = point_pe(x + 0.5, y + 0.5, h, w, dim);
      std::copy(row.vec().begin(), row.vec().end(), out.vec().begin() + (y * w + x) * dim);
    }
  return out;
}

}  // namespace esam3::model
