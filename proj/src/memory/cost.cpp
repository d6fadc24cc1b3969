#include "esam3/memory/cost.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "esam3/error.hpp"
#include "esam3/rng.hpp"
#include "esam3/numerics/kernels.hpp"

namespace esam3::mem {

AttentionCost attention_cost(std::int64_t n_tokens, std::int64_t k, std::int64_t c, std::int64_t d_k,
                             std::int64_t queries) {
  if (n_tokens <= 0 || k <= 0 || c <= 0 || d_k <= 0 || queries <= 0) {
    fail(ErrorKind::kInvalidArgument, "attention_cost: sizes must be positive");
  }
  const double per_key = static_cast<double>(d_k + c) * static_cast<double>(queries);
  return {static_cast<double>(n_tokens) * per_key, static_cast<double>(k) * per_key};
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double time_readout(const num::Tensor& q, const num::Tensor& keys, const num::Tensor& values, double& sink) {
  const auto start = std::chrono::steady_clock::now();
  num::Tensor scores = num::kernels::matmul(q, num::kernels::transpose(keys));
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  for (double& v : scores.vec()) v *= inv;
  num::Tensor out = num::kernels::matmul(num::kernels::row_softmax(scores), values);
  const auto end = std::chrono::steady_clock::now();
  sink += out[0];
  return std::chrono::duration<double, std::micro>(end - start).count();
}

}  // namespace

BenchRow bench_readout(std::int64_t n_tokens, std::int64_t k, std::int64_t c, std::int64_t d_k, std::int64_t queries,
                       int repeats, std::uint64_t seed) {
  if (repeats <= 0) fail(ErrorKind::kInvalidArgument, "bench: repeats must be positive");
  const auto cost = attention_cost(n_tokens, k, c, d_k, queries);
  Rng rng = Rng::substream(seed, "bench");
  const num::Tensor q = num::Tensor::randn({queries, d_k}, rng);
  const num::Tensor kd = num::Tensor::randn({n_tokens, d_k}, rng);
  const num::Tensor vd = num::Tensor::randn({n_tokens, c}, rng);
  const num::Tensor kc = num::Tensor::randn({k, d_k}, rng);
  const num::Tensor vc = num::Tensor::randn({k, c}, rng);
  std::vector<double> dense, comp;
  double sink = 0;
  for (int r = 0; r < repeats; ++r) {
    // Alternate order so neither path always runs on a warm cache.
    if (r % 2 == 0) {
      dense.push_back(time_readout(q, kd, vd, sink));
      comp.push_back(time_readout(q, kc, vc, sink));
    } else {
      comp.push_back(time_readout(q, kc, vc, sink));
      dense.push_back(time_readout(q, kd, vd, sink));
    }
  }
  if (!std::isfinite(sink)) fail(ErrorKind::kNumerical, "bench: non-finite readout");
  return {n_tokens, k, c, d_k, cost.flops_dense, cost.flops_compressed, median(dense), median(comp)};
}

std::string bench_csv_header() {
  return "n_tokens,k,c,d_k,flops_dense,flops_compressed,wall_us_dense,wall_us_compressed";
}

std::string bench_csv_row(const BenchRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%lld,%lld,%.0f,%.0f,%.3f,%.3f", static_cast<long long>(r.n_tokens),
                static_cast<long long>(r.k), static_cast<long long>(r.c), static_cast<long long>(r.d_k), r.flops_dense,
                r.flops_compressed, r.wall_us_dense, r.wall_us_compressed);
  return buf;
}

}  // namespace esam3::mem
