#pragma once

// Analytic and measured cost of memory readout: queries attending to every
// memory token versus to K compressed latents.

#include <cstdint>
#include <string>

namespace esam3::mem {

struct AttentionCost {
  double flops_dense = 0;
  double flops_compressed = 0;
  double ratio() const { return flops_dense / flops_compressed; }
};

/// Multiply-accumulates for the score matrix (d_k per key) and the weighted
/// sum (C per key), summed over `queries` queries.
AttentionCost attention_cost(std::int64_t n_tokens, std::int64_t k, std::int64_t c, std::int64_t d_k,
                             std::int64_t queries = 1);

struct BenchRow {
  std::int64_t n_tokens, k, c, d_k;
  double flops_dense, flops_compressed;
  double wall_us_dense, wall_us_compressed;  // medians
};

/// Times both readouts `repeats` times on seeded random data.
BenchRow bench_readout(std::int64_t n_tokens, std::int64_t k, std::int64_t c, std::int64_t d_k, std::int64_t queries,
                       int repeats, std::uint64_t seed);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& r);

}  // namespace esam3::mem
