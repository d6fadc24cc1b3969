#pragma once

// Memory encoder, per-object memory bank and Perceiver compression with a
// global / windowed-local latent split.

#include <deque>

#include "esam3/model/student.hpp"

namespace esam3::mem {

using model::ModelConfig;
using model::ParamStore;
using model::Session;
using num::Tensor;
using num::Var;

/// Encoded frame memory, flattened (H*W, C) in row-major cell order.
struct MemoryEntry {
  Var features;
  int frame_index = 0;
  int object_id = 0;
};

/// Bounded FIFO of one object's memory entries.
class MemoryBank {
 public:
  explicit MemoryBank(int capacity = 7);

  /// Appends; evicts the oldest entry when over capacity. Frame indices must
  /// strictly increase and object ids must match.
  void push(MemoryEntry entry);
  const std::deque<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::deque<MemoryEntry> entries_;
};

MemoryBank bank_update(MemoryBank bank, MemoryEntry entry);

struct LatentSplit {
  int k_global = 16;
  int k_local = 112;
  int win_h = 4;
  int win_w = 4;
};

struct PerceiverWeights {
  Var latents;  // (K, C)
  Var wq;       // (C, d_k)
  Var wk;       // (C, d_k)
  Var wv;       // (C, C)
};

/// softmax((Q_lat W_Q)(F W_K)^T / sqrt(d_k)) (F W_V) with F: (N, C).
Var dense_compress(Var tokens, Var latents, Var wq, Var wk, Var wv);

/// Token rows of each local window, windows in row-major order. Tokens are
/// laid out (frames, h, w); a window collects its cells from every frame.
std::vector<std::vector<std::int64_t>> window_rows(int frames, int h, int w, int win_h, int win_w);

/// First k_global rows: dense_compress over all tokens. Remaining rows: each
/// window's k_local / num_windows latents attend to that window only.
Var spatial_compress(Var tokens, int frames, int h, int w, const PerceiverWeights& weights, const LatentSplit& split);

void init_memory(ParamStore& store, const ModelConfig& cfg, Rng& rng);

/// E_mem over [features; mask] -> (G*G, D) tokens with positional encoding.
Var memory_encode(Session& s, const ModelConfig& cfg, Var features, const Tensor& mask);

LatentSplit model_split(const ModelConfig& cfg);
PerceiverWeights perceiver_weights(Session& s);

/// Key positions of the compressed latents: zero for global latents, the
/// window-center encoding for local ones. (K, D).
Tensor latent_positions(const ModelConfig& cfg, int grid);

}  // namespace esam3::mem
