#include "esam3/memory/perceiver.hpp"

#include <cmath>

#include "esam3/error.hpp"
#include "esam3/model/layers.hpp"

namespace esam3::mem {

MemoryBank::MemoryBank(int capacity) : capacity_(capacity) {
  if (capacity <= 0) fail(ErrorKind::kInvalidArgument, "memory bank capacity must be positive");
}

void MemoryBank::push(MemoryEntry entry) {
  if (!entries_.empty()) {
    if (entry.frame_index <= entries_.back().frame_index) {
      fail(ErrorKind::kPrecondition, "memory bank: frame " + std::to_string(entry.frame_index) +
                                         " is not after last stored frame " +
                                         std::to_string(entries_.back().frame_index));
    }
    if (entry.object_id != entries_.back().object_id) fail(ErrorKind::kPrecondition, "memory bank: object id mismatch");
    if (entry.features.shape() != entries_.back().features.shape()) {
      fail(ErrorKind::kShape, "memory bank: feature shape changed within a run");
    }
  }
  entries_.push_back(std::move(entry));
  while (entries_.size() > static_cast<std::size_t>(capacity_)) entries_.pop_front();
}

MemoryBank bank_update(MemoryBank bank, MemoryEntry entry) {
  bank.push(std::move(entry));
  return bank;
}

namespace {

void check_weights(Var tokens, Var latents, Var wq, Var wk, Var wv) {
  const auto c = tokens.shape().at(1);
  if (latents.shape().size() != 2 || latents.shape()[1] != c || wq.shape() != wk.shape() || wq.shape()[0] != c ||
      wv.shape() != num::Shape{c, c}) {
    fail(ErrorKind::kShape, "perceiver: inconsistent shapes tokens " + num::shape_str(tokens.shape()) + ", latents " +
                                num::shape_str(latents.shape()) + ", W_Q " + num::shape_str(wq.shape()) + ", W_K " +
                                num::shape_str(wk.shape()) + ", W_V " + num::shape_str(wv.shape()) +
                                " (d_k must match)");
  }
}

}  // namespace

Var dense_compress(Var tokens, Var latents, Var wq, Var wk, Var wv) {
  check_weights(tokens, latents, wq, wk, wv);
  return model::attention(num::matmul(latents, wq), num::matmul(tokens, wk), num::matmul(tokens, wv));
}

std::vector<std::vector<std::int64_t>> window_rows(int frames, int h, int w, int win_h, int win_w) {
  if (win_h <= 0 || win_w <= 0 || h % win_h != 0 || w % win_w != 0) {
    const int ph = win_h > 0 ? (h + win_h - 1) / win_h * win_h : h;
    const int pw = win_w > 0 ? (w + win_w - 1) / win_w * win_w : w;
    fail(ErrorKind::kInvalidArgument, "perceiver: map " + std::to_string(h) + "x" + std::to_string(w) +
                                          " is not divisible by window " + std::to_string(win_h) + "x" +
                                          std::to_string(win_w) + "; pad to " + std::to_string(ph) + "x" +
                                          std::to_string(pw));
  }
  std::vector<std::vector<std::int64_t>> out;
  for (int wy = 0; wy < h / win_h; ++wy)
    for (int wx = 0; wx < w / win_w; ++wx) {
      std::vector<std::int64_t> rows;
      for (int f = 0; f < frames; ++f)
        for (int y = wy * win_h; y < (wy + 1) * win_h; ++y)
          for (int x = wx * win_w; x < (wx + 1) * win_w; ++x) rows.push_back((static_cast<std::int64_t>(f) * h + y) * w + x);
      out.push_back(std::move(rows));
    }
  return out;
}

Var spatial_compress(Var tokens, int frames, int h, int w, const PerceiverWeights& pw, const LatentSplit& split) {
  check_weights(tokens, pw.latents, pw.wq, pw.wk, pw.wv);
  if (tokens.shape()[0] != static_cast<std::int64_t>(frames) * h * w) {
    fail(ErrorKind::kShape, "spatial_compress: expected " + std::to_string(frames * h * w) + " tokens, got " +
                                num::shape_str(tokens.shape()));
  }
  if (split.k_global < 1 || split.k_local < 0 || pw.latents.shape()[0] != split.k_global + split.k_local) {
    fail(ErrorKind::kInvalidArgument, "spatial_compress: latent count does not match the global/local split");
  }
  Var global = dense_compress(tokens, num::slice(pw.latents, 0, 0, split.k_global), pw.wq, pw.wk, pw.wv);
  if (split.k_local == 0) return global;

  const auto windows = window_rows(frames, h, w, split.win_h, split.win_w);
  const auto n_win = static_cast<int>(windows.size());
  if (split.k_local % n_win != 0) {
    fail(ErrorKind::kInvalidArgument, "spatial_compress: k_local=" + std::to_string(split.k_local) +
                                          " is not divisible by the " + std::to_string(n_win) + " windows");
  }
  const int per = split.k_local / n_win;
  Var keys = num::matmul(tokens, pw.wk);
  Var values = num::matmul(tokens, pw.wv);
  Var queries = num::matmul(num::slice(pw.latents, 0, split.k_global, split.k_global + split.k_local), pw.wq);
  std::vector<Var> parts = {global};
  for (int i = 0; i < n_win; ++i) {
    Var q = num::slice(queries, 0, i * per, (i + 1) * per);
    parts.push_back(model::attention(q, num::take_rows(keys, windows[static_cast<std::size_t>(i)]),
                                     num::take_rows(values, windows[static_cast<std::size_t>(i)])));
  }
  return num::concat(parts, 0);
}

void init_memory(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const auto tag = model::ModuleTag::kPerceiver;
  const int d = cfg.dim;
  model::add_conv(store, "mem.enc0", tag, d, cfg.feat_channels + 1, 1, rng);
  model::add_conv(store, "mem.enc1", tag, d, d, 1, rng);
  store.add("perc.latents", tag, Tensor::randn({cfg.num_latents(), d}, rng, 1.0));
  store.add("perc.wq", tag, Tensor::randn({d, cfg.d_k}, rng, 1.0 / std::sqrt(d)));
  store.add("perc.wk", tag, Tensor::randn({d, cfg.d_k}, rng, 1.0 / std::sqrt(d)));
  store.add("perc.wv", tag, Tensor::randn({d, d}, rng, 1.0 / std::sqrt(d)));
}

Var memory_encode(Session& s, const ModelConfig& cfg, Var features, const Tensor& mask) {
  const num::Shape sh = features.shape();
  if (sh.size() != 3 || mask.rank() != 2 || mask.dim(0) != sh[1] || mask.dim(1) != sh[2]) {
    fail(ErrorKind::kShape, "memory_encode: features " + num::shape_str(sh) + " and mask " +
                                num::shape_str(mask.shape()) + " disagree");
  }
  Var m = s.constant(mask.reshaped({1, sh[1], sh[2]}));
  Var x = num::concat(std::vector<Var>{features, m}, 0);
  x = num::relu(model::conv(s, x, "mem.enc0", 1, 0));
  x = model::conv(s, x, "mem.enc1", 1, 0);
  return model::to_tokens(x) + s.constant(model::grid_pe(sh[1], sh[2], cfg.dim));
}

LatentSplit model_split(const ModelConfig& cfg) {
  return {cfg.latents_global, cfg.latents_local, cfg.window, cfg.window};
}

PerceiverWeights perceiver_weights(Session& s) {
  return {s.p("perc.latents"), s.p("perc.wq"), s.p("perc.wk"), s.p("perc.wv")};
}

Tensor latent_positions(const ModelConfig& cfg, int grid) {
  Tensor pos({cfg.num_latents(), cfg.dim});
  if (cfg.latents_local == 0) return pos;
  const int nw = (grid / cfg.window) * (grid / cfg.window);
  if (nw == 0 || cfg.latents_local % nw != 0) return pos;
  const int per = cfg.latents_local / nw;
  for (int i = 0; i < nw; ++i) {
    const int wy = i / (grid / cfg.window), wx = i % (grid / cfg.window);
    Tensor pe = model::point_pe((wx + 0.5) * cfg.window, (wy + 0.5) * cfg.window, grid, grid, cfg.dim);
    for (int r = 0; r < per; ++r) {
      const auto row = static_cast<std::size_t>(cfg.latents_global + i * per + r);
      std::copy(pe.vec().begin(), pe.vec().end(), pos.vec().begin() + static_cast<std::ptrdiff_t>(row * cfg.dim));
    }
  }
  return pos;
}

}  // namespace esam3::mem
