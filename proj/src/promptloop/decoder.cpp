#include "esam3/promptloop/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "esam3/error.hpp"
#include "esam3/model/layers.hpp"

namespace esam3::prompt {

using model::ModuleTag;

void init_prompt_decoder(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const int d = cfg.dim;
  const auto tag = ModuleTag::kDecoder;
  model::add_conv(store, "dec.embed", tag, d, cfg.feat_channels, 3, rng);
  model::add_conv(store, "dec.prompt", tag, d, 3, 3, rng, false);
  store.add("dec.mask_token", tag, Tensor::randn({1, d}, rng, 1.0));
  store.add("dec.types", tag, Tensor::randn({4, d}, rng, 1.0));  // pos, neg, box corner 1, box corner 2
  model::add_linear(store, "dec.q", tag, d, d, rng);
  model::add_linear(store, "dec.k", tag, d, d, rng);
  model::add_linear(store, "dec.v", tag, d, d, rng);
  model::add_mlp(store, "dec.mlp", tag, d, 2 * d, d, rng);
  model::add_linear(store, "dec.inject", tag, d, d, rng);
  model::add_conv(store, "dec.c1", tag, d, d, 3, rng);
  model::add_conv(store, "dec.c2", tag, d, d, 3, rng);
  model::add_mlp(store, "dec.hyper", tag, d, d, d, rng);
  model::add_conv(store, "dec.out", tag, 1, d, 1, rng);
}

Var image_embedding(Session& s, Var features) { return num::relu(model::conv(s, features, "dec.embed", 1, 1)); }

Tensor dense_prompt_maps(const PromptSet& prompts, std::int64_t grid, int stride) {
  Tensor maps({3, grid, grid});
  const double st = stride;
  for (const auto& p : prompts.prompts) {
    if (p.is_point()) {
      const double px = (p.coords[0] + 0.5) / st, py = (p.coords[1] + 0.5) / st;
      const std::int64_t ch = p.kind == PromptKind::kPositivePoint ? 0 : 1;
      for (std::int64_t y = 0; y < grid; ++y)
        for (std::int64_t x = 0; x < grid; ++x) {
          const double dx = x + 0.5 - px, dy = y + 0.5 - py;
          auto& v = maps[static_cast<std::size_t>((ch * grid + y) * grid + x)];
          v = std::max(v, std::exp(-0.5 * (dx * dx + dy * dy)));
        }
    } else {
      // Box covers pixels [x1, x2 + 1) x [y1, y2 + 1).
      const double bx0 = p.coords[0] / st, by0 = p.coords[1] / st;
      const double bx1 = (p.coords[2] + 1) / st, by1 = (p.coords[3] + 1) / st;
      for (std::int64_t y = 0; y < grid; ++y) {
        const double oy = std::max(0.0, std::min<double>(y + 1, by1) - std::max<double>(y, by0));
        for (std::int64_t x = 0; x < grid; ++x) {
          const double ox = std::max(0.0, std::min<double>(x + 1, bx1) - std::max<double>(x, bx0));
          auto& v = maps[static_cast<std::size_t>((2 * grid + y) * grid + x)];
          v = std::max(v, ox * oy);
        }
      }
    }
  }
  return maps;
}

Var decode_prompts(Session& s, const ModelConfig& cfg, Var embedding, const PromptSet& prompts, int stride) {
  const num::Shape sh = embedding.shape();
  if (sh.size() != 3 || sh[0] != cfg.dim) fail(ErrorKind::kShape, "decode_prompts: bad embedding " + num::shape_str(sh));
  const std::int64_t g = sh[1], n = sh[1] * sh[2];
  Var maps = s.constant(dense_prompt_maps(prompts, g, stride));
  Var h1 = num::relu(embedding + model::conv(s, maps, "dec.prompt", 1, 1));

  // Sparse tokens: mask token, concept, then one token per point / box corner.
  std::vector<Var> tokens = {s.p("dec.mask_token"), model::concept_vec(s, cfg, prompts.concept_id)};
  Var types = s.p("dec.types");
  for (const auto& p : prompts.prompts) {
    auto token = [&](double x, double y, std::int64_t type) {
      Var pe = s.constant(model::point_pe((x + 0.5) / stride, (y + 0.5) / stride, g, sh[2], cfg.dim));
      tokens.push_back(pe + num::take_rows(types, {type}));
    };
    if (p.kind == PromptKind::kBox) {
      token(p.coords[0], p.coords[1], 2);
      token(p.coords[2], p.coords[3], 3);
    } else {
      token(p.coords[0], p.coords[1], p.kind == PromptKind::kPositivePoint ? 0 : 1);
    }
  }
  Var q = num::concat(tokens, 0);
  Var pix = model::to_tokens(h1);
  Var keys = pix + s.constant(model::grid_pe(g, sh[2], cfg.dim));
  q = q + model::attention(model::linear(s, q, "dec.q"), model::linear(s, keys, "dec.k"), model::linear(s, pix, "dec.v"));
  q = q + model::mlp(s, q, "dec.mlp");
  Var head = num::slice(q, 0, 0, 1);

  Var x = num::relu(num::add_row(pix, num::reshape(model::linear(s, head, "dec.inject"), {cfg.dim})));
  Var h2 = num::relu(model::conv(s, model::from_tokens(x, g, sh[2]), "dec.c1", 1, 1));
  Var h3 = num::relu(model::conv(s, h2, "dec.c2", 1, 1));
  Var hyper = model::mlp(s, head, "dec.hyper");
  Var dot = num::matmul(model::to_tokens(h3), num::transpose(hyper));  // (N, 1)
  Var bias = num::reshape(model::conv(s, h3, "dec.out", 1, 0), {n, 1});
  return num::reshape(dot + bias, {g, sh[2]});
}

}  // namespace esam3::prompt
