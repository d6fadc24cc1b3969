#include "esam3/sim/detect.hpp"

#include <algorithm>
#include <cmath>

#include "esam3/error.hpp"
#include "esam3/model/layers.hpp"
#include "esam3/promptloop/decoder.hpp"

namespace esam3::sim {

void init_detector(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const int d = cfg.dim;
  const auto tag = model::ModuleTag::kDecoder;
  model::add_linear(store, "det.cin", tag, d, d, rng);
  store.add("det.queries", tag, Tensor::randn({cfg.num_queries, d}, rng, 1.0));
  model::add_linear(store, "det.q", tag, d, d, rng);
  model::add_linear(store, "det.k", tag, d, d, rng);
  model::add_linear(store, "det.v", tag, d, d, rng);
  model::add_mlp(store, "det.mlp", tag, d, 2 * d, d, rng);
  model::add_conv(store, "det.c1", tag, d, d, 3, rng);
  model::add_mlp(store, "det.hyper", tag, d, d, d, rng);
  model::add_linear(store, "det.loc", tag, d, 1, rng);
  model::add_linear(store, "det.exemplar", tag, cfg.feat_channels, d, rng);
  const auto ptag = model::ModuleTag::kPresenceHead;
  store.add("presence.token", ptag, Tensor::randn({1, d}, rng, 1.0));
  model::add_mlp(store, "presence.mlp", ptag, d, d, 1, rng);
}

Var prompt_vector(Session& s, const ModelConfig& cfg, int concept_id, const std::vector<Exemplar>& exemplars) {
  Var v = model::concept_vec(s, cfg, concept_id);
  if (exemplars.empty()) return v;
  for (const auto& ex : exemplars) {
    const num::Shape sh = ex.features.shape();
    double area = 0;
    for (double m : ex.mask.vec()) area += m;
    if (area <= 0) fail(ErrorKind::kInvalidArgument, "exemplar mask is empty");
    Tensor weights = ex.mask.reshaped({1, sh[1] * sh[2]});
    for (double& w : weights.vec()) w /= area;
    // (1, N) x (N, C): masked mean of the feature tokens.
    Var pooled = num::matmul(s.constant(std::move(weights)), model::to_tokens(ex.features));
    v = v + model::linear(s, pooled, "det.exemplar");
  }
  return num::scale(v, 1.0 / static_cast<double>(1 + exemplars.size()));
}

DetectorOutput detector_forward(Session& s, const ModelConfig& cfg, Var embedding, Var prompt) {
  const num::Shape sh = embedding.shape();
  const std::int64_t g = sh[1], nq = cfg.num_queries;
  Var pvec = num::reshape(prompt, {cfg.dim});
  Var pix = num::relu(num::add_row(model::to_tokens(embedding), num::reshape(model::linear(s, prompt, "det.cin"), {cfg.dim})));
  Var q = num::concat(std::vector<Var>{num::add_row(s.p("det.queries"), pvec), s.p("presence.token") + prompt}, 0);
  Var keys = pix + s.constant(model::grid_pe(g, sh[2], cfg.dim));
  q = q + model::attention(model::linear(s, q, "det.q"), model::linear(s, keys, "det.k"), model::linear(s, pix, "det.v"));
  q = q + model::mlp(s, q, "det.mlp");
  Var queries = num::slice(q, 0, 0, nq);
  Var h = model::to_tokens(num::relu(model::conv(s, model::from_tokens(pix, g, sh[2]), "det.c1", 1, 1)));
  Var hyper = model::mlp(s, queries, "det.hyper");
  DetectorOutput out;
  out.mask_logits = num::transpose(num::matmul(h, num::transpose(hyper)));
  out.loc_logits = num::reshape(model::linear(s, queries, "det.loc"), {nq});
  out.presence_logit = num::reshape(model::mlp(s, num::slice(q, 0, nq, nq + 1), "presence.mlp"), {1});
  return out;
}

std::array<double, 4> mask_box(const Tensor& mask) {
  double x1 = 1e300, y1 = 1e300, x2 = -1, y2 = -1;
  for (std::int64_t y = 0; y < mask.dim(0); ++y)
    for (std::int64_t x = 0; x < mask.dim(1); ++x)
      if (mask.at(y, x) > 0.5) {
        x1 = std::min<double>(x1, x);
        y1 = std::min<double>(y1, y);
        x2 = std::max<double>(x2, x);
        y2 = std::max<double>(y2, y);
      }
  if (x2 < 0) return {0, 0, 0, 0};
  return {x1, y1, x2, y2};
}

Detection make_detection(Tensor mask, double presence, double localization) {
  if (!(presence >= 0 && presence <= 1 && localization >= 0 && localization <= 1)) {
    fail(ErrorKind::kNumerical, "detection scores must lie in [0, 1]");
  }
  Detection d;
  d.box = mask_box(mask);
  d.presence = presence;
  d.localization = localization;
  d.score = presence * localization;
  d.mask = std::move(mask);
  return d;
}

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void sort_by_score(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
}

}  // namespace

DetectResult detect(model::Student& student, const Tensor& features, int concept_id) {
  num::Tape tape;
  Session s(tape, student.params, {});
  Var emb = prompt::image_embedding(s, s.constant(features));
  DetectorOutput out = detector_forward(s, student.cfg, emb, prompt_vector(s, student.cfg, concept_id, {}));
  DetectResult r;
  r.presence = sigmoid(out.presence_logit.item());
  const auto g = features.dim(1);
  const auto& logits = out.mask_logits.value();
  for (int q = 0; q < student.cfg.num_queries; ++q) {
    Tensor mask({g, features.dim(2)});
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = logits[static_cast<std::size_t>(q) * mask.numel() + i] > 0 ? 1.0 : 0.0;
    r.detections.push_back(make_detection(std::move(mask), r.presence, sigmoid(out.loc_logits.value()[static_cast<std::size_t>(q)])));
  }
  sort_by_score(r.detections);
  return r;
}

DetectResult detect_oracle(const SceneConfig& cfg, const SyntheticScene& scene, int concept_id) {
  DetectResult r;
  for (const auto& inst : scene.instances) {
    if (inst.concept_id != concept_id) continue;
    r.presence = 1.0;
    r.detections.push_back(make_detection(feature_mask(cfg, scene, inst.identity), 1.0, 1.0));
  }
  return r;
}

}  // namespace esam3::sim
