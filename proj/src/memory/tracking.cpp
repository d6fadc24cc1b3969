#include "esam3/memory/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "esam3/error.hpp"
#include "esam3/model/layers.hpp"

namespace esam3::mem {

void init_tracking_head(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const auto tag = model::ModuleTag::kTrackingHead;
  const int d = cfg.dim;
  model::add_conv(store, "track.in", tag, d, cfg.feat_channels, 1, rng);
  model::add_linear(store, "track.q", tag, d, d, rng);
  model::add_linear(store, "track.k", tag, d, d, rng);
  model::add_linear(store, "track.v", tag, d, d, rng);
  model::add_conv(store, "track.c1", tag, d, 2 * d, 3, rng);
  model::add_conv(store, "track.c2", tag, d, d, 3, rng);
  model::add_conv(store, "track.out", tag, 1, d, 1, rng);
  model::add_linear(store, "track.score", tag, d, 1, rng);
  store.add("track.no_memory", tag, Tensor::randn({1, d}, rng, 1.0));
}

MemoryReadout readout_from_bank(Session& s, const ModelConfig& cfg, const MemoryBank& bank, int grid, bool compress) {
  if (bank.empty()) fail(ErrorKind::kPrecondition, "readout_from_bank: empty bank (use no_memory)");
  std::vector<Var> parts;
  for (const auto& e : bank.entries()) parts.push_back(e.features);
  Var tokens = parts.size() == 1 ? parts.front() : num::concat(parts, 0);
  if (!compress) return {tokens, s.constant(Tensor::zeros(tokens.shape()))};
  Var comp = spatial_compress(tokens, static_cast<int>(parts.size()), grid, grid, perceiver_weights(s), model_split(cfg));
  comp = model::dropout(s, comp, cfg.perceiver_dropout);
  return {comp, s.constant(latent_positions(cfg, grid))};
}

MemoryReadout no_memory(Session& s, const ModelConfig& cfg) {
  return {s.p("track.no_memory"), s.constant(Tensor::zeros({1, cfg.dim}))};
}

TrackOutput track_decode(Session& s, const ModelConfig& cfg, Var features, int concept_id, const MemoryReadout& memory) {
  const num::Shape sh = features.shape();
  if (sh.size() != 3) fail(ErrorKind::kShape, "track_decode: expected (C, G, G) features");
  const std::int64_t g = sh[1], n = sh[1] * sh[2];
  Var q = model::to_tokens(model::conv(s, features, "track.in", 1, 0));
  q = q + s.constant(model::grid_pe(g, sh[2], cfg.dim));
  q = num::add_row(q, num::reshape(model::concept_vec(s, cfg, concept_id), {cfg.dim}));
  Var keys = memory.tokens + memory.positions;
  Var r = model::attention(model::linear(s, q, "track.q"), model::linear(s, keys, "track.k"),
                           model::linear(s, memory.tokens, "track.v"));
  Var x = num::concat(std::vector<Var>{q, r}, 1);  // (N, 2D)
  Var h = num::relu(model::conv(s, model::from_tokens(x, g, sh[2]), "track.c1", 1, 1));
  h = num::relu(model::conv(s, h, "track.c2", 1, 1));
  Var logits = num::reshape(model::conv(s, h, "track.out", 1, 0), {g, sh[2]});
  Var pooled = num::matmul(s.constant(Tensor({1, n}, 1.0 / static_cast<double>(n))), model::to_tokens(h));
  Var score = num::reshape(model::linear(s, pooled, "track.score"), {1});
  return {logits, score, r};
}

ClipData make_clip_data(const sim::SceneConfig& scfg, const std::vector<sim::SyntheticScene>& clip, Rng& rng,
                        int max_tracks) {
  if (clip.size() < 2) fail(ErrorKind::kInvalidArgument, "clip needs at least 2 frames");
  if (max_tracks < 1 || max_tracks > 8) fail(ErrorKind::kInvalidArgument, "max_tracks must lie in [1, 8]");
  ClipData data;
  data.grid = scfg.feature_size();
  for (const auto& f : clip) data.inputs.push_back(sim::preprocess(scfg, f.image));
  std::vector<const sim::Instance*> first;
  for (const auto& inst : clip.front().instances) first.push_back(&inst);
  if (first.size() > static_cast<std::size_t>(max_tracks)) {
    for (std::size_t i = first.size() - 1; i > 0; --i) std::swap(first[i], first[rng.below(i + 1)]);
    first.resize(static_cast<std::size_t>(max_tracks));
    std::sort(first.begin(), first.end(), [](auto a, auto b) { return a->identity < b->identity; });
  }
  for (const auto* inst : first) {
    TrackTarget t{inst->identity, inst->concept_id, {}};
    for (const auto& f : clip) t.masks.push_back(sim::feature_mask(scfg, f, inst->identity));
    data.tracks.push_back(std::move(t));
  }
  return data;
}

namespace {

double mask_area(const Tensor& m) { return std::accumulate(m.vec().begin(), m.vec().end(), 0.0); }

}  // namespace

Stage2Terms stage2_step(Session& s, const ModelConfig& cfg, const ClipData& clip, const prompt::Teacher& teacher,
                        const loss::LossWeights& w, const Stage2Options& opt, const std::vector<Var>* features) {
  const std::size_t frames = clip.inputs.size();
  if (frames < 2) fail(ErrorKind::kInvalidArgument, "stage2_step: clip shorter than 2 frames");
  if (clip.tracks.empty()) fail(ErrorKind::kInvalidArgument, "stage2_step: clip has no tracks");
  if (clip.tracks.size() > 8) fail(ErrorKind::kInvalidArgument, "stage2_step: more than 8 tracks");
  (void)teacher;  // oracle targets: the teacher's masks are the clip's ground truth

  std::vector<Var> feats;
  if (features) {
    feats = *features;
  } else {
    for (const auto& x : clip.inputs) feats.push_back(model::student_features(s, cfg, s.constant(x)));
  }
  std::vector<Var> mask_terms, score_terms, readout_terms;
  for (const auto& track : clip.tracks) {
    MemoryBank bank(cfg.bank_capacity);
    for (std::size_t t = 0; t + 1 < frames; ++t) {
      bank.push({memory_encode(s, cfg, feats[t], track.masks[t]), static_cast<int>(t), track.identity});
      MemoryReadout mem = readout_from_bank(s, cfg, bank, clip.grid, cfg.compress_memory);
      TrackOutput out = track_decode(s, cfg, feats[t + 1], track.concept_id, mem);
      const Tensor& target = track.masks[t + 1];
      mask_terms.push_back(loss::mask_loss(out.logits, target, w));
      score_terms.push_back(loss::score_bce(out.score, Tensor::scalar(mask_area(target) > 0 ? 1.0 : 0.0)));
      if (opt.readout_weight > 0 && cfg.compress_memory) {
        // Target: readout through the uncompressed bank, held fixed.
        num::Tape ref_tape;
        model::Session ref(ref_tape, s.store(), {});
        MemoryBank dense_bank(cfg.bank_capacity);
        for (const auto& e : bank.entries())
          dense_bank.push({ref.constant(e.features.value()), e.frame_index, e.object_id});
        MemoryReadout dense = readout_from_bank(ref, cfg, dense_bank, clip.grid, false);
        Tensor target_readout =
            track_decode(ref, cfg, ref.constant(feats[t + 1].value()), track.concept_id, dense).readout.value();
        readout_terms.push_back(loss::feature_mse(out.readout, target_readout));
      }
    }
  }
  auto mean_of = [](const std::vector<Var>& v) {
    Var acc = v.front();
    for (std::size_t i = 1; i < v.size(); ++i) acc = acc + v[i];
    return num::scale(acc, 1.0 / static_cast<double>(v.size()));
  };
  Stage2Terms out;
  out.steps = static_cast<int>(mask_terms.size());
  out.mask = mean_of(mask_terms);
  out.score = mean_of(score_terms);
  out.total = out.mask + out.score;
  if (!readout_terms.empty()) {
    out.readout = mean_of(readout_terms);
    out.total = out.total + num::scale(out.readout, opt.readout_weight);
  } else {
    out.readout = s.constant(Tensor::zeros({1}));
  }
  return out;
}

std::vector<std::vector<Tensor>> track_clip(model::Student& student, const ClipData& clip, bool use_memory) {
  const auto& cfg = student.cfg;
  std::vector<std::vector<Tensor>> result;
  num::Tape tape;
  model::Session s(tape, student.params, {});
  std::vector<Var> feats;
  for (const auto& x : clip.inputs) feats.push_back(model::student_features(s, cfg, s.constant(x)));
  for (const auto& track : clip.tracks) {
    std::vector<Tensor> preds;
    MemoryBank bank(cfg.bank_capacity);
    Tensor last = track.masks.front();
    for (std::size_t t = 0; t + 1 < clip.inputs.size(); ++t) {
      TrackOutput out;
      if (use_memory) {
        bank.push({memory_encode(s, cfg, feats[t], last), static_cast<int>(t), track.identity});
        out = track_decode(s, cfg, feats[t + 1], track.concept_id, readout_from_bank(s, cfg, bank, clip.grid, cfg.compress_memory));
      } else {
        out = track_decode(s, cfg, feats[t + 1], track.concept_id, no_memory(s, cfg));
      }
      Tensor pred(out.logits.shape());
      const bool alive = out.score.item() > 0;
      for (std::size_t i = 0; i < pred.numel(); ++i) pred[i] = alive && out.logits.value()[i] > 0 ? 1.0 : 0.0;
      preds.push_back(pred);
      last = pred;
    }
    result.push_back(std::move(preds));
  }
  return result;
}

}  // namespace esam3::mem
