#pragma once

// Memory-conditioned tracking head and the Stage-2 distillation step.

#include "esam3/losses.hpp"
#include "esam3/memory/perceiver.hpp"
#include "esam3/promptloop/teacher.hpp"
#include "esam3/sim/scene.hpp"

namespace esam3::mem {

/// What the tracking head reads: value tokens plus key positions.
struct MemoryReadout {
  Var tokens;     // (M, D)
  Var positions;  // (M, D)
};

/// Compressed (Perceiver) or dense (all bank tokens) readout of a bank.
/// Dropout applies to the compressed tokens in training mode.
MemoryReadout readout_from_bank(Session& s, const ModelConfig& cfg, const MemoryBank& bank, int grid, bool compress);
/// The learned stand-in used when no memory exists.
MemoryReadout no_memory(Session& s, const ModelConfig& cfg);

struct TrackOutput {
  Var logits;   // (G, G)
  Var score;    // (1) track-score logit
  Var readout;  // (G*G, D) memory readout per query cell
};

void init_tracking_head(ParamStore& store, const ModelConfig& cfg, Rng& rng);

TrackOutput track_decode(Session& s, const ModelConfig& cfg, Var features, int concept_id, const MemoryReadout& memory);

struct TrackTarget {
  int identity = 0;
  int concept_id = 0;
  std::vector<Tensor> masks;  // per frame, (G, G); zeros where absent
};

struct ClipData {
  std::vector<Tensor> inputs;  // per frame, preprocessed
  std::vector<TrackTarget> tracks;
  int grid = 0;
};

/// Tracks are the identities visible in the first frame, at most
/// `max_tracks` of them (chosen by `rng`).
ClipData make_clip_data(const sim::SceneConfig& scfg, const std::vector<sim::SyntheticScene>& clip, Rng& rng,
                        int max_tracks = 8);

struct Stage2Options {
  /// Weight of the readout-matching term (compressed vs dense readout).
  double readout_weight = 0.0;
};

struct Stage2Terms {
  Var total, mask, score, readout;
  int steps = 0;
};

/// Teacher-forced: memory is written from (F_t, M_t) and frame t+1 decoded,
/// for t = 0..T-2. Mask (Dice+Focal) and track-score BCE are averaged over
/// steps and tracks. `features` may hold precomputed per-frame features.
Stage2Terms stage2_step(Session& s, const ModelConfig& cfg, const ClipData& clip, const prompt::Teacher& teacher,
                        const loss::LossWeights& w, const Stage2Options& opt = {},
                        const std::vector<Var>* features = nullptr);

/// Autoregressive tracking for evaluation: memory starts from the first
/// frame's mask and is then written from the model's own predictions.
/// Returns per-track predicted masks for frames 1..T-1. Without memory every
/// frame is decoded from the no-memory token.
std::vector<std::vector<Tensor>> track_clip(model::Student& student, const ClipData& clip, bool use_memory);

}  // namespace esam3::mem
