#pragma once

// Stage 3: concept-prompted detection with presence supervision, plus clip
// tracking through the Stage-2 machinery.

#include "esam3/memory/tracking.hpp"
#include "esam3/sim/detect.hpp"

namespace esam3::sim {

struct ExemplarRef {
  std::size_t image = 0;  // index into Stage3Batch::images
  Tensor mask;            // (G, G)
};

struct ConceptSample {
  int concept_id = 0;
  bool positive = false;
  std::vector<Tensor> instance_masks;  // (G, G) each; empty for negatives
  std::vector<ExemplarRef> exemplars;
};

struct Stage3Image {
  Tensor input;
  std::vector<ConceptSample> concepts;
};

struct Stage3Batch {
  std::vector<Stage3Image> images;
  std::vector<mem::ClipData> clips;
};

struct Stage3Sampling {
  int negatives_per_image = 2;   // hard negatives first, then random absent concepts
  double exemplar_probability = 0.5;
};

/// Positives are every concept present in a scene; negatives are sampled
/// from hard negatives, then other absent concepts. Exemplars (one or two)
/// are drawn from any batch image containing the concept.
Stage3Batch make_stage3_batch(const SceneConfig& scfg, const std::vector<SyntheticScene>& scenes,
                              const std::vector<std::vector<SyntheticScene>>& clips, Rng& rng,
                              const Stage3Sampling& sampling = {});

struct Stage3Terms {
  Var total, mask, loc, presence, track;
};

/// Image part: presence BCE over all concept samples; for positives,
/// queries are matched to instances by mask cost, matched queries learn the
/// instance mask with localization target 1, the rest an empty mask with
/// target 0. Clip part: the Stage-2 loss, averaged over clips.
Stage3Terms stage3_step(Session& s, const ModelConfig& cfg, const Stage3Batch& batch, const prompt::Teacher& teacher,
                        const loss::LossWeights& w);

}  // namespace esam3::sim
