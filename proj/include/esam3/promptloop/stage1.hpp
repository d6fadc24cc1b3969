#pragma once

// Stage 1: prompt-in-the-loop encoder distillation.

#include "esam3/losses.hpp"
#include "esam3/promptloop/decoder.hpp"
#include "esam3/promptloop/teacher.hpp"
#include "esam3/sim/scene.hpp"

namespace esam3::prompt {

struct DistillInstance {
  Tensor gt_mask;       // (G, G)
  Tensor teacher_mask;  // (G, G), for the initial prompt
  std::uint64_t teacher_feat_key = 0;
  PromptSet prompt_set;
};

struct DistillImage {
  std::string image_id;
  Tensor input;         // (3, H, W) preprocessed
  Tensor teacher_feat;  // (C, G, G)
  std::vector<DistillInstance> instances;
};

/// Preprocesses the scene, fetches teacher features (through the cache when
/// given), samples an initial prompt per instance and keeps at most
/// `max_instances` of them (chosen by `rng`).
DistillImage make_distill_image(const sim::SceneConfig& scfg, const sim::SyntheticScene& scene,
                                const std::string& image_id, const Teacher& teacher, TeacherCache* cache, Rng& rng,
                                int max_instances = 16);

/// Cache key for a scene's teacher features.
std::uint64_t teacher_key(const sim::SceneConfig& scfg, const std::string& image_id, const Teacher& teacher);

struct Stage1Terms {
  Var total, task, feat, mask;
  int decodes = 0;
  int refinements = 0;  // corrective prompts appended
};

/// Decodes every instance with its initial prompt, then runs
/// `refinement_loops` rounds that append one corrective point per
/// unconverged instance and decode again. Task and mask terms are summed over
/// rounds and divided by the instance count; the feature term is the mean
/// over images.
Stage1Terms stage1_step(Session& s, const ModelConfig& cfg, const std::vector<DistillImage>& batch,
                        const Teacher& teacher, const loss::LossWeights& w, int refinement_loops, int stride,
                        Rng& rng);

}  // namespace esam3::prompt
