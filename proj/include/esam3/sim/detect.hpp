#pragma once

// Identity-agnostic concept detector with a presence head. A detection's
// final score is presence x localization.

#include <array>

#include "esam3/model/student.hpp"
#include "esam3/sim/scene.hpp"

namespace esam3::sim {

using model::ModelConfig;
using model::ParamStore;
using model::Session;
using num::Var;

void init_detector(ParamStore& store, const ModelConfig& cfg, Rng& rng);

struct DetectorOutput {
  Var mask_logits;     // (Q, G*G)
  Var loc_logits;      // (Q)
  Var presence_logit;  // (1)
};

/// An exemplar: a mask over one image's features, pooled into the concept.
struct Exemplar {
  Var features;  // (C, G, G)
  Tensor mask;   // (G, G)
};

/// Concept vector averaged with projected exemplar embeddings, (1, D).
Var prompt_vector(Session& s, const ModelConfig& cfg, int concept_id, const std::vector<Exemplar>& exemplars);

/// `embedding` from prompt::image_embedding.
DetectorOutput detector_forward(Session& s, const ModelConfig& cfg, Var embedding, Var prompt);

struct Detection {
  std::array<double, 4> box{};  // (x1, y1, x2, y2) in feature cells, inclusive
  double localization = 0;
  double presence = 0;
  double score = 0;  // presence * localization
  Tensor mask;       // (G, G) binary
};

Detection make_detection(Tensor mask, double presence, double localization);
std::array<double, 4> mask_box(const Tensor& mask);

struct DetectResult {
  double presence = 0;
  std::vector<Detection> detections;  // descending score
};

/// Runs the student detector on projected features (C, G, G). Every query
/// yields a detection; callers threshold on score.
DetectResult detect(model::Student& student, const Tensor& features, int concept_id);
/// Ground-truth masks at feature resolution, presence 1 when the concept is
/// in the scene (0 and no detections otherwise).
DetectResult detect_oracle(const SceneConfig& cfg, const SyntheticScene& scene, int concept_id);

}  // namespace esam3::sim
