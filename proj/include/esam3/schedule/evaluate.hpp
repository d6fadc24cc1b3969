#pragma once

// Evaluation protocols shared by the CLI and the acceptance checks.

#include "esam3/memory/tracking.hpp"
#include "esam3/promptloop/teacher.hpp"
#include "esam3/schedule/config.hpp"
#include "esam3/sim/metrics.hpp"

namespace esam3::sched {

enum class Predictor { kStudent, kTeacher, kEmpty };

Predictor predictor_from_name(const std::string& name);

/// Student (C, G, G) features for one preprocessed input.
Tensor student_feature_map(const model::Student& student, const Tensor& input);

struct PromptEval {
  sim::MiouReport report;
  int instances = 0;
};

/// Every instance is decoded from one initial prompt (seeded per scene) and
/// compared with the teacher mask at feature resolution.
PromptEval eval_prompt_miou(const model::Student& student, const prompt::Teacher& teacher,
                            const sim::SceneConfig& scfg, const std::vector<sim::SyntheticScene>& scenes,
                            std::uint64_t seed, Predictor predictor = Predictor::kStudent);

struct TrackEval {
  sim::JfScore score;          // identity-aligned, frames 1..T-1
  std::vector<double> per_clip_j;
  int tracks = 0;
};

/// Tracks start from the ground-truth first-frame mask; with `use_memory`
/// false every frame is decoded from the no-memory token.
TrackEval eval_tracking(const model::Student& student, const sim::SceneConfig& scfg,
                        const std::vector<std::vector<sim::SyntheticScene>>& clips, bool use_memory,
                        std::uint64_t seed, Predictor predictor = Predictor::kStudent);

struct PresenceEval {
  double bce = 0;              // mean over (scene, concept) pairs
  int pairs = 0;
  int positives = 0;
  int negatives = 0;
  int detections = 0;
  int gating_violations = 0;   // detections with score > min(presence, localization)
  double accuracy = 0;         // presence > 0.5 agrees with the label
};

/// Pairs are every present concept plus every hard negative (a random absent
/// concept when a scene has none).
PresenceEval eval_presence(const model::Student& student, const sim::SceneConfig& scfg,
                           const std::vector<sim::SyntheticScene>& scenes, std::uint64_t seed);

}  // namespace esam3::sched
