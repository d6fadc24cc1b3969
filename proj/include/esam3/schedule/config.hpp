#pragma once

// Stage configuration, learning-rate schedule, freezing policy and the
// model-zoo registry.

#include <optional>

#include <json.hpp>

#include "esam3/losses.hpp"
#include "esam3/model/student.hpp"

namespace esam3::sched {

using model::ModuleTag;
using model::TagSet;
using num::Tensor;
using num::Var;

struct StageConfig {
  int stage = 1;
  double base_lr = 1e-4;
  double weight_decay_encoder = 0.05;
  double weight_decay_other = 0.01;
  /// Negative: min(1000, 10% of total_steps).
  int warmup_steps = -1;
  int total_steps = 2000;
  int batch_size = 4;       // images per step (stages 1 and 3)
  int clip_batch_size = 2;  // clips per step (stages 2 and 3)
  loss::LossWeights loss;
  /// Overrides freezing_policy() when set.
  std::optional<TagSet> trainable_modules;
  bool unfreeze_encoder = false;
  std::optional<double> clip_norm;
  std::optional<double> ema_decay;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int refinement_loops = 1;
  int max_instances = 16;
  int max_tracks = 8;
  double readout_weight = 0.0;
  int checkpoint_every = 0;  // 0: final checkpoint only

  int warmup() const;
  TagSet trainable() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const StageConfig& c);
/// Strict: unknown keys are rejected. Missing keys keep `c`'s values.
void from_json(const nlohmann::json& j, StageConfig& c);

/// Full-scale hyperparameters (batch sizes, learning rates, decay split).
StageConfig full_preset(int stage);
/// Scaled-down schedule for single-core runs on the synthetic data.
StageConfig desk_preset(int stage);

/// Linear warmup from 0, then cosine decay to 0 at total_steps.
double lr_at(int step, const StageConfig& cfg);

TagSet freezing_policy(int stage, bool unfreeze_encoder = false);

struct ZooEntry {
  std::string name;
  std::string family;
  std::string backbone;
  double nominal_params_m;
  model::EncoderConfig encoder;
};

const std::vector<ZooEntry>& model_zoo();
const ZooEntry& zoo_entry(const std::string& name);

}  // namespace esam3::sched
