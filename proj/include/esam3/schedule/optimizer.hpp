#pragma once

// AdamW with global-norm clipping and a two-group weight-decay split, plus
// parameter EMA.

#include <map>

#include "esam3/model/params.hpp"
#include "esam3/schedule/config.hpp"

namespace esam3::sched {

struct Moments {
  Tensor m, v;
};

struct AdamState {
  std::int64_t t = 0;
  std::map<std::string, Moments> moments;
};

struct StepReport {
  double lr = 0.0;
  double grad_norm = 0.0;
  double clip_scale = 1.0;
  int updated = 0;  // parameters that had a gradient
};

/// Encoder and projection parameters use weight_decay_encoder, the rest
/// weight_decay_other.
double weight_decay_for(ModuleTag tag, const StageConfig& cfg);

/// Updates every parameter whose tag is in cfg.trainable() and that holds a
/// gradient; the others are left untouched. Learning rate is lr_at(step).
/// Throws Error(kNumerical) naming the first parameter with a non-finite
/// gradient, before anything is modified.
StepReport optimizer_step(model::ParamStore& params, AdamState& state, const StageConfig& cfg, int step);

/// ema <- decay * ema + (1 - decay) * model, for every parameter of `model`.
void ema_update(const model::ParamStore& model, model::ParamStore& ema, double decay);

}  // namespace esam3::sched
