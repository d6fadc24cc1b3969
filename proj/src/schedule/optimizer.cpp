#include "esam3/schedule/optimizer.hpp"

#include <cmath>

#include "esam3/error.hpp"

namespace esam3::sched {

double weight_decay_for(ModuleTag tag, const StageConfig& cfg) {
  return (tag == ModuleTag::kEncoder || tag == ModuleTag::kProjection) ? cfg.weight_decay_encoder
                                                                       : cfg.weight_decay_other;
}

StepReport optimizer_step(model::ParamStore& params, AdamState& state, const StageConfig& cfg, int step) {
  const TagSet trainable = cfg.trainable();
  std::vector<model::Param*> active;
  double sq = 0.0;
  for (auto* p : params.params()) {
    if (!trainable.contains(p->tag) || !p->value.has_grad()) continue;
    for (double g : p->value.grad()) {
      if (!std::isfinite(g)) fail(ErrorKind::kNumerical, "non-finite gradient in parameter '" + p->name + "'");
      sq += g * g;
    }
    active.push_back(p);
  }

  StepReport r;
  r.lr = lr_at(step, cfg);
  r.grad_norm = std::sqrt(sq);
  if (cfg.clip_norm && r.grad_norm > *cfg.clip_norm) r.clip_scale = *cfg.clip_norm / r.grad_norm;
  r.updated = static_cast<int>(active.size());

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto* p : active) {
    auto it = state.moments.find(p->name);
    if (it == state.moments.end()) {
      it = state.moments.emplace(p->name, Moments{Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())})
               .first;
    }
    auto& mo = it->second;
    if (mo.m.shape() != p->value.shape()) {
      fail(ErrorKind::kShape, "optimizer state for '" + p->name + "' has shape " + num::shape_str(mo.m.shape()));
    }
    const auto& g = p->value.grad();
    auto w = p->value.data();
    auto m = mo.m.data();
    auto v = mo.v.data();
    const double decay = 1.0 - r.lr * weight_decay_for(p->tag, cfg);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * r.clip_scale;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = w[i] * decay - r.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  return r;
}

void ema_update(const model::ParamStore& model, model::ParamStore& ema, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) fail(ErrorKind::kInvalidArgument, "ema decay must lie in [0, 1)");
  for (const auto* p : model.params()) {
    if (!ema.contains(p->name)) fail(ErrorKind::kShape, "ema is missing parameter '" + p->name + "'");
    auto& e = ema.get(p->name);
    if (e.shape() != p->value.shape()) {
      fail(ErrorKind::kShape, "ema shape mismatch for '" + p->name + "': " + num::shape_str(e.shape()) + " vs " +
                                  num::shape_str(p->value.shape()));
    }
    auto ed = e.data();
    auto md = p->value.data();
    for (std::size_t i = 0; i < ed.size(); ++i) ed[i] = decay * ed[i] + (1.0 - decay) * md[i];
  }
}

}  // namespace esam3::sched
