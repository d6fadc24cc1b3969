#pragma once

// Training objectives. Each loss has a tape version (differentiable, used in
// the training steps) and a plain version (used for matching costs and
// evaluation). The two must agree to floating-point noise.

#include "esam3/numerics/tape.hpp"

namespace esam3::loss {

using num::Tensor;
using num::Var;

struct LossWeights {
  double lambda1 = 1.0;  // feature distillation
  double lambda2 = 1.0;  // mask distillation
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1.0;

  /// Throws Error(kInvalidArgument) when an invariant is violated.
  void validate() const;
};

/// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps).
Var dice_loss(Var pred_probs, const Tensor& target, double eps);
double dice_loss(const Tensor& pred_probs, const Tensor& target, double eps);

/// Mean over pixels of -alpha_t * (1 - p_t)^gamma * log(p_t).
Var focal_loss(Var pred_logits, const Tensor& target, double alpha, double gamma);
double focal_loss(const Tensor& pred_logits, const Tensor& target, double alpha, double gamma);

/// Mean squared elementwise difference.
Var feature_mse(Var student_proj, const Tensor& teacher_feat);
double feature_mse(const Tensor& student_proj, const Tensor& teacher_feat);

/// Mean binary cross-entropy on logits.
Var score_bce(Var logits, const Tensor& target);
double score_bce(const Tensor& logits, const Tensor& target);

/// task + lambda1 * feat + lambda2 * mask.
Var total_loss(Var task, Var feat, Var mask, const LossWeights& w);
double total_loss(double task, double feat, double mask, const LossWeights& w);

/// Dice on sigmoid(logits) plus focal on logits: the mask term shared by
/// every stage.
Var mask_loss(Var logits, const Tensor& target, const LossWeights& w);
double mask_loss(const Tensor& logits, const Tensor& target, const LossWeights& w);

}  // namespace esam3::loss
