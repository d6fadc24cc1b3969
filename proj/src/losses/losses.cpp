#include "esam3/losses.hpp"

#include <cmath>
#include <string>

#include "esam3/error.hpp"

namespace esam3::loss {

namespace {

void check_same(const char* op, const num::Shape& a, const num::Shape& b) {
  if (a != b) fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + num::shape_str(a) + " vs " + num::shape_str(b));
}

void check_binary(const char* op, const Tensor& t) {
  for (double v : t.vec())
    if (v != 0.0 && v != 1.0) fail(ErrorKind::kInvalidArgument, std::string(op) + ": target values must be 0 or 1");
}

void check_finite(const char* op, const Tensor& t) {
  if (!t.all_finite()) fail(ErrorKind::kNumerical, std::string(op) + ": non-finite input");
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// +1 for positives, -1 for negatives: log p_t = log_sigmoid(sign * logit).
Tensor signs(const Tensor& target) {
  Tensor s(target.shape());
  for (std::size_t i = 0; i < s.numel(); ++i) s[i] = target[i] > 0.5 ? 1.0 : -1.0;
  return s;
}

}  // namespace

void LossWeights::validate() const {
  const double vals[] = {lambda1, lambda2, focal_alpha, focal_gamma, dice_eps};
  for (double v : vals)
    if (!std::isfinite(v)) fail(ErrorKind::kInvalidArgument, "loss weights must be finite");
  if (lambda1 < 0 || lambda2 < 0) fail(ErrorKind::kInvalidArgument, "lambda1/lambda2 must be non-negative");
  if (!(focal_alpha > 0 && focal_alpha < 1)) fail(ErrorKind::kInvalidArgument, "focal_alpha must lie in (0, 1)");
  if (focal_gamma < 0) fail(ErrorKind::kInvalidArgument, "focal_gamma must be non-negative");
  if (!(dice_eps > 0)) fail(ErrorKind::kInvalidArgument, "dice_eps must be positive");
}

Var dice_loss(Var pred_probs, const Tensor& target, double eps) {
  check_same("dice_loss", pred_probs.shape(), target.shape());
  check_binary("dice_loss", target);
  auto* tape = pred_probs.tape();
  double target_sum = 0.0;
  for (double v : target.vec()) target_sum += v;
  Var inter = num::sum(num::mul(pred_probs, tape->constant(target)));
  Var numer = num::add_scalar(num::scale(inter, 2.0), eps);
  Var denom = num::add_scalar(num::sum(pred_probs), target_sum + eps);
  return num::add_scalar(num::scale(num::div(numer, denom), -1.0), 1.0);
}

double dice_loss(const Tensor& pred_probs, const Tensor& target, double eps) {
  check_same("dice_loss", pred_probs.shape(), target.shape());
  check_binary("dice_loss", target);
  double inter = 0.0, ps = 0.0, ts = 0.0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    inter += pred_probs[i] * target[i];
    ps += pred_probs[i];
    ts += target[i];
  }
  return 1.0 - (2.0 * inter + eps) / (ps + ts + eps);
}

Var focal_loss(Var pred_logits, const Tensor& target, double alpha, double gamma) {
  check_same("focal_loss", pred_logits.shape(), target.shape());
  check_binary("focal_loss", target);
  check_finite("focal_loss", pred_logits.value());
  auto* tape = pred_logits.tape();
  Tensor alpha_t(target.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) alpha_t[i] = target[i] > 0.5 ? alpha : 1.0 - alpha;
  Var z = num::mul(pred_logits, tape->constant(signs(target)));
  Var per_pixel = num::mul(num::log_sigmoid(z), tape->constant(alpha_t));
  if (gamma != 0.0) {
    // (1 - p_t)^gamma = exp(gamma * log_sigmoid(-z))
    Var modulator = num::exp(num::scale(num::log_sigmoid(num::scale(z, -1.0)), gamma));
    per_pixel = num::mul(per_pixel, modulator);
  }
  return num::scale(num::mean(per_pixel), -1.0);
}

double focal_loss(const Tensor& pred_logits, const Tensor& target, double alpha, double gamma) {
  check_same("focal_loss", pred_logits.shape(), target.shape());
  check_binary("focal_loss", target);
  check_finite("focal_loss", pred_logits);
  double total = 0.0;
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const bool pos = target[i] > 0.5;
    const double z = pos ? pred_logits[i] : -pred_logits[i];
    double term = (pos ? alpha : 1.0 - alpha) * log_sigmoid(z);
    if (gamma != 0.0) term *= std::exp(gamma * log_sigmoid(-z));
    total += term;
  }
  return -total / static_cast<double>(target.numel());
}

Var feature_mse(Var student_proj, const Tensor& teacher_feat) {
  check_same("feature_mse", student_proj.shape(), teacher_feat.shape());
  Var d = num::sub(student_proj, student_proj.tape()->constant(teacher_feat));
  return num::mean(num::mul(d, d));
}

double feature_mse(const Tensor& student_proj, const Tensor& teacher_feat) {
  check_same("feature_mse", student_proj.shape(), teacher_feat.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < teacher_feat.numel(); ++i) {
    const double d = student_proj[i] - teacher_feat[i];
    s += d * d;
  }
  return s / static_cast<double>(teacher_feat.numel());
}

Var score_bce(Var logits, const Tensor& target) {
  check_same("score_bce", logits.shape(), target.shape());
  check_binary("score_bce", target);
  Var z = num::mul(logits, logits.tape()->constant(signs(target)));
  return num::scale(num::mean(num::log_sigmoid(z)), -1.0);
}

double score_bce(const Tensor& logits, const Tensor& target) {
  check_same("score_bce", logits.shape(), target.shape());
  check_binary("score_bce", target);
  double s = 0.0;
  for (std::size_t i = 0; i < target.numel(); ++i) s += log_sigmoid(target[i] > 0.5 ? logits[i] : -logits[i]);
  return -s / static_cast<double>(target.numel());
}

Var total_loss(Var task, Var feat, Var mask, const LossWeights& w) {
  for (const Var& v : {task, feat, mask})
    if (v.numel() != 1) fail(ErrorKind::kShape, "total_loss: terms must be scalar");
  return num::add(task, num::add(num::scale(feat, w.lambda1), num::scale(mask, w.lambda2)));
}

double total_loss(double task, double feat, double mask, const LossWeights& w) {
  if (!std::isfinite(task) || !std::isfinite(feat) || !std::isfinite(mask)) {
    fail(ErrorKind::kNumerical, "total_loss: non-finite term");
  }
  return task + w.lambda1 * feat + w.lambda2 * mask;
}

Var mask_loss(Var logits, const Tensor& target, const LossWeights& w) {
  return num::add(dice_loss(num::sigmoid(logits), target, w.dice_eps),
                  focal_loss(logits, target, w.focal_alpha, w.focal_gamma));
}

double mask_loss(const Tensor& logits, const Tensor& target, const LossWeights& w) {
  Tensor probs = logits;
  for (auto& v : probs.vec()) v = sigmoid(v);
  return dice_loss(probs, target, w.dice_eps) + focal_loss(logits, target, w.focal_alpha, w.focal_gamma);
}

}  // namespace esam3::loss
