#include "esam3/sim/metrics.hpp"

#include "esam3/error.hpp"
#include "esam3/matching.hpp"

namespace esam3::sim {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    fail(ErrorKind::kShape, std::string(op) + ": masks " + num::shape_str(a.shape()) + " and " +
                                num::shape_str(b.shape()) + " differ or are not 2-D");
  }
}

double count(const Tensor& m) {
  double n = 0;
  for (double v : m.vec()) n += v > 0.5;
  return n;
}

}  // namespace

double mask_iou(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mask_iou");
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const bool x = a[i] > 0.5, y = b[i] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : inter / uni;
}

Tensor boundary(const Tensor& mask) {
  const auto h = mask.dim(0), w = mask.dim(1);
  Tensor out(mask.shape());
  auto on = [&](std::int64_t y, std::int64_t x) { return y >= 0 && x >= 0 && y < h && x < w && mask.at(y, x) > 0.5; };
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      if (on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1))) out.at(y, x) = 1.0;
  return out;
}

Tensor dilate(const Tensor& mask) {
  const auto h = mask.dim(0), w = mask.dim(1);
  Tensor out(mask.shape());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (mask.at(y, x) <= 0.5) continue;
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx)
          if (y + dy >= 0 && x + dx >= 0 && y + dy < h && x + dx < w) out.at(y + dy, x + dx) = 1.0;
    }
  return out;
}

double boundary_f(const Tensor& pred, const Tensor& gt) {
  same_shape(pred, gt, "boundary_f");
  const Tensor bp = boundary(pred), bg = boundary(gt);
  const double np = count(bp), ng = count(bg);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const Tensor dp = dilate(bp), dg = dilate(bg);
  double hit_p = 0, hit_g = 0;
  for (std::size_t i = 0; i < bp.numel(); ++i) {
    hit_p += bp[i] > 0.5 && dg[i] > 0.5;
    hit_g += bg[i] > 0.5 && dp[i] > 0.5;
  }
  const double precision = hit_p / np, recall = hit_g / ng;
  return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

MiouReport eval_miou(const std::vector<std::vector<Tensor>>& pred, const std::vector<std::vector<Tensor>>& gt) {
  if (gt.empty()) fail(ErrorKind::kInvalidArgument, "eval_miou: no ground truth");
  if (pred.size() != gt.size()) fail(ErrorKind::kInvalidArgument, "eval_miou: prediction/ground-truth scene counts differ");
  MiouReport r;
  double total = 0;
  for (std::size_t s = 0; s < gt.size(); ++s) {
    if (gt[s].empty()) fail(ErrorKind::kInvalidArgument, "eval_miou: scene without ground-truth instances");
    if (pred[s].size() != gt[s].size()) fail(ErrorKind::kInvalidArgument, "eval_miou: instance counts differ");
    double acc = 0;
    for (std::size_t i = 0; i < gt[s].size(); ++i) acc += mask_iou(pred[s][i], gt[s][i]);
    r.per_scene.push_back(acc / static_cast<double>(gt[s].size()));
    total += r.per_scene.back();
  }
  r.miou = total / static_cast<double>(gt.size());
  return r;
}

JfScore eval_jf(const std::vector<MaskTrack>& pred, const std::vector<MaskTrack>& gt) {
  if (gt.empty() || gt.front().empty()) fail(ErrorKind::kInvalidArgument, "eval_jf: no ground truth");
  const std::size_t frames = gt.front().size();
  for (const auto& t : gt)
    if (t.size() != frames) fail(ErrorKind::kInvalidArgument, "eval_jf: ragged ground-truth tracks");
  for (const auto& t : pred)
    if (t.size() != frames) fail(ErrorKind::kInvalidArgument, "eval_jf: prediction length differs from ground truth");

  std::vector<int> gt_to_pred(gt.size(), -1);
  if (!pred.empty()) {
    match::CostMatrix cost(gt.size(), pred.size());
    for (std::size_t g = 0; g < gt.size(); ++g)
      for (std::size_t p = 0; p < pred.size(); ++p) cost(g, p) = 1.0 - mask_iou(pred[p].front(), gt[g].front());
    if (gt.size() <= pred.size()) {
      gt_to_pred = match::hungarian(cost).row_to_col;
    } else {
      // Transpose so rows never exceed columns.
      match::CostMatrix t(pred.size(), gt.size());
      for (std::size_t g = 0; g < gt.size(); ++g)
        for (std::size_t p = 0; p < pred.size(); ++p) t(p, g) = cost(g, p);
      const auto a = match::hungarian(t);
      for (std::size_t p = 0; p < pred.size(); ++p)
        if (a.row_to_col[p] >= 0) gt_to_pred[static_cast<std::size_t>(a.row_to_col[p])] = static_cast<int>(p);
    }
  }
  JfScore s;
  double n = 0;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t f = 0; f < frames; ++f) {
      const Tensor empty(gt[g][f].shape());
      const Tensor& p = gt_to_pred[g] >= 0 ? pred[static_cast<std::size_t>(gt_to_pred[g])][f] : empty;
      s.j += mask_iou(p, gt[g][f]);
      s.f += boundary_f(p, gt[g][f]);
      n += 1;
    }
  }
  s.j /= n;
  s.f /= n;
  s.jf = 0.5 * (s.j + s.f);
  return s;
}

}  // namespace esam3::sim
