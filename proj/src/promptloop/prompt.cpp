#include "esam3/promptloop/prompt.hpp"

#include <cmath>
#include <limits>

#include "esam3/error.hpp"

namespace esam3::prompt {

std::string kind_name(PromptKind k) {
  switch (k) {
    case PromptKind::kPositivePoint: return "positive_point";
    case PromptKind::kNegativePoint: return "negative_point";
    case PromptKind::kBox: return "box";
  }
  return "unknown";
}

Prompt Prompt::point(double x, double y, bool positive) {
  Prompt p;
  p.kind = positive ? PromptKind::kPositivePoint : PromptKind::kNegativePoint;
  p.coords = {x, y, 0, 0};
  return p;
}

Prompt Prompt::box(double x1, double y1, double x2, double y2) {
  Prompt p;
  p.kind = PromptKind::kBox;
  p.coords = {x1, y1, x2, y2};
  return p;
}

void Prompt::validate(int width, int height) const {
  auto in_x = [&](double v) { return v >= 0 && v <= width - 1; };
  auto in_y = [&](double v) { return v >= 0 && v <= height - 1; };
  if (!in_x(coords[0]) || !in_y(coords[1])) fail(ErrorKind::kInvalidArgument, kind_name(kind) + " prompt outside image");
  if (kind == PromptKind::kBox) {
    if (!in_x(coords[2]) || !in_y(coords[3])) fail(ErrorKind::kInvalidArgument, "box prompt outside image");
    if (!(coords[0] < coords[2] && coords[1] < coords[3])) fail(ErrorKind::kInvalidArgument, "box prompt needs x1 < x2 and y1 < y2");
  }
}

void PromptSet::append(Prompt p) {
  p.order_index = static_cast<int>(prompts.size());
  prompts.push_back(p);
}

namespace {

void require_2d(const Tensor& m, const char* what) {
  if (m.rank() != 2) fail(ErrorKind::kShape, std::string(what) + ": expected a 2-D mask, got " + num::shape_str(m.shape()));
}

// Labels of the largest 4-connected component (first in raster order on ties).
std::vector<std::pair<int, int>> largest_component(const Tensor& mask) {
  const int h = static_cast<int>(mask.dim(0)), w = static_cast<int>(mask.dim(1));
  std::vector<int> label(static_cast<std::size_t>(h * w), -1);
  std::vector<std::pair<int, int>> best, current, stack;
  int next = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask.at(y, x) <= 0.5 || label[static_cast<std::size_t>(y * w + x)] >= 0) continue;
      current.clear();
      stack.assign(1, {x, y});
      label[static_cast<std::size_t>(y * w + x)] = next;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        current.push_back({cx, cy});
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
          const int nx = cx + dx[d], ny = cy + dy[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          auto& l = label[static_cast<std::size_t>(ny * w + nx)];
          if (l >= 0 || mask.at(ny, nx) <= 0.5) continue;
          l = next;
          stack.push_back({nx, ny});
        }
      }
      if (current.size() > best.size()) best = current;
      ++next;
    }
  }
  return best;
}

}  // namespace

std::pair<int, int> center_point(const Tensor& mask) {
  require_2d(mask, "center_point");
  const auto comp = largest_component(mask);
  if (comp.empty()) fail(ErrorKind::kInvalidArgument, "center_point: empty mask");
  double sx = 0, sy = 0;
  for (auto [x, y] : comp) {
    sx += x;
    sy += y;
  }
  const double cx = sx / static_cast<double>(comp.size()), cy = sy / static_cast<double>(comp.size());
  const int rx = static_cast<int>(std::lround(cx)), ry = static_cast<int>(std::lround(cy));
  for (auto [x, y] : comp)
    if (x == rx && y == ry) return {x, y};
  // Nearest component pixel, ties to the smallest (y, x).
  std::pair<int, int> best{-1, -1};
  double best_d = std::numeric_limits<double>::infinity();
  for (auto [x, y] : comp) {
    const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    if (d < best_d || (d == best_d && std::make_pair(y, x) < std::make_pair(best.second, best.first))) {
      best_d = d;
      best = {x, y};
    }
  }
  return best;
}

Prompt initial_prompt(const Tensor& mask, Rng& rng) {
  require_2d(mask, "initial_prompt");
  const bool want_box = rng.bernoulli(0.5);
  int x1 = std::numeric_limits<int>::max(), y1 = x1, x2 = -1, y2 = -1;
  for (int y = 0; y < mask.dim(0); ++y)
    for (int x = 0; x < mask.dim(1); ++x)
      if (mask.at(y, x) > 0.5) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
  if (x2 < 0) fail(ErrorKind::kInvalidArgument, "initial_prompt: empty mask");
  if (want_box && x1 < x2 && y1 < y2) return Prompt::box(x1, y1, x2, y2);
  auto [cx, cy] = center_point(mask);
  return Prompt::point(cx, cy, true);
}

Disagreement disagreement(const Tensor& student_probs, const Tensor& teacher_mask, double threshold) {
  if (student_probs.shape() != teacher_mask.shape()) {
    fail(ErrorKind::kShape, "disagreement: shapes " + num::shape_str(student_probs.shape()) + " and " +
                                num::shape_str(teacher_mask.shape()) + " differ");
  }
  Disagreement d{Tensor(teacher_mask.shape()), Tensor(teacher_mask.shape())};
  for (std::size_t i = 0; i < teacher_mask.numel(); ++i) {
    const bool s = student_probs[i] >= threshold;
    const bool t = teacher_mask[i] > 0.5;
    d.false_negative[i] = t && !s ? 1.0 : 0.0;
    d.false_positive[i] = !t && s ? 1.0 : 0.0;
  }
  return d;
}

Tensor interior_distance(const Tensor& region) {
  require_2d(region, "interior_distance");
  const auto h = region.dim(0), w = region.dim(1);
  Tensor dist(region.shape());
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      if (region.at(y, x) <= 0.5) continue;
      // Nearest outside pixel, including the ring just beyond the grid.
      double best = std::numeric_limits<double>::infinity();
      for (std::int64_t oy = -1; oy <= h; ++oy) {
        for (std::int64_t ox = -1; ox <= w; ++ox) {
          const bool outside = oy < 0 || ox < 0 || oy >= h || ox >= w || region.at(oy, ox) <= 0.5;
          if (!outside) continue;
          const double dx = static_cast<double>(ox - x), dy = static_cast<double>(oy - y);
          best = std::min(best, dx * dx + dy * dy);
        }
      }
      dist.at(y, x) = std::sqrt(best);
    }
  }
  return dist;
}

std::optional<Prompt> corrective_point(const Tensor& fn_region, const Tensor& fp_region, Rng& rng) {
  require_2d(fn_region, "corrective_point");
  if (fn_region.shape() != fp_region.shape()) fail(ErrorKind::kShape, "corrective_point: region shapes differ");
  double n_fn = 0, n_fp = 0;
  for (double v : fn_region.vec()) n_fn += v > 0.5;
  for (double v : fp_region.vec()) n_fp += v > 0.5;
  if (n_fn == 0 && n_fp == 0) return std::nullopt;
  const bool positive = n_fn >= n_fp;
  const Tensor dist = interior_distance(positive ? fn_region : fp_region);
  double best = 0;
  for (double v : dist.vec()) best = std::max(best, v);
  std::vector<std::size_t> ties;
  for (std::size_t i = 0; i < dist.numel(); ++i)
    if (dist[i] == best) ties.push_back(i);
  const std::size_t pick = ties[rng.below(ties.size())];
  const auto w = static_cast<std::size_t>(fn_region.dim(1));
  return Prompt::point(static_cast<double>(pick % w), static_cast<double>(pick / w), positive);
}

}  // namespace esam3::prompt
