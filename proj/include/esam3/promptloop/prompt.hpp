#pragma once

// Geometric prompts and the disagreement-driven refinement rules.

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "esam3/numerics/tensor.hpp"
#include "esam3/rng.hpp"

namespace esam3::prompt {

using num::Tensor;

enum class PromptKind { kPositivePoint, kNegativePoint, kBox };
std::string kind_name(PromptKind k);

/// Points use coords[0..1] = (x, y); boxes use (x1, y1, x2, y2) with
/// inclusive pixel corners. Coordinates are pixel indices.
struct Prompt {
  PromptKind kind = PromptKind::kPositivePoint;
  std::array<double, 4> coords{};
  int order_index = 0;

  static Prompt point(double x, double y, bool positive);
  static Prompt box(double x1, double y1, double x2, double y2);
  bool is_point() const { return kind != PromptKind::kBox; }
  /// Throws unless inside a width x height image (and x1 < x2, y1 < y2).
  void validate(int width, int height) const;
};

struct PromptSet {
  std::vector<Prompt> prompts;
  int concept_id = 0;

  /// Appends with the next order_index.
  void append(Prompt p);
  std::size_t size() const { return prompts.size(); }
};

/// Tight box with probability 1/2, otherwise the center point of the largest
/// 4-connected component. Degenerate boxes fall back to the point.
Prompt initial_prompt(const Tensor& mask, Rng& rng);

/// Centroid of the largest 4-connected component, moved to the nearest mask
/// pixel (ties: smallest y, then x) when it lands outside. Returns (x, y).
std::pair<int, int> center_point(const Tensor& mask);

struct Disagreement {
  Tensor false_negative;
  Tensor false_positive;
};

Disagreement disagreement(const Tensor& student_probs, const Tensor& teacher_mask, double threshold = 0.5);

/// Interior-most pixel of the larger region (ties go to false negatives);
/// nullopt when both regions are empty, meaning the instance has converged.
/// Coordinates are in the regions' own grid.
std::optional<Prompt> corrective_point(const Tensor& fn_region, const Tensor& fp_region, Rng& rng);

/// Euclidean distance from each region pixel to the nearest non-region pixel
/// (outside the grid counts as non-region); zero off the region.
Tensor interior_distance(const Tensor& region);

}  // namespace esam3::prompt
