#pragma once

// Procedural scenes and clips standing in for real image/video datasets.
// Every concept is a (shape, color) pair; hard negatives for a scene are the
// absent concepts that share a shape or a color with a present one.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "esam3/numerics/tensor.hpp"

namespace esam3::sim {

using num::Tensor;

enum class ShapeKind { kCircle, kSquare, kTriangle };

std::string shape_name(ShapeKind s);
ShapeKind shape_from_name(const std::string& name);

struct ColorSpec {
  std::string name;
  std::array<double, 3> rgb;
};

struct SceneConfig {
  int image_size = 128;
  std::vector<ShapeKind> shapes = {ShapeKind::kCircle, ShapeKind::kSquare, ShapeKind::kTriangle};
  std::vector<ColorSpec> colors = {{"red", {0.9, 0.15, 0.15}},
                                   {"green", {0.15, 0.8, 0.2}},
                                   {"blue", {0.2, 0.3, 0.95}},
                                   {"yellow", {0.9, 0.85, 0.15}}};
  /// Sampling weights per concept id; empty means uniform.
  std::vector<double> concept_weights;
  int min_instances = 1;
  int max_instances = 4;
  double min_radius = 12.0;
  double max_radius = 24.0;
  bool allow_occlusion = true;
  int min_visible_pixels = 60;
  double noise = 0.04;
  int clip_min_length = 4;
  int clip_max_length = 8;
  double max_speed = 3.0;
  /// Probability that a clip carries a static occluding bar.
  double occluder_probability = 0.3;
  int feature_stride = 8;
  int pad_multiple = 64;

  int num_concepts() const { return static_cast<int>(shapes.size() * colors.size()); }
  int feature_size() const;
  /// Throws Error(kInvalidArgument) for impossible or inconsistent settings.
  void validate() const;
  /// Normalized concept distribution.
  std::vector<double> concept_distribution() const;
};

void to_json(nlohmann::json& j, const SceneConfig& c);
/// Strict: unknown keys are rejected.
void from_json(const nlohmann::json& j, SceneConfig& c);

struct Concept {
  ShapeKind shape;
  int color;
};
Concept concept_of(const SceneConfig& cfg, int concept_id);
int concept_id(const SceneConfig& cfg, ShapeKind shape, int color);
std::string concept_name(const SceneConfig& cfg, int concept_id);

struct Instance {
  Tensor mask;  // (H, W) binary, visible pixels only
  int concept_id = 0;
  int identity = 0;
  double cx = 0, cy = 0, radius = 0;
};

struct Motion {
  int identity;
  double vx, vy;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  int frame_index = 0;
  Tensor image;  // (H, W, 3) in [0, 1]
  std::vector<Instance> instances;
  std::vector<Motion> motion;

  const Instance* find(int identity) const;
  std::vector<int> concepts_present() const;
};

SyntheticScene gen_scene(const SceneConfig& cfg, std::uint64_t seed);
/// Clip length is drawn from [clip_min_length, clip_max_length] unless
/// `length` is positive.
std::vector<SyntheticScene> gen_clip(const SceneConfig& cfg, std::uint64_t seed, int length = 0);

/// Absent concepts sharing shape or color with a present one.
std::vector<int> hard_negatives(const SceneConfig& cfg, const SyntheticScene& scene);

/// (H, W, 3) image -> normalized (3, H', W') network input, zero-padded to
/// multiples of cfg.pad_multiple.
Tensor preprocess(const SceneConfig& cfg, const Tensor& image);

/// Binary (H, W) mask -> binary (H/stride, W/stride): a cell is on when at
/// least half of its pixels are.
Tensor downsample_mask(const Tensor& mask, int stride);

/// Mask of `identity` at feature resolution, zeros when absent.
Tensor feature_mask(const SceneConfig& cfg, const SyntheticScene& scene, int identity);

}  // namespace esam3::sim
