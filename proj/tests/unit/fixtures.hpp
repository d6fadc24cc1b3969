#pragma once

#include <filesystem>
#include <string>

#include "esam3/model/student.hpp"
#include "esam3/sim/scene.hpp"

namespace esam3::fixtures {

/// 64x64 scenes, 8x8 feature grid.
inline sim::SceneConfig small_scene() {
  sim::SceneConfig s;
  s.image_size = 64;
  s.min_radius = 8;
  s.max_radius = 12;
  s.min_visible_pixels = 30;
  s.max_instances = 2;
  s.clip_min_length = 3;
  s.clip_max_length = 4;
  return s;
}

inline model::ModelConfig small_model() {
  model::ModelConfig m;
  m.encoder = {{8, 8, 16}, {0, 0, 0}};
  m.feat_channels = 16;
  m.dim = 16;
  m.d_k = 8;
  m.latents_global = 4;
  m.latents_local = 8;
  m.bank_capacity = 3;
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("esam3_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace esam3::fixtures
