#pragma once

// Scenes and clips on disk: a directory of tensor files plus manifest.json.

#include <filesystem>

#include "esam3/sim/scene.hpp"

namespace esam3::sim {

struct DataSpec {
  SceneConfig scene;
  int num_scenes = 10;
  int num_clips = 0;
  int clip_length = 0;  // 0: drawn per clip from the config range
};

void to_json(nlohmann::json& j, const DataSpec& d);
void from_json(const nlohmann::json& j, DataSpec& d);

struct Dataset {
  SceneConfig config;
  std::uint64_t seed = 0;
  std::vector<std::string> scene_ids;
  std::vector<SyntheticScene> scenes;
  std::vector<std::string> clip_ids;
  std::vector<std::vector<SyntheticScene>> clips;
};

/// Scene i uses seed substream (seed, "scene/i"); clip i (seed, "clip/i").
Dataset generate_dataset(const DataSpec& spec, std::uint64_t seed);
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Seed of the i-th generated scene / clip.
std::uint64_t scene_seed(std::uint64_t root, std::size_t i);
std::uint64_t clip_seed(std::uint64_t root, std::size_t i);

}  // namespace esam3::sim
