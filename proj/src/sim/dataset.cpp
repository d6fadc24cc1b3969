#include "esam3/sim/dataset.hpp"

#include <cstdio>
#include <fstream>

#include "esam3/error.hpp"
#include "esam3/numerics/serialize.hpp"

namespace esam3::sim {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const DataSpec& d) {
  j = {{"scene", d.scene}, {"num_scenes", d.num_scenes}, {"num_clips", d.num_clips}, {"clip_length", d.clip_length}};
}

void from_json(const json& j, DataSpec& d) {
  for (const auto& [k, v] : j.items())
    if (k != "scene" && k != "num_scenes" && k != "num_clips" && k != "clip_length")
      fail(ErrorKind::kInvalidArgument, "data config: unknown key '" + k + "'");
  try {
    if (j.contains("scene")) j.at("scene").get_to(d.scene);
    if (j.contains("num_scenes")) j.at("num_scenes").get_to(d.num_scenes);
    if (j.contains("num_clips")) j.at("num_clips").get_to(d.num_clips);
    if (j.contains("clip_length")) j.at("clip_length").get_to(d.clip_length);
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("data config: ") + e.what());
  }
  if (d.num_scenes < 0 || d.num_clips < 0 || d.clip_length < 0 || d.clip_length == 1) {
    fail(ErrorKind::kInvalidArgument, "data config: counts must be non-negative and clip_length 0 or >= 2");
  }
}

std::uint64_t scene_seed(std::uint64_t root, std::size_t i) {
  return Rng::substream(root, "scene/" + std::to_string(i)).next();
}

std::uint64_t clip_seed(std::uint64_t root, std::size_t i) {
  return Rng::substream(root, "clip/" + std::to_string(i)).next();
}

Dataset generate_dataset(const DataSpec& spec, std::uint64_t seed) {
  spec.scene.validate();
  Dataset d;
  d.config = spec.scene;
  d.seed = seed;
  char buf[32];
  for (int i = 0; i < spec.num_scenes; ++i) {
    std::snprintf(buf, sizeof buf, "scene_%05d", i);
    d.scene_ids.push_back(buf);
    d.scenes.push_back(gen_scene(spec.scene, scene_seed(seed, static_cast<std::size_t>(i))));
  }
  for (int i = 0; i < spec.num_clips; ++i) {
    std::snprintf(buf, sizeof buf, "clip_%05d", i);
    d.clip_ids.push_back(buf);
    d.clips.push_back(gen_clip(spec.scene, clip_seed(seed, static_cast<std::size_t>(i)), spec.clip_length));
  }
  return d;
}

namespace {

json write_frame(const SceneConfig& cfg, const SyntheticScene& s, const fs::path& root, const std::string& rel) {
  fs::create_directories(root / rel);
  num::save_tensor(root / rel / "image.tensor", s.image);
  json instances = json::array();
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    const auto& inst = s.instances[i];
    const std::string mask_rel = rel + "/mask_" + std::to_string(inst.identity) + ".tensor";
    num::save_tensor(root / mask_rel, inst.mask);
    instances.push_back({{"identity", inst.identity},
                         {"concept_id", inst.concept_id},
                         {"concept", concept_name(cfg, inst.concept_id)},
                         {"cx", inst.cx},
                         {"cy", inst.cy},
                         {"radius", inst.radius},
                         {"mask", mask_rel}});
  }
  json motion = json::array();
  for (const auto& m : s.motion) motion.push_back({{"identity", m.identity}, {"vx", m.vx}, {"vy", m.vy}});
  return {{"seed", s.seed},
          {"frame_index", s.frame_index},
          {"image", rel + "/image.tensor"},
          {"instances", instances},
          {"motion", motion}};
}

SyntheticScene read_frame(const json& j, const fs::path& root) {
  SyntheticScene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.frame_index = j.at("frame_index").get<int>();
  s.image = num::load_tensor(root / j.at("image").get<std::string>());
  for (const auto& inst : j.at("instances")) {
    Instance in;
    in.identity = inst.at("identity").get<int>();
    in.concept_id = inst.at("concept_id").get<int>();
    in.cx = inst.at("cx").get<double>();
    in.cy = inst.at("cy").get<double>();
    in.radius = inst.at("radius").get<double>();
    in.mask = num::load_tensor(root / inst.at("mask").get<std::string>());
    s.instances.push_back(std::move(in));
  }
  for (const auto& m : j.at("motion")) s.motion.push_back({m.at("identity"), m.at("vx"), m.at("vy")});
  return s;
}

}  // namespace

void save_dataset(const Dataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create dataset directory " + dir.string() + ": " + ec.message());
  json scenes = json::array(), clips = json::array();
  std::vector<int> histogram(static_cast<std::size_t>(data.config.num_concepts()), 0);
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    json s = write_frame(data.config, data.scenes[i], dir, "scenes/" + data.scene_ids[i]);
    s["id"] = data.scene_ids[i];
    scenes.push_back(s);
    for (const auto& inst : data.scenes[i].instances) ++histogram[static_cast<std::size_t>(inst.concept_id)];
  }
  for (std::size_t i = 0; i < data.clips.size(); ++i) {
    json frames = json::array();
    for (std::size_t t = 0; t < data.clips[i].size(); ++t)
      frames.push_back(write_frame(data.config, data.clips[i][t], dir, "clips/" + data.clip_ids[i] + "/frame_" + std::to_string(t)));
    clips.push_back({{"id", data.clip_ids[i]}, {"frames", frames}});
  }
  json concepts = json::array();
  for (int c = 0; c < data.config.num_concepts(); ++c)
    concepts.push_back({{"id", c}, {"name", concept_name(data.config, c)}, {"count", histogram[static_cast<std::size_t>(c)]}});
  json manifest = {{"format", "esam3-dataset"}, {"version", 1},        {"seed", data.seed},
                   {"scene_config", data.config}, {"concepts", concepts}, {"scenes", scenes},
                   {"clips", clips}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::kIo, "no manifest.json in " + dir.string());
  Dataset d;
  try {
    const json m = json::parse(in);
    if (m.at("format") != "esam3-dataset") fail(ErrorKind::kIo, "not an esam3 dataset: " + dir.string());
    d.config = m.at("scene_config").get<SceneConfig>();
    d.seed = m.at("seed").get<std::uint64_t>();
    for (const auto& s : m.at("scenes")) {
      d.scene_ids.push_back(s.at("id").get<std::string>());
      d.scenes.push_back(read_frame(s, dir));
    }
    for (const auto& c : m.at("clips")) {
      d.clip_ids.push_back(c.at("id").get<std::string>());
      std::vector<SyntheticScene> frames;
      for (const auto& f : c.at("frames")) frames.push_back(read_frame(f, dir));
      d.clips.push_back(std::move(frames));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  return d;
}

}  // namespace esam3::sim
