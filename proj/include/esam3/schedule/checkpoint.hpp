#pragma once

// Checkpoint directory:
//   manifest.json        configs, stage/step, parameter index with checksums
//   params/<name>.tensor
//   optim/<name>.m.tensor, optim/<name>.v.tensor
//   ema/<name>.tensor    (when EMA is enabled)

#include <filesystem>

#include "esam3/model/student.hpp"
#include "esam3/promptloop/teacher.hpp"
#include "esam3/schedule/optimizer.hpp"
#include "esam3/sim/scene.hpp"

namespace esam3::sched {

struct Checkpoint {
  int stage = 0;  // last completed stage; 0 for a fresh initialization
  int step = 0;
  std::string model_name;
  model::ModelConfig model;
  prompt::TeacherConfig teacher;
  sim::SceneConfig scene;
  model::ParamStore params;
  AdamState optim;
  std::optional<model::ParamStore> ema;

  model::Student student() const { return {model, params}; }
  /// EMA weights when present, the raw weights otherwise.
  model::Student eval_student(bool prefer_ema = true) const;
};

Checkpoint initial_checkpoint(const std::string& model_name, const model::ModelConfig& model,
                              const prompt::TeacherConfig& teacher, const sim::SceneConfig& scene,
                              std::uint64_t seed);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Throws Error(kPrecondition) when `dir` holds no manifest, Error(kIo) on
/// damaged contents.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Bitwise equality of configs, weights, optimizer state and EMA.
bool same_checkpoint(const Checkpoint& a, const Checkpoint& b);

}  // namespace esam3::sched
