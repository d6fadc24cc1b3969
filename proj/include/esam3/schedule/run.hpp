#pragma once

// Stage driver: batch sampling, the per-stage step function, optimizer, EMA,
// metrics log and checkpoints.

#include <functional>

#include "esam3/schedule/checkpoint.hpp"
#include "esam3/sim/dataset.hpp"

namespace esam3::sched {

/// Training batches, either generated per step from the seed or drawn from a
/// saved dataset. Either way batch contents depend only on (seed, step).
struct DataSource {
  sim::SceneConfig scene;
  const sim::Dataset* dataset = nullptr;
  std::uint64_t seed = 42;

  std::vector<std::pair<std::string, sim::SyntheticScene>> scenes(int stage, int step, int count) const;
  std::vector<std::vector<sim::SyntheticScene>> clips(int stage, int step, int count) const;
};

/// Held-out scenes and clips, disjoint from procedural training draws.
std::vector<sim::SyntheticScene> eval_scenes(const sim::SceneConfig& scfg, std::uint64_t seed, int count);
std::vector<std::vector<sim::SyntheticScene>> eval_clips(const sim::SceneConfig& scfg, std::uint64_t seed, int count);

/// Oracle teacher, or a student-style network fitted on ground truth.
prompt::Teacher make_teacher(const prompt::TeacherConfig& tcfg, const model::ModelConfig& model,
                             const sim::SceneConfig& scene);

struct StepLosses {
  double total = 0, feat = 0, mask = 0, task = 0, score = 0;
  nlohmann::json terms;  // stage-specific breakdown
};

/// Loss of `params` on the batch that run_stage would draw at `step`,
/// without updating anything.
StepLosses stage_loss(const StageConfig& cfg, const model::ModelConfig& mcfg, model::ParamStore& params,
                      const prompt::Teacher& teacher, const DataSource& data, int step,
                      prompt::TeacherCache* cache = nullptr);

struct RunOptions {
  /// Receives checkpoint/, checkpoints/step_N/ and metrics.jsonl. Empty: no files.
  std::filesystem::path out_dir;
  prompt::TeacherCache* cache = nullptr;
  /// Reuses an already built teacher instead of calling make_teacher.
  const prompt::Teacher* teacher = nullptr;
  std::function<void(const nlohmann::json&)> on_step;
};

struct RunResult {
  Checkpoint checkpoint;
  std::vector<nlohmann::json> metrics;
};

/// Throws Error(kPrecondition) unless input.stage >= cfg.stage - 1.
RunResult run_stage(const StageConfig& cfg, const Checkpoint& input, const DataSource& data,
                    const RunOptions& opt = {});

/// Record without the wall-clock field, for determinism comparisons.
nlohmann::json strip_timing(const nlohmann::json& record);

}  // namespace esam3::sched
