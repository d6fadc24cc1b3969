#pragma once

// Distillation teacher and its on-disk feature cache.
//
// The oracle teacher is a frozen, seeded random conv stack for features and
// returns ground-truth masks. The trained teacher wraps a fitted student-style
// network and decodes masks from the prompt set.

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <shared_mutex>

#include <json.hpp>

#include "esam3/model/student.hpp"
#include "esam3/promptloop/prompt.hpp"

namespace esam3::prompt {

struct TeacherConfig {
  std::string mode = "oracle";  // "oracle" or "trained"
  model::EncoderConfig encoder{{16, 32, 64}, {0, 0, 0}};
  std::uint64_t seed = 42;
  /// Trained mode: optimizer steps on ground truth before freezing.
  int fit_steps = 300;
  double fit_lr = 2e-3;

  void validate() const;
};

void to_json(nlohmann::json& j, const TeacherConfig& c);
void from_json(const nlohmann::json& j, TeacherConfig& c);

class Teacher {
 public:
  static Teacher oracle(const TeacherConfig& cfg, int feat_channels);
  /// Wraps an already fitted network; it is never updated afterwards.
  static Teacher trained(const TeacherConfig& cfg, model::Student net);

  bool is_oracle() const { return !net_.has_value(); }
  /// (C, G, G) features for a preprocessed (3, H, W) input.
  Tensor features(const Tensor& input) const;
  /// Oracle: a copy of `gt`. Trained: decoded mask thresholded at 0.5.
  Tensor mask(const Tensor& features, const PromptSet& prompts, const Tensor& gt, int stride) const;
  /// Decoded probabilities (trained mode) or `gt` (oracle).
  Tensor probs(const Tensor& features, const PromptSet& prompts, const Tensor& gt, int stride) const;

  std::uint64_t hash() const { return params_.hash(); }
  /// Identifies the teacher in cache keys.
  std::string fingerprint() const;
  const model::ParamStore& params() const { return params_; }
  const TeacherConfig& config() const { return cfg_; }

 private:
  TeacherConfig cfg_;
  int feat_channels_ = 64;
  mutable model::ParamStore params_;
  std::optional<model::ModelConfig> net_;
};

/// Content-addressed store of teacher features: <root>/<hex key>.tensor.
/// Concurrent readers share a lock; writers are exclusive.
class TeacherCache {
 public:
  explicit TeacherCache(std::filesystem::path root);

  /// ESAM3_CACHE_DIR when set, otherwise `fallback`.
  static std::filesystem::path resolve_root(const std::filesystem::path& fallback);
  static std::uint64_t key(std::string_view image_id, const nlohmann::json& preprocessing);

  std::optional<Tensor> get(std::uint64_t key);
  void put(std::uint64_t key, const Tensor& t);
  /// get(); on a miss or a corrupt entry, compute, store and return.
  Tensor get_or_compute(std::uint64_t key, const std::function<Tensor()>& compute);

  std::filesystem::path path_for(std::uint64_t key) const;
  const std::filesystem::path& root() const { return root_; }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  std::size_t corrupt() const { return corrupt_; }

 private:
  std::filesystem::path root_;
  mutable std::shared_mutex mutex_;
  std::atomic<std::size_t> hits_{0}, misses_{0}, corrupt_{0};
};

}  // namespace esam3::prompt
