#pragma once

// The full student: encoder, projection head, prompt decoder, detection and
// presence heads, memory encoder + Perceiver, tracking head, concept table.

#include <json.hpp>

#include "esam3/model/encoder.hpp"

namespace esam3::model {

struct ModelConfig {
  EncoderConfig encoder;
  int feat_channels = 64;  // teacher feature channels C
  int dim = 32;            // decoder / memory width D
  int num_concepts = 12;
  int num_queries = 6;  // detection queries per concept
  int latents_global = 16;
  int latents_local = 112;
  int window = 4;  // local Perceiver window, in feature cells
  int d_k = 16;
  double perceiver_dropout = 0.1;
  int bank_capacity = 7;
  /// false: the tracking head reads all bank tokens (dense readout).
  bool compress_memory = true;

  void validate() const;
  int num_latents() const { return latents_global + latents_local; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Student {
  ModelConfig cfg;
  ParamStore params;

  static Student create(const ModelConfig& cfg, std::uint64_t seed);
};

/// Projected student features (C, G, G) for a preprocessed image.
Var student_features(Session& s, const ModelConfig& cfg, Var image);
/// Row of the concept table, (1, D).
Var concept_vec(Session& s, const ModelConfig& cfg, int concept_id);

}  // namespace esam3::model
