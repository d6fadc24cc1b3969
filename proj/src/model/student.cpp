#include "esam3/model/student.hpp"

#include <set>

#include "esam3/error.hpp"
#include "esam3/memory/perceiver.hpp"
#include "esam3/memory/tracking.hpp"
#include "esam3/promptloop/decoder.hpp"
#include "esam3/sim/detect.hpp"

namespace esam3::model {

void ModelConfig::validate() const {
  encoder.validate();
  auto bad = [](const std::string& m) { fail(ErrorKind::kInvalidArgument, "model config: " + m); };
  if (feat_channels <= 0 || dim <= 0 || dim % 4 != 0) bad("channels must be positive and dim a multiple of 4");
  if (num_concepts <= 0 || num_queries <= 0) bad("num_concepts and num_queries must be positive");
  if (latents_global < 1 || latents_local < 0) bad("need at least one global latent");
  if (window <= 0 || d_k <= 0) bad("window and d_k must be positive");
  if (perceiver_dropout < 0 || perceiver_dropout >= 1) bad("perceiver_dropout must lie in [0, 1)");
  if (bank_capacity <= 0) bad("bank_capacity must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder},
       {"feat_channels", c.feat_channels},
       {"dim", c.dim},
       {"num_concepts", c.num_concepts},
       {"num_queries", c.num_queries},
       {"latents_global", c.latents_global},
       {"latents_local", c.latents_local},
       {"window", c.window},
       {"d_k", c.d_k},
       {"perceiver_dropout", c.perceiver_dropout},
       {"bank_capacity", c.bank_capacity},
       {"compress_memory", c.compress_memory}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known = {"encoder", "feat_channels", "dim", "num_concepts", "num_queries",
                                              "latents_global", "latents_local", "window", "d_k",
                                              "perceiver_dropout", "bank_capacity", "compress_memory"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) fail(ErrorKind::kInvalidArgument, "model config: unknown key '" + k + "'");
  try {
    if (j.contains("encoder")) j.at("encoder").get_to(c.encoder);
#define ESAM3_READ(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
    ESAM3_READ(feat_channels)
    ESAM3_READ(dim)
    ESAM3_READ(num_concepts)
    ESAM3_READ(num_queries)
    ESAM3_READ(latents_global)
    ESAM3_READ(latents_local)
    ESAM3_READ(window)
    ESAM3_READ(d_k)
    ESAM3_READ(perceiver_dropout)
    ESAM3_READ(bank_capacity)
    ESAM3_READ(compress_memory)
#undef ESAM3_READ
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("model config: ") + e.what());
  }
  c.validate();
}

Student Student::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Student st{cfg, {}};
  Rng rng = Rng::substream(seed, "init");
  init_encoder(st.params, cfg.encoder, "enc", ModuleTag::kEncoder, rng);
  add_conv(st.params, "proj", ModuleTag::kProjection, cfg.feat_channels, cfg.encoder.out_channels(), 1, rng);
  st.params.add("concept.table", ModuleTag::kConceptTable, Tensor::randn({cfg.num_concepts, cfg.dim}, rng, 1.0));
  prompt::init_prompt_decoder(st.params, cfg, rng);
  sim::init_detector(st.params, cfg, rng);
  mem::init_memory(st.params, cfg, rng);
  mem::init_tracking_head(st.params, cfg, rng);
  return st;
}

Var student_features(Session& s, const ModelConfig& cfg, Var image) {
  return conv(s, encode(s, cfg.encoder, "enc", image), "proj", 1, 0);
}

Var concept_vec(Session& s, const ModelConfig& cfg, int concept_id) {
  if (concept_id < 0 || concept_id >= cfg.num_concepts) {
    fail(ErrorKind::kInvalidArgument, "concept id " + std::to_string(concept_id) + " out of range");
  }
  return num::take_rows(s.p("concept.table"), {concept_id});
}

}  // namespace esam3::model
