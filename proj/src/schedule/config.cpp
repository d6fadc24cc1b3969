#include "esam3/schedule/config.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "esam3/error.hpp"

namespace esam3::sched {

int StageConfig::warmup() const {
  if (warmup_steps >= 0) return warmup_steps;
  return std::min(1000, total_steps / 10);
}

TagSet StageConfig::trainable() const {
  return trainable_modules ? *trainable_modules : freezing_policy(stage, unfreeze_encoder);
}

void StageConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kInvalidArgument, "stage config: " + m); };
  if (stage < 1 || stage > 3) bad("stage must be 1, 2 or 3");
  if (!(base_lr >= 0) || !std::isfinite(base_lr)) bad("base_lr must be finite and non-negative");
  if (weight_decay_encoder < 0 || weight_decay_other < 0) bad("weight decay must be non-negative");
  if (total_steps < 0) bad("total_steps must be non-negative");
  if (total_steps > 0 && warmup() >= total_steps) bad("warmup_steps must be below total_steps");
  if (batch_size < 1 || clip_batch_size < 0) bad("batch sizes must be positive");
  if (clip_norm && !(*clip_norm > 0)) bad("clip_norm must be positive");
  if (ema_decay && !(*ema_decay >= 0 && *ema_decay < 1)) bad("ema_decay must lie in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) bad("invalid Adam constants");
  if (refinement_loops < 0) bad("refinement_loops must be non-negative");
  if (max_instances < 1 || max_instances > 16) bad("max_instances must lie in [1, 16]");
  if (max_tracks < 1 || max_tracks > 8) bad("max_tracks must lie in [1, 8]");
  if (readout_weight < 0 || checkpoint_every < 0) bad("negative readout_weight or checkpoint_every");
  loss.validate();
}

namespace {

nlohmann::json tags_json(const TagSet& tags) {
  nlohmann::json a = nlohmann::json::array();
  for (auto t : tags) a.push_back(model::tag_name(t));
  return a;
}

}  // namespace

void to_json(nlohmann::json& j, const StageConfig& c) {
  j = {{"stage", c.stage},
       {"base_lr", c.base_lr},
       {"weight_decay_encoder", c.weight_decay_encoder},
       {"weight_decay_other", c.weight_decay_other},
       {"warmup_steps", c.warmup_steps},
       {"total_steps", c.total_steps},
       {"batch_size", c.batch_size},
       {"clip_batch_size", c.clip_batch_size},
       {"loss",
        {{"lambda1", c.loss.lambda1},
         {"lambda2", c.loss.lambda2},
         {"focal_alpha", c.loss.focal_alpha},
         {"focal_gamma", c.loss.focal_gamma},
         {"dice_eps", c.loss.dice_eps}}},
       {"trainable_modules", c.trainable_modules ? tags_json(*c.trainable_modules) : nlohmann::json(nullptr)},
       {"unfreeze_encoder", c.unfreeze_encoder},
       {"clip_norm", c.clip_norm ? nlohmann::json(*c.clip_norm) : nlohmann::json(nullptr)},
       {"ema_decay", c.ema_decay ? nlohmann::json(*c.ema_decay) : nlohmann::json(nullptr)},
       {"seed", c.seed},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"refinement_loops", c.refinement_loops},
       {"max_instances", c.max_instances},
       {"max_tracks", c.max_tracks},
       {"readout_weight", c.readout_weight},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, StageConfig& c) {
  static const std::set<std::string> known = {
      "stage", "base_lr", "weight_decay_encoder", "weight_decay_other", "warmup_steps", "total_steps",
      "batch_size", "clip_batch_size", "loss", "trainable_modules", "unfreeze_encoder", "clip_norm", "ema_decay",
      "seed", "beta1", "beta2", "adam_eps", "refinement_loops", "max_instances", "max_tracks", "readout_weight",
      "checkpoint_every"};
  if (!j.is_object()) fail(ErrorKind::kInvalidArgument, "stage config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) fail(ErrorKind::kInvalidArgument, "stage config: unknown key '" + k + "'");
  try {
#define ESAM3_READ(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
    ESAM3_READ(stage)
    ESAM3_READ(base_lr)
    ESAM3_READ(weight_decay_encoder)
    ESAM3_READ(weight_decay_other)
    ESAM3_READ(warmup_steps)
    ESAM3_READ(total_steps)
    ESAM3_READ(batch_size)
    ESAM3_READ(clip_batch_size)
    ESAM3_READ(unfreeze_encoder)
    ESAM3_READ(seed)
    ESAM3_READ(beta1)
    ESAM3_READ(beta2)
    ESAM3_READ(adam_eps)
    ESAM3_READ(refinement_loops)
    ESAM3_READ(max_instances)
    ESAM3_READ(max_tracks)
    ESAM3_READ(readout_weight)
    ESAM3_READ(checkpoint_every)
#undef ESAM3_READ
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      static const std::set<std::string> lk = {"lambda1", "lambda2", "focal_alpha", "focal_gamma", "dice_eps"};
      for (const auto& [k, v] : l.items())
        if (!lk.contains(k)) fail(ErrorKind::kInvalidArgument, "stage config: unknown loss key '" + k + "'");
      if (l.contains("lambda1")) l.at("lambda1").get_to(c.loss.lambda1);
      if (l.contains("lambda2")) l.at("lambda2").get_to(c.loss.lambda2);
      if (l.contains("focal_alpha")) l.at("focal_alpha").get_to(c.loss.focal_alpha);
      if (l.contains("focal_gamma")) l.at("focal_gamma").get_to(c.loss.focal_gamma);
      if (l.contains("dice_eps")) l.at("dice_eps").get_to(c.loss.dice_eps);
    }
    auto opt_double = [&](const char* key, std::optional<double>& out) {
      if (!j.contains(key)) return;
      if (j.at(key).is_null()) out.reset();
      else out = j.at(key).get<double>();
    };
    opt_double("clip_norm", c.clip_norm);
    opt_double("ema_decay", c.ema_decay);
    if (j.contains("trainable_modules")) {
      if (j.at("trainable_modules").is_null()) {
        c.trainable_modules.reset();
      } else {
        TagSet tags;
        for (const auto& t : j.at("trainable_modules")) tags.insert(model::tag_from_name(t.get<std::string>()));
        c.trainable_modules = tags;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("stage config: ") + e.what());
  }
  c.validate();
}

StageConfig full_preset(int stage) {
  StageConfig c;
  c.stage = stage;
  c.total_steps = 100000;
  switch (stage) {
    case 1:
      c.base_lr = 1e-4;
      c.batch_size = 64;
      c.clip_batch_size = 0;
      break;
    case 2:
      c.base_lr = 5e-5;
      c.clip_batch_size = 16;
      break;
    case 3:
      c.base_lr = 2e-5;
      c.batch_size = 32;
      c.clip_batch_size = 8;
      c.clip_norm = 1.0;
      c.ema_decay = 0.999;
      break;
    default: fail(ErrorKind::kInvalidArgument, "unknown stage " + std::to_string(stage));
  }
  c.validate();
  return c;
}

StageConfig desk_preset(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1:
      c.base_lr = 2e-3;
      c.total_steps = 2000;
      c.batch_size = 4;
      c.clip_batch_size = 0;
      c.clip_norm = 1.0;
      break;
    case 2:
      c.base_lr = 1e-3;
      c.total_steps = 1000;
      c.clip_batch_size = 2;
      c.clip_norm = 1.0;
      break;
    case 3:
      c.base_lr = 5e-4;
      c.total_steps = 600;
      c.batch_size = 4;
      c.clip_batch_size = 1;
      c.clip_norm = 1.0;
      c.ema_decay = 0.99;
      break;
    default: fail(ErrorKind::kInvalidArgument, "unknown stage " + std::to_string(stage));
  }
  c.validate();
  return c;
}

double lr_at(int step, const StageConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    fail(ErrorKind::kInvalidArgument, "lr_at: step " + std::to_string(step) + " outside [0, " +
                                          std::to_string(cfg.total_steps) + "]");
  }
  const int warm = cfg.warmup();
  if (step < warm) return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (cfg.total_steps == warm) return cfg.base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TagSet freezing_policy(int stage, bool unfreeze_encoder) {
  TagSet t;
  switch (stage) {
    case 1: t = {ModuleTag::kEncoder, ModuleTag::kProjection, ModuleTag::kDecoder}; break;
    case 2: t = {ModuleTag::kPerceiver, ModuleTag::kTrackingHead}; break;
    case 3: t = {ModuleTag::kPerceiver, ModuleTag::kDecoder, ModuleTag::kPresenceHead, ModuleTag::kConceptTable}; break;
    default: fail(ErrorKind::kInvalidArgument, "freezing_policy: unknown stage " + std::to_string(stage));
  }
  if (unfreeze_encoder) t.insert(ModuleTag::kEncoder);
  return t;
}

const std::vector<ZooEntry>& model_zoo() {
  static const std::vector<ZooEntry> zoo = {
      {"ES-RV-S", "RepViT", "RepViT-M0.9", 5.1, {{16, 32, 64}, {0, 1, 1}}},
      {"ES-RV-M", "RepViT", "RepViT-M1.1", 6.8, {{16, 32, 64}, {1, 1, 2}}},
      {"ES-RV-L", "RepViT", "RepViT-M2.3", 8.2, {{16, 32, 64}, {1, 2, 3}}},
      {"ES-TV-S", "TinyViT", "TinyViT-5M", 5.4, {{16, 32, 64}, {1, 1, 1}}},
      {"ES-TV-M", "TinyViT", "TinyViT-11M", 11.0, {{24, 48, 96}, {0, 1, 1}}},
      {"ES-TV-L", "TinyViT", "TinyViT-21M", 21.0, {{32, 64, 128}, {1, 1, 2}}},
      {"ES-EV-S", "EfficientViT", "EfficientViT-B0", 0.7, {{8, 16, 32}, {0, 0, 0}}},
      {"ES-EV-M", "EfficientViT", "EfficientViT-B1", 4.8, {{16, 32, 64}, {0, 0, 1}}},
      {"ES-EV-L", "EfficientViT", "EfficientViT-B2", 15.0, {{24, 48, 96}, {0, 1, 2}}},
  };
  return zoo;
}

const ZooEntry& zoo_entry(const std::string& name) {
  for (const auto& e : model_zoo())
    if (e.name == name) return e;
  fail(ErrorKind::kInvalidArgument, "unknown model '" + name + "'");
}

}  // namespace esam3::sched
