#include "esam3/promptloop/teacher.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>

#include "esam3/error.hpp"
#include "esam3/numerics/serialize.hpp"
#include "esam3/promptloop/decoder.hpp"

namespace esam3::prompt {

void TeacherConfig::validate() const {
  if (mode != "oracle" && mode != "trained") fail(ErrorKind::kInvalidArgument, "teacher mode must be 'oracle' or 'trained'");
  encoder.validate();
  if (fit_steps < 0 || !(fit_lr > 0)) fail(ErrorKind::kInvalidArgument, "teacher fit_steps/fit_lr out of range");
}

void to_json(nlohmann::json& j, const TeacherConfig& c) {
  j = {{"mode", c.mode}, {"encoder", c.encoder}, {"seed", c.seed}, {"fit_steps", c.fit_steps}, {"fit_lr", c.fit_lr}};
}

void from_json(const nlohmann::json& j, TeacherConfig& c) {
  for (const auto& [k, v] : j.items())
    if (k != "mode" && k != "encoder" && k != "seed" && k != "fit_steps" && k != "fit_lr")
      fail(ErrorKind::kInvalidArgument, "teacher config: unknown key '" + k + "'");
  try {
    if (j.contains("mode")) j.at("mode").get_to(c.mode);
    if (j.contains("encoder")) j.at("encoder").get_to(c.encoder);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("fit_steps")) j.at("fit_steps").get_to(c.fit_steps);
    if (j.contains("fit_lr")) j.at("fit_lr").get_to(c.fit_lr);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("teacher config: ") + e.what());
  }
  c.validate();
}

Teacher Teacher::oracle(const TeacherConfig& cfg, int feat_channels) {
  cfg.validate();
  Teacher t;
  t.cfg_ = cfg;
  t.feat_channels_ = feat_channels;
  Rng rng = Rng::substream(cfg.seed, "teacher");
  model::init_encoder(t.params_, cfg.encoder, "enc", model::ModuleTag::kEncoder, rng);
  model::add_conv(t.params_, "proj", model::ModuleTag::kProjection, feat_channels, cfg.encoder.out_channels(), 1, rng,
                  true, std::sqrt(0.5));
  return t;
}

Teacher Teacher::trained(const TeacherConfig& cfg, model::Student net) {
  Teacher t;
  t.cfg_ = cfg;
  t.cfg_.mode = "trained";
  t.feat_channels_ = net.cfg.feat_channels;
  t.params_ = std::move(net.params);
  t.net_ = net.cfg;
  return t;
}

Tensor Teacher::features(const Tensor& input) const {
  num::Tape tape;
  model::Session s(tape, params_, {});
  Var x = s.constant(input);
  if (net_) return model::student_features(s, *net_, x).value();
  return model::conv(s, model::encode(s, cfg_.encoder, "enc", x), "proj", 1, 0).value();
}

Tensor Teacher::probs(const Tensor& features, const PromptSet& prompts, const Tensor& gt, int stride) const {
  if (!net_) return gt;
  num::Tape tape;
  model::Session s(tape, params_, {});
  Var emb = image_embedding(s, s.constant(features));
  Tensor logits = decode_prompts(s, *net_, emb, prompts, stride).value();
  for (double& v : logits.vec()) v = 1.0 / (1.0 + std::exp(-v));
  return logits;
}

Tensor Teacher::mask(const Tensor& features, const PromptSet& prompts, const Tensor& gt, int stride) const {
  if (!net_) return gt;
  Tensor p = probs(features, prompts, gt, stride);
  for (double& v : p.vec()) v = v >= 0.5 ? 1.0 : 0.0;
  return p;
}

std::string Teacher::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return cfg_.mode + ":" + buf;
}

TeacherCache::TeacherCache(std::filesystem::path root) : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create cache directory " + root_.string() + ": " + ec.message());
}

std::filesystem::path TeacherCache::resolve_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("ESAM3_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

std::uint64_t TeacherCache::key(std::string_view image_id, const nlohmann::json& preprocessing) {
  std::uint64_t h = fnv1a(image_id);
  h = fnv1a("\x1f", h);
  return fnv1a(preprocessing.dump(), h);
}

std::filesystem::path TeacherCache::path_for(std::uint64_t key) const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(key));
  return root_ / (std::string(buf) + ".tensor");
}

std::optional<Tensor> TeacherCache::get(std::uint64_t key) {
  const auto path = path_for(key);
  std::shared_lock lock(mutex_);
  if (!std::filesystem::exists(path)) {
    ++misses_;
    return std::nullopt;
  }
  try {
    Tensor t = num::load_tensor(path);
    ++hits_;
    return t;
  } catch (const Error& e) {
    ++corrupt_;
    ++misses_;
    std::cerr << "warning: corrupt teacher cache entry " << path.string() << " (" << e.what() << "); recomputing\n";
    return std::nullopt;
  }
}

void TeacherCache::put(std::uint64_t key, const Tensor& t) {
  std::unique_lock lock(mutex_);
  num::save_tensor(path_for(key), t);
}

Tensor TeacherCache::get_or_compute(std::uint64_t key, const std::function<Tensor()>& compute) {
  if (auto hit = get(key)) return *hit;
  Tensor t = compute();
  put(key, t);
  return t;
}

}  // namespace esam3::prompt
