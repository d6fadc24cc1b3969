#include "esam3/schedule/checkpoint.hpp"

#include <fstream>

#include "esam3/error.hpp"
#include "esam3/numerics/serialize.hpp"

namespace esam3::sched {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kVersion = 1;

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_store(const model::ParamStore& store, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto* p : store.params()) num::save_tensor(dir / (p->name + ".tensor"), p->value);
}

model::ParamStore read_store(const json& index, const fs::path& dir) {
  model::ParamStore store;
  for (const auto& e : index) {
    const auto name = e.at("name").get<std::string>();
    store.add(name, model::tag_from_name(e.at("tag").get<std::string>()),
              num::load_tensor(dir / (name + ".tensor")));
  }
  return store;
}

bool same_store(const model::ParamStore& a, const model::ParamStore& b) {
  if (a.size() != b.size()) return false;
  auto pa = a.params();
  auto pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || pa[i]->tag != pb[i]->tag || !pa[i]->value.same_values(pb[i]->value))
      return false;
  }
  return true;
}

}  // namespace

model::Student Checkpoint::eval_student(bool prefer_ema) const {
  if (prefer_ema && ema) return {model, *ema};
  return {model, params};
}

Checkpoint initial_checkpoint(const std::string& model_name, const model::ModelConfig& model,
                              const prompt::TeacherConfig& teacher, const sim::SceneConfig& scene,
                              std::uint64_t seed) {
  teacher.validate();
  scene.validate();
  if (model.encoder.stride() != scene.feature_stride) {
    fail(ErrorKind::kInvalidArgument, "encoder stride " + std::to_string(model.encoder.stride()) +
                                          " does not match scene feature_stride " +
                                          std::to_string(scene.feature_stride));
  }
  Checkpoint c;
  c.model_name = model_name;
  c.model = model;
  c.teacher = teacher;
  c.scene = scene;
  c.params = model::Student::create(model, seed).params;
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir);
  write_store(ckpt.params, dir / "params");
  json params = json::array();
  for (const auto* p : ckpt.params.params()) {
    params.push_back({{"name", p->name},
                      {"tag", model::tag_name(p->tag)},
                      {"shape", p->value.shape()},
                      {"hash", hex(num::content_hash(p->value))}});
  }
  json optim = {{"t", ckpt.optim.t}, {"entries", json::array()}};
  fs::create_directories(dir / "optim");
  for (const auto& [name, mo] : ckpt.optim.moments) {
    num::save_tensor(dir / "optim" / (name + ".m.tensor"), mo.m);
    num::save_tensor(dir / "optim" / (name + ".v.tensor"), mo.v);
    optim["entries"].push_back(name);
  }
  if (ckpt.ema) write_store(*ckpt.ema, dir / "ema");
  json m = {{"format", "esam3-checkpoint"},
            {"version", kVersion},
            {"stage", ckpt.stage},
            {"step", ckpt.step},
            {"model_name", ckpt.model_name},
            {"model_config", ckpt.model},
            {"teacher", ckpt.teacher},
            {"scene_config", ckpt.scene},
            {"params", params},
            {"param_hash", hex(ckpt.params.hash())},
            {"optimizer", optim},
            {"ema", ckpt.ema.has_value()}};
  std::ofstream os(dir / "manifest.json");
  os << m.dump(2) << "\n";
  if (!os) fail(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) fail(ErrorKind::kPrecondition, "no checkpoint at " + dir.string() + " (missing manifest.json)");
  json m;
  try {
    std::ifstream is(path);
    m = json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "corrupt checkpoint manifest " + path.string() + ": " + e.what());
  }
  if (m.value("format", "") != "esam3-checkpoint") fail(ErrorKind::kIo, path.string() + " is not a checkpoint manifest");
  if (m.value("version", 0) != kVersion) fail(ErrorKind::kIo, "unsupported checkpoint version in " + path.string());
  Checkpoint c;
  try {
    c.stage = m.at("stage").get<int>();
    c.step = m.at("step").get<int>();
    c.model_name = m.at("model_name").get<std::string>();
    m.at("model_config").get_to(c.model);
    m.at("teacher").get_to(c.teacher);
    m.at("scene_config").get_to(c.scene);
    c.params = read_store(m.at("params"), dir / "params");
    for (const auto& e : m.at("params")) {
      const auto& t = c.params.get(e.at("name").get<std::string>());
      if (hex(num::content_hash(t)) != e.at("hash").get<std::string>())
        fail(ErrorKind::kIo, "checksum mismatch for parameter '" + e.at("name").get<std::string>() + "'");
    }
    c.optim.t = m.at("optimizer").at("t").get<std::int64_t>();
    for (const auto& e : m.at("optimizer").at("entries")) {
      const auto name = e.get<std::string>();
      c.optim.moments[name] = {num::load_tensor(dir / "optim" / (name + ".m.tensor")),
                               num::load_tensor(dir / "optim" / (name + ".v.tensor"))};
    }
    if (m.at("ema").get<bool>()) c.ema = read_store(m.at("params"), dir / "ema");
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "malformed checkpoint manifest " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    fail(ErrorKind::kIo, "invalid checkpoint " + dir.string() + ": " + e.what());
  }
  return c;
}

bool same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
  if (a.stage != b.stage || a.step != b.step || a.model_name != b.model_name) return false;
  if (json(a.model) != json(b.model) || json(a.teacher) != json(b.teacher) || json(a.scene) != json(b.scene))
    return false;
  if (!same_store(a.params, b.params)) return false;
  if (a.optim.t != b.optim.t || a.optim.moments.size() != b.optim.moments.size()) return false;
  for (const auto& [name, mo] : a.optim.moments) {
    auto it = b.optim.moments.find(name);
    if (it == b.optim.moments.end() || !mo.m.same_values(it->second.m) || !mo.v.same_values(it->second.v))
      return false;
  }
  if (a.ema.has_value() != b.ema.has_value()) return false;
  return !a.ema || same_store(*a.ema, *b.ema);
}

}  // namespace esam3::sched
