#include "esam3/sim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "esam3/error.hpp"
#include "esam3/rng.hpp"

namespace esam3::sim {

std::string shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "unknown";
}

ShapeKind shape_from_name(const std::string& name) {
  if (name == "circle") return ShapeKind::kCircle;
  if (name == "square") return ShapeKind::kSquare;
  if (name == "triangle") return ShapeKind::kTriangle;
  fail(ErrorKind::kInvalidArgument, "unknown shape '" + name + "'");
}

int SceneConfig::feature_size() const {
  const int padded = (image_size + pad_multiple - 1) / pad_multiple * pad_multiple;
  return padded / feature_stride;
}

void SceneConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kInvalidArgument, "scene config: " + m); };
  if (image_size < 16 || image_size > 1024) bad("image_size must lie in [16, 1024]");
  if (shapes.empty() || colors.empty()) bad("need at least one shape and one color");
  if (!concept_weights.empty()) {
    if (concept_weights.size() != static_cast<std::size_t>(num_concepts())) bad("concept_weights size must equal shapes x colors");
    double total = 0;
    for (double w : concept_weights) {
      if (!(w >= 0) || !std::isfinite(w)) bad("concept_weights must be finite and non-negative");
      total += w;
    }
    if (total <= 0) bad("concept_weights sum to zero");
  }
  if (min_instances < 1 || max_instances < min_instances) bad("instance range must satisfy 1 <= min <= max");
  if (max_instances > 64) bad("too many instances per scene (max 64)");
  if (!(min_radius > 2) || max_radius < min_radius || 2 * max_radius >= image_size) bad("invalid radius range");
  // Worst case area packing without occlusion.
  if (!allow_occlusion && max_instances * 4.0 * min_radius * min_radius > 0.6 * image_size * image_size) {
    bad("too many instances to place without occlusion");
  }
  if (clip_min_length < 2 || clip_max_length < clip_min_length) bad("clip length range must satisfy 2 <= min <= max");
  if (feature_stride <= 0 || pad_multiple <= 0 || pad_multiple % feature_stride != 0) {
    bad("pad_multiple must be a positive multiple of feature_stride");
  }
  if (noise < 0 || max_speed < 0 || occluder_probability < 0 || occluder_probability > 1) bad("negative rate");
}

std::vector<double> SceneConfig::concept_distribution() const {
  std::vector<double> p(static_cast<std::size_t>(num_concepts()), 1.0);
  if (!concept_weights.empty()) p = concept_weights;
  double total = 0;
  for (double v : p) total += v;
  for (double& v : p) v /= total;
  return p;
}

void to_json(nlohmann::json& j, const SceneConfig& c) {
  nlohmann::json shapes = nlohmann::json::array();
  for (auto s : c.shapes) shapes.push_back(shape_name(s));
  nlohmann::json colors = nlohmann::json::array();
  for (const auto& col : c.colors) colors.push_back({{"name", col.name}, {"rgb", col.rgb}});
  j = {{"image_size", c.image_size},
       {"shapes", shapes},
       {"colors", colors},
       {"concept_weights", c.concept_weights},
       {"min_instances", c.min_instances},
       {"max_instances", c.max_instances},
       {"min_radius", c.min_radius},
       {"max_radius", c.max_radius},
       {"allow_occlusion", c.allow_occlusion},
       {"min_visible_pixels", c.min_visible_pixels},
       {"noise", c.noise},
       {"clip_min_length", c.clip_min_length},
       {"clip_max_length", c.clip_max_length},
       {"max_speed", c.max_speed},
       {"occluder_probability", c.occluder_probability},
       {"feature_stride", c.feature_stride},
       {"pad_multiple", c.pad_multiple}};
}

void from_json(const nlohmann::json& j, SceneConfig& c) {
  if (!j.is_object()) fail(ErrorKind::kInvalidArgument, "scene config must be a JSON object");
  static const std::set<std::string> known = {
      "image_size", "shapes", "colors", "concept_weights", "min_instances", "max_instances",
      "min_radius", "max_radius", "allow_occlusion", "min_visible_pixels", "noise", "clip_min_length",
      "clip_max_length", "max_speed", "occluder_probability", "feature_stride", "pad_multiple"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) fail(ErrorKind::kInvalidArgument, "scene config: unknown key '" + k + "'");
  try {
    if (j.contains("shapes")) {
      c.shapes.clear();
      for (const auto& s : j.at("shapes")) c.shapes.push_back(shape_from_name(s.get<std::string>()));
    }
    if (j.contains("colors")) {
      c.colors.clear();
      for (const auto& col : j.at("colors"))
        c.colors.push_back({col.at("name").get<std::string>(), col.at("rgb").get<std::array<double, 3>>()});
    }
#define ESAM3_READ(field) \
  if (j.contains(#field)) j.at(#field).get_to(c.field);
    ESAM3_READ(image_size)
    ESAM3_READ(concept_weights)
    ESAM3_READ(min_instances)
    ESAM3_READ(max_instances)
    ESAM3_READ(min_radius)
    ESAM3_READ(max_radius)
    ESAM3_READ(allow_occlusion)
    ESAM3_READ(min_visible_pixels)
    ESAM3_READ(noise)
    ESAM3_READ(clip_min_length)
    ESAM3_READ(clip_max_length)
    ESAM3_READ(max_speed)
    ESAM3_READ(occluder_probability)
    ESAM3_READ(feature_stride)
    ESAM3_READ(pad_multiple)
#undef ESAM3_READ
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("scene config: ") + e.what());
  }
  c.validate();
}

Concept concept_of(const SceneConfig& cfg, int id) {
  if (id < 0 || id >= cfg.num_concepts()) fail(ErrorKind::kInvalidArgument, "concept id out of range");
  const int nc = static_cast<int>(cfg.colors.size());
  return {cfg.shapes[static_cast<std::size_t>(id / nc)], id % nc};
}

int concept_id(const SceneConfig& cfg, ShapeKind shape, int color) {
  for (std::size_t s = 0; s < cfg.shapes.size(); ++s)
    if (cfg.shapes[s] == shape) return static_cast<int>(s) * static_cast<int>(cfg.colors.size()) + color;
  fail(ErrorKind::kInvalidArgument, "shape not configured");
}

std::string concept_name(const SceneConfig& cfg, int id) {
  const Concept c = concept_of(cfg, id);
  return cfg.colors[static_cast<std::size_t>(c.color)].name + " " + shape_name(c.shape);
}

const Instance* SyntheticScene::find(int identity) const {
  for (const auto& inst : instances)
    if (inst.identity == identity) return &inst;
  return nullptr;
}

std::vector<int> SyntheticScene::concepts_present() const {
  std::set<int> s;
  for (const auto& inst : instances) s.insert(inst.concept_id);
  return {s.begin(), s.end()};
}

namespace {

struct Placement {
  int concept_id;
  int identity;
  double cx, cy, r;
  double vx = 0, vy = 0;
};

struct Bar {
  bool present = false;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

bool inside(ShapeKind shape, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx, dy = py - cy;
  switch (shape) {
    case ShapeKind::kCircle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case ShapeKind::kTriangle: {
      // Upward triangle with apex (0, -r) and base at y = r/2.
      const double h = 0.8660254037844386 * r;
      if (dy > 0.5 * r || dy < -r) return false;
      const double half_width = h * (dy + r) / (1.5 * r);
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

int sample_concept(const std::vector<double>& dist, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (std::size_t i = dist.size(); i-- > 0;)
    if (dist[i] > 0) return static_cast<int>(i);
  return 0;
}

// Visible masks under painter's order (index 0 at the bottom, bar on top).
std::vector<Tensor> visible_masks(const SceneConfig& cfg, const std::vector<Placement>& objs, const Bar& bar) {
  const int n = cfg.image_size;
  std::vector<Tensor> masks(objs.size(), Tensor({n, n}));
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (bar.present && px >= bar.x0 && px < bar.x1 && py >= bar.y0 && py < bar.y1) continue;
      for (std::size_t i = objs.size(); i-- > 0;) {
        const auto& o = objs[i];
        if (inside(concept_of(cfg, o.concept_id).shape, px, py, o.cx, o.cy, o.r)) {
          masks[i].at(y, x) = 1.0;
          break;
        }
      }
    }
  }
  return masks;
}

std::vector<Tensor> full_masks(const SceneConfig& cfg, const std::vector<Placement>& objs) {
  const int n = cfg.image_size;
  std::vector<Tensor> masks(objs.size(), Tensor({n, n}));
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto shape = concept_of(cfg, objs[i].concept_id).shape;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (inside(shape, x + 0.5, y + 0.5, objs[i].cx, objs[i].cy, objs[i].r)) masks[i].at(y, x) = 1.0;
  }
  return masks;
}

double mask_sum(const Tensor& m) {
  double s = 0;
  for (double v : m.vec()) s += v;
  return s;
}

std::vector<Placement> place_objects(const SceneConfig& cfg, Rng& rng, const Bar& bar) {
  const auto dist = cfg.concept_distribution();
  const int count = rng.range(cfg.min_instances, cfg.max_instances);
  std::vector<Placement> placed;
  for (int i = 0; i < count; ++i) {
    Placement p{sample_concept(dist, rng), i, 0, 0, 0};
    bool ok = false;
    for (int attempt = 0; attempt < 500 && !ok; ++attempt) {
      p.r = rng.uniform(cfg.min_radius, cfg.max_radius);
      p.cx = rng.uniform(p.r, cfg.image_size - p.r);
      p.cy = rng.uniform(p.r, cfg.image_size - p.r);
      auto trial = placed;
      trial.push_back(p);
      if (!cfg.allow_occlusion) {
        const auto full = full_masks(cfg, trial);
        ok = true;
        for (std::size_t a = 0; a + 1 < full.size() && ok; ++a)
          for (std::size_t k = 0; k < full[a].numel(); ++k)
            if (full[a][k] > 0 && full.back()[k] > 0) {
              ok = false;
              break;
            }
        if (!ok) continue;
      }
      const auto vis = visible_masks(cfg, trial, bar);
      ok = std::all_of(vis.begin(), vis.end(), [&](const Tensor& m) { return mask_sum(m) >= cfg.min_visible_pixels; });
    }
    if (!ok) {
      fail(ErrorKind::kInvalidArgument, "scene config: could not place " + std::to_string(count) +
                                            " instances (impossible config)");
    }
    placed.push_back(p);
  }
  return placed;
}

SyntheticScene render(const SceneConfig& cfg, const std::vector<Placement>& objs, const Bar& bar, Rng& noise_rng,
                      std::uint64_t seed, int frame) {
  const int n = cfg.image_size;
  SyntheticScene scene;
  scene.seed = seed;
  scene.frame_index = frame;
  scene.image = Tensor({n, n, 3});
  const auto masks = visible_masks(cfg, objs, bar);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      std::array<double, 3> rgb = {0.15, 0.15, 0.15};
      const double px = x + 0.5, py = y + 0.5;
      for (std::size_t i = objs.size(); i-- > 0;) {
        if (inside(concept_of(cfg, objs[i].concept_id).shape, px, py, objs[i].cx, objs[i].cy, objs[i].r)) {
          rgb = cfg.colors[static_cast<std::size_t>(concept_of(cfg, objs[i].concept_id).color)].rgb;
          break;
        }
      }
      if (bar.present && px >= bar.x0 && px < bar.x1 && py >= bar.y0 && py < bar.y1) rgb = {0.5, 0.5, 0.5};
      for (int c = 0; c < 3; ++c) {
        const double v = rgb[static_cast<std::size_t>(c)] + (cfg.noise > 0 ? noise_rng.uniform(-cfg.noise, cfg.noise) : 0.0);
        scene.image[static_cast<std::size_t>((y * n + x) * 3 + c)] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (mask_sum(masks[i]) < cfg.min_visible_pixels) continue;
    scene.instances.push_back({masks[i], objs[i].concept_id, objs[i].identity, objs[i].cx, objs[i].cy, objs[i].r});
  }
  for (const auto& o : objs)
    if (o.vx != 0 || o.vy != 0) scene.motion.push_back({o.identity, o.vx, o.vy});
  return scene;
}

double reflect(double x, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double t = std::fmod(x - lo, 2 * span);
  if (t < 0) t += 2 * span;
  return lo + (t <= span ? t : 2 * span - t);
}

}  // namespace

SyntheticScene gen_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::substream(seed, "scene");
  Rng noise = Rng::substream(seed, "noise");
  const Bar none;
  const auto objs = place_objects(cfg, rng, none);
  return render(cfg, objs, none, noise, seed, 0);
}

std::vector<SyntheticScene> gen_clip(const SceneConfig& cfg, std::uint64_t seed, int length) {
  cfg.validate();
  Rng rng = Rng::substream(seed, "clip");
  const int frames = length > 0 ? length : rng.range(cfg.clip_min_length, cfg.clip_max_length);
  Bar bar;
  if (rng.bernoulli(cfg.occluder_probability)) {
    bar.present = true;
    const double thick = rng.uniform(8.0, 14.0);
    const double pos = rng.uniform(0.2 * cfg.image_size, 0.8 * cfg.image_size);
    if (rng.bernoulli(0.5)) {
      bar.x0 = pos;
      bar.x1 = pos + thick;
      bar.y0 = 0;
      bar.y1 = cfg.image_size;
    } else {
      bar.y0 = pos;
      bar.y1 = pos + thick;
      bar.x0 = 0;
      bar.x1 = cfg.image_size;
    }
  }
  auto objs = place_objects(cfg, rng, bar);
  for (auto& o : objs) {
    o.vx = rng.uniform(-cfg.max_speed, cfg.max_speed);
    o.vy = rng.uniform(-cfg.max_speed, cfg.max_speed);
  }
  std::vector<SyntheticScene> clip;
  for (int t = 0; t < frames; ++t) {
    auto moved = objs;
    for (auto& o : moved) {
      o.cx = reflect(o.cx + o.vx * t, o.r, cfg.image_size - o.r);
      o.cy = reflect(o.cy + o.vy * t, o.r, cfg.image_size - o.r);
    }
    Rng noise = Rng::substream(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(t + 1)), "noise");
    clip.push_back(render(cfg, moved, bar, noise, seed, t));
  }
  return clip;
}

std::vector<int> hard_negatives(const SceneConfig& cfg, const SyntheticScene& scene) {
  const auto present = scene.concepts_present();
  std::vector<int> out;
  for (int id = 0; id < cfg.num_concepts(); ++id) {
    if (std::find(present.begin(), present.end(), id) != present.end()) continue;
    const Concept c = concept_of(cfg, id);
    for (int p : present) {
      const Concept q = concept_of(cfg, p);
      if (q.shape == c.shape || q.color == c.color) {
        out.push_back(id);
        break;
      }
    }
  }
  return out;
}

Tensor preprocess(const SceneConfig& cfg, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) fail(ErrorKind::kShape, "preprocess: expected (H, W, 3) image, got " + num::shape_str(image.shape()));
  const auto h = image.dim(0), w = image.dim(1);
  const auto ph = (h + cfg.pad_multiple - 1) / cfg.pad_multiple * cfg.pad_multiple;
  const auto pw = (w + cfg.pad_multiple - 1) / cfg.pad_multiple * cfg.pad_multiple;
  Tensor out({3, ph, pw});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out[static_cast<std::size_t>((c * ph + y) * pw + x)] = (image[static_cast<std::size_t>((y * w + x) * 3 + c)] - 0.5) / 0.25;
  return out;
}

Tensor downsample_mask(const Tensor& mask, int stride) {
  if (mask.rank() != 2) fail(ErrorKind::kShape, "downsample_mask: expected a 2-D mask");
  const auto gh = mask.dim(0) / stride, gw = mask.dim(1) / stride;
  if (gh <= 0 || gw <= 0) fail(ErrorKind::kShape, "downsample_mask: mask smaller than stride");
  Tensor out({gh, gw});
  const double half = 0.5 * stride * stride;
  for (std::int64_t gy = 0; gy < gh; ++gy)
    for (std::int64_t gx = 0; gx < gw; ++gx) {
      double s = 0;
      for (int y = 0; y < stride; ++y)
        for (int x = 0; x < stride; ++x) s += mask.at(gy * stride + y, gx * stride + x);
      out.at(gy, gx) = s >= half ? 1.0 : 0.0;
    }
  return out;
}

Tensor feature_mask(const SceneConfig& cfg, const SyntheticScene& scene, int identity) {
  const int g = cfg.feature_size();
  const Instance* inst = scene.find(identity);
  if (!inst) return Tensor({g, g});
  // Pad to the network input size before pooling.
  const int padded = g * cfg.feature_stride;
  Tensor m({padded, padded});
  for (std::int64_t y = 0; y < inst->mask.dim(0); ++y)
    for (std::int64_t x = 0; x < inst->mask.dim(1); ++x) m.at(y, x) = inst->mask.at(y, x);
  return downsample_mask(m, cfg.feature_stride);
}

}  // namespace esam3::sim
