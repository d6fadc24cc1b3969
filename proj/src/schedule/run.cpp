#include "esam3/schedule/run.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "esam3/error.hpp"
#include "esam3/memory/tracking.hpp"
#include "esam3/promptloop/stage1.hpp"
#include "esam3/sim/stage3.hpp"

namespace esam3::sched {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string tag(int stage, const char* what, int step) {
  return "stage" + std::to_string(stage) + "/" + what + "/" + std::to_string(step);
}

std::uint64_t draw_seed(std::uint64_t seed, const std::string& name) { return Rng::substream(seed, name).next(); }

struct Forward {
  Var total;
  StepLosses losses;
};

Forward forward(const StageConfig& cfg, const model::ModelConfig& mcfg, model::Session& s,
                const prompt::Teacher& teacher, const DataSource& data, int step, prompt::TeacherCache* cache) {
  Rng rng = Rng::substream(cfg.seed, tag(cfg.stage, "batch", step));
  const auto& scfg = data.scene;
  Forward f;
  auto& l = f.losses;
  if (cfg.stage == 1) {
    std::vector<prompt::DistillImage> batch;
    for (const auto& [id, scene] : data.scenes(1, step, cfg.batch_size)) {
      batch.push_back(prompt::make_distill_image(scfg, scene, id, teacher, data.dataset ? cache : nullptr, rng,
                                                 cfg.max_instances));
    }
    auto t = prompt::stage1_step(s, mcfg, batch, teacher, cfg.loss, cfg.refinement_loops, scfg.feature_stride, rng);
    f.total = t.total;
    l.feat = t.feat.item();
    l.mask = t.mask.item();
    l.task = t.task.item();
    l.terms = {{"decodes", t.decodes}, {"refinements", t.refinements}};
  } else if (cfg.stage == 2) {
    if (cfg.clip_batch_size < 1) fail(ErrorKind::kInvalidArgument, "stage 2 needs clip_batch_size >= 1");
    mem::Stage2Options so{cfg.readout_weight};
    std::vector<Var> totals;
    double mask = 0, score = 0, readout = 0;
    const auto clips = data.clips(2, step, cfg.clip_batch_size);
    for (const auto& clip : clips) {
      auto cd = mem::make_clip_data(scfg, clip, rng, cfg.max_tracks);
      auto t = mem::stage2_step(s, mcfg, cd, teacher, cfg.loss, so);
      totals.push_back(t.total);
      mask += t.mask.item();
      score += t.score.item();
      readout += t.readout.item();
    }
    const double n = static_cast<double>(clips.size());
    Var sum = totals[0];
    for (std::size_t i = 1; i < totals.size(); ++i) sum = num::add(sum, totals[i]);
    f.total = num::scale(sum, 1.0 / n);
    l.mask = mask / n;
    l.score = score / n;
    l.terms = {{"readout", readout / n}};
  } else {
    std::vector<sim::SyntheticScene> scenes;
    for (auto& [id, scene] : data.scenes(3, step, cfg.batch_size)) scenes.push_back(std::move(scene));
    const auto clips = data.clips(3, step, cfg.clip_batch_size);
    auto batch = sim::make_stage3_batch(scfg, scenes, clips, rng);
    auto t = sim::stage3_step(s, mcfg, batch, teacher, cfg.loss);
    f.total = t.total;
    l.mask = t.mask.item();
    l.score = t.presence.item() + t.loc.item();
    l.terms = {{"presence", t.presence.item()}, {"loc", t.loc.item()}, {"track", t.track.item()}};
  }
  l.total = f.total.item();
  return f;
}

}  // namespace

std::vector<std::pair<std::string, sim::SyntheticScene>> DataSource::scenes(int stage, int step, int count) const {
  std::vector<std::pair<std::string, sim::SyntheticScene>> out;
  if (dataset) {
    if (dataset->scenes.empty()) fail(ErrorKind::kPrecondition, "dataset holds no scenes");
    Rng pick = Rng::substream(seed, tag(stage, "pick-scenes", step));
    for (int i = 0; i < count; ++i) {
      const auto idx = pick.below(dataset->scenes.size());
      out.emplace_back(dataset->scene_ids[idx], dataset->scenes[idx]);
    }
    return out;
  }
  for (int i = 0; i < count; ++i) {
    const std::string name = tag(stage, "scene", step) + "/" + std::to_string(i);
    out.emplace_back("proc/" + name, sim::gen_scene(scene, draw_seed(seed, name)));
  }
  return out;
}

std::vector<std::vector<sim::SyntheticScene>> DataSource::clips(int stage, int step, int count) const {
  std::vector<std::vector<sim::SyntheticScene>> out;
  if (dataset) {
    if (count > 0 && dataset->clips.empty()) fail(ErrorKind::kPrecondition, "dataset holds no clips");
    Rng pick = Rng::substream(seed, tag(stage, "pick-clips", step));
    for (int i = 0; i < count; ++i) out.push_back(dataset->clips[pick.below(dataset->clips.size())]);
    return out;
  }
  for (int i = 0; i < count; ++i) {
    const std::string name = tag(stage, "clip", step) + "/" + std::to_string(i);
    out.push_back(sim::gen_clip(scene, draw_seed(seed, name)));
  }
  return out;
}

std::vector<sim::SyntheticScene> eval_scenes(const sim::SceneConfig& scfg, std::uint64_t seed, int count) {
  std::vector<sim::SyntheticScene> out;
  for (int i = 0; i < count; ++i) out.push_back(sim::gen_scene(scfg, draw_seed(seed, "eval/scene/" + std::to_string(i))));
  return out;
}

std::vector<std::vector<sim::SyntheticScene>> eval_clips(const sim::SceneConfig& scfg, std::uint64_t seed, int count) {
  std::vector<std::vector<sim::SyntheticScene>> out;
  for (int i = 0; i < count; ++i) out.push_back(sim::gen_clip(scfg, draw_seed(seed, "eval/clip/" + std::to_string(i))));
  return out;
}

prompt::Teacher make_teacher(const prompt::TeacherConfig& tcfg, const model::ModelConfig& model,
                             const sim::SceneConfig& scene) {
  tcfg.validate();
  if (tcfg.mode == "oracle") return prompt::Teacher::oracle(tcfg, model.feat_channels);
  model::ModelConfig tm = model;
  tm.encoder = tcfg.encoder;
  prompt::TeacherConfig oracle_cfg = tcfg;
  oracle_cfg.mode = "oracle";
  Checkpoint c = initial_checkpoint("teacher", tm, oracle_cfg, scene, tcfg.seed);
  StageConfig fit = desk_preset(1);
  fit.base_lr = tcfg.fit_lr;
  fit.total_steps = tcfg.fit_steps;
  fit.loss.lambda1 = 0.0;
  fit.loss.lambda2 = 0.0;
  fit.refinement_loops = 0;
  fit.seed = tcfg.seed;
  fit.validate();
  const auto oracle = prompt::Teacher::oracle(oracle_cfg, tm.feat_channels);
  RunOptions opt;
  opt.teacher = &oracle;
  const DataSource data{scene, nullptr, draw_seed(tcfg.seed, "teacher-fit")};
  auto fitted = run_stage(fit, c, data, opt).checkpoint;
  return prompt::Teacher::trained(tcfg, {tm, std::move(fitted.params)});
}

StepLosses stage_loss(const StageConfig& cfg, const model::ModelConfig& mcfg, model::ParamStore& params,
                      const prompt::Teacher& teacher, const DataSource& data, int step, prompt::TeacherCache* cache) {
  cfg.validate();
  num::Tape tape;
  Rng drop = Rng::substream(cfg.seed, tag(cfg.stage, "dropout", step));
  model::Session s(tape, params, {}, true, &drop);
  return forward(cfg, mcfg, s, teacher, data, step, cache).losses;
}

json strip_timing(const json& record) {
  json r = record;
  r.erase("wall_ms");
  return r;
}

RunResult run_stage(const StageConfig& cfg, const Checkpoint& input, const DataSource& data, const RunOptions& opt) {
  cfg.validate();
  if (input.stage < cfg.stage - 1) {
    fail(ErrorKind::kPrecondition, "stage " + std::to_string(cfg.stage) + " requires a checkpoint from stage " +
                                       std::to_string(cfg.stage - 1) + " (got stage " + std::to_string(input.stage) +
                                       ")");
  }
  if (input.model.encoder.stride() != data.scene.feature_stride) {
    fail(ErrorKind::kInvalidArgument, "data feature_stride does not match the model's encoder stride");
  }
  RunResult res;
  if (cfg.total_steps == 0) {
    res.checkpoint = input;
    if (!opt.out_dir.empty()) save_checkpoint(input, opt.out_dir / "checkpoint");
    return res;
  }

  std::optional<prompt::Teacher> own_teacher;
  if (!opt.teacher) own_teacher = make_teacher(input.teacher, input.model, data.scene);
  const prompt::Teacher& teacher = opt.teacher ? *opt.teacher : *own_teacher;

  Checkpoint ck = input;
  ck.stage = cfg.stage;
  ck.step = 0;
  ck.optim = {};
  ck.ema.reset();
  if (cfg.ema_decay) ck.ema = ck.params;
  const TagSet trainable = cfg.trainable();

  std::ofstream log;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    log.open(opt.out_dir / "metrics.jsonl", std::ios::trunc);
    if (!log) fail(ErrorKind::kIo, "cannot write " + (opt.out_dir / "metrics.jsonl").string());
  }

  for (int step = 0; step < cfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    ck.params.zero_grads();
    num::Tape tape;
    Rng drop = Rng::substream(cfg.seed, tag(cfg.stage, "dropout", step));
    model::Session s(tape, ck.params, trainable, true, &drop);
    auto f = forward(cfg, ck.model, s, teacher, data, step, opt.cache);
    if (!std::isfinite(f.losses.total)) {
      fail(ErrorKind::kNumerical, "non-finite loss at stage " + std::to_string(cfg.stage) + " step " +
                                      std::to_string(step));
    }
    tape.backward(f.total);
    const auto rep = optimizer_step(ck.params, ck.optim, cfg, step);
    if (cfg.ema_decay) ema_update(ck.params, *ck.ema, *cfg.ema_decay);
    ck.step = step + 1;
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    const auto& l = f.losses;
    json rec = {{"stage", cfg.stage},     {"step", step},          {"lr", rep.lr},
                {"loss_total", l.total},  {"loss_feat", l.feat},   {"loss_mask", l.mask},
                {"loss_task", l.task},    {"loss_score", l.score}, {"wall_ms", wall_ms},
                {"grad_norm", rep.grad_norm}, {"terms", l.terms}};
    if (log) log << rec.dump() << "\n" << std::flush;
    if (opt.on_step) opt.on_step(rec);
    res.metrics.push_back(std::move(rec));

    if (!opt.out_dir.empty() && cfg.checkpoint_every > 0 && ck.step % cfg.checkpoint_every == 0 &&
        ck.step < cfg.total_steps) {
      save_checkpoint(ck, opt.out_dir / "checkpoints" / ("step_" + std::to_string(ck.step)));
    }
  }
  ck.params.zero_grads();
  if (!opt.out_dir.empty()) save_checkpoint(ck, opt.out_dir / "checkpoint");
  res.checkpoint = std::move(ck);
  return res;
}

}  // namespace esam3::sched
