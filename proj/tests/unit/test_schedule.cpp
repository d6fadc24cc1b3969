#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "esam3/error.hpp"
#include "esam3/model/encoder.hpp"
#include "esam3/schedule/run.hpp"
#include "unit/fixtures.hpp"

using namespace esam3;
using namespace esam3::sched;
using model::ModuleTag;
using fixtures::small_model;
using fixtures::small_scene;
using fixtures::temp_dir;

namespace {

StageConfig quadratic_cfg() {
  StageConfig c;
  c.total_steps = 10;
  c.warmup_steps = 2;
  c.base_lr = 0.1;
  c.trainable_modules = model::TagSet{ModuleTag::kEncoder, ModuleTag::kDecoder};
  return c;
}

}  // namespace

TEST(LearningRate, WarmupAndCosine) {
  auto c = full_preset(1);
  EXPECT_EQ(c.warmup(), 1000);
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_EQ(lr_at(1000, c), 1e-4);
  const int mid = 1000 + (c.total_steps - 1000) / 2;
  EXPECT_NEAR(lr_at(mid, c), 5e-5, 1e-18);
  EXPECT_NEAR(lr_at(c.total_steps, c), 0.0, 1e-20);
  EXPECT_NEAR(lr_at(500, c), 5e-5, 1e-18);
  EXPECT_THROW(lr_at(-1, c), Error);
  EXPECT_THROW(lr_at(c.total_steps + 1, c), Error);
}

TEST(LearningRate, ContinuousAndNonNegative) {
  StageConfig c;
  c.total_steps = 200;
  c.base_lr = 3e-3;
  EXPECT_EQ(c.warmup(), 20);
  double prev = 0;
  for (int s = 0; s <= c.total_steps; ++s) {
    const double lr = lr_at(s, c);
    EXPECT_GE(lr, 0.0);
    EXPECT_LE(std::abs(lr - prev), c.base_lr / 20 + 1e-15);
    prev = lr;
  }
}

TEST(StageConfigTest, WarmupMustPrecedeEnd) {
  StageConfig c;
  c.total_steps = 10;
  c.warmup_steps = 10;
  EXPECT_THROW(c.validate(), Error);
  c.warmup_steps = 9;
  EXPECT_NO_THROW(c.validate());
}

TEST(StageConfigTest, JsonIsStrict) {
  StageConfig c = desk_preset(3);
  nlohmann::json j = c;
  StageConfig back;
  from_json(j, back);
  EXPECT_EQ(nlohmann::json(back), j);
  j["learning_rate"] = 1.0;
  EXPECT_THROW(from_json(j, back), Error);
  EXPECT_EQ(back.seed, 42u);
}

TEST(StageConfigTest, FullScalePresets) {
  EXPECT_EQ(full_preset(1).batch_size, 64);
  EXPECT_EQ(full_preset(2).clip_batch_size, 16);
  EXPECT_EQ(full_preset(3).batch_size, 32);
  EXPECT_EQ(full_preset(3).clip_batch_size, 8);
  EXPECT_EQ(*full_preset(3).clip_norm, 1.0);
  EXPECT_EQ(full_preset(1).weight_decay_encoder, 0.05);
  EXPECT_EQ(full_preset(1).weight_decay_other, 0.01);
  EXPECT_THROW(full_preset(4), Error);
}

TEST(Optimizer, ZeroGradZeroDecayLeavesParams) {
  model::ParamStore ps;
  Rng rng(1);
  ps.add("a", ModuleTag::kEncoder, Tensor::randn({3, 2}, rng));
  const Tensor before = ps.get("a");
  ps.get("a").accumulate_grad(std::vector<double>(6, 0.0));
  auto c = quadratic_cfg();
  c.weight_decay_encoder = c.weight_decay_other = 0;
  AdamState st;
  for (int s = 0; s < 5; ++s) optimizer_step(ps, st, c, s);
  EXPECT_TRUE(ps.get("a").same_values(before));
}

TEST(Optimizer, ClipScalesGradients) {
  model::ParamStore ps;
  ps.add("a", ModuleTag::kDecoder, Tensor::zeros({2}));
  ps.get("a").accumulate_grad(std::vector<double>{6.0, 8.0});
  auto c = quadratic_cfg();
  c.clip_norm = 1.0;
  AdamState st;
  auto r = optimizer_step(ps, st, c, 3);
  EXPECT_DOUBLE_EQ(r.grad_norm, 10.0);
  EXPECT_DOUBLE_EQ(r.clip_scale, 0.1);
  EXPECT_NEAR(st.moments.at("a").m[0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(st.moments.at("a").m[1], 0.1 * 0.8, 1e-15);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  model::ParamStore ps;
  ps.add("enc.bad", ModuleTag::kEncoder, Tensor::zeros({2}));
  ps.get("enc.bad").accumulate_grad(std::vector<double>{1.0, NAN});
  AdamState st;
  try {
    optimizer_step(ps, st, quadratic_cfg(), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
    EXPECT_NE(std::string(e.what()).find("enc.bad"), std::string::npos);
  }
}

TEST(Optimizer, DecaySplitSingleStep) {
  model::ParamStore ps;
  ps.add("e", ModuleTag::kEncoder, Tensor({1}, {2.0}));
  ps.add("d", ModuleTag::kDecoder, Tensor({1}, {2.0}));
  ps.get("e").accumulate_grad(std::vector<double>{0.0});
  ps.get("d").accumulate_grad(std::vector<double>{0.0});
  auto c = quadratic_cfg();
  AdamState st;
  auto r = optimizer_step(ps, st, c, 5);
  EXPECT_EQ(ps.get("e")[0], 2.0 * (1.0 - r.lr * 0.05));
  EXPECT_EQ(ps.get("d")[0], 2.0 * (1.0 - r.lr * 0.01));
}

TEST(Optimizer, QuadraticMatchesReferenceTranscription) {
  // f(w) = 0.5 * sum(a_i * w_i^2); grad = a * w.
  Rng rng(11);
  const Tensor a = Tensor::uniform({4}, rng, 0.5, 2.0);
  const Tensor w0 = Tensor::randn({4}, rng);
  auto c = quadratic_cfg();
  c.clip_norm = 0.5;

  model::ParamStore ps;
  ps.add("w", ModuleTag::kDecoder, w0);
  AdamState st;

  std::vector<double> w(w0.vec()), m(4, 0.0), v(4, 0.0);
  for (int step = 0; step < 3; ++step) {
    ps.zero_grads();
    std::vector<double> g(4);
    for (int i = 0; i < 4; ++i) g[i] = a[i] * ps.get("w")[i];
    ps.get("w").accumulate_grad(g);
    optimizer_step(ps, st, c, step);

    // Reference.
    const double lr = step < 2 ? 0.1 * step / 2.0 : 0.1 * 0.5 * (1 + std::cos(M_PI * (step - 2) / 8.0));
    std::vector<double> gr(4);
    double norm = 0;
    for (int i = 0; i < 4; ++i) {
      gr[i] = a[i] * w[i];
      norm += gr[i] * gr[i];
    }
    norm = std::sqrt(norm);
    const double scale = norm > 0.5 ? 0.5 / norm : 1.0;
    const int t = step + 1;
    for (int i = 0; i < 4; ++i) {
      const double gi = gr[i] * scale;
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      w[i] = w[i] - lr * 0.01 * w[i] - lr * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(ps.get("w")[i], w[i], 1e-14);
  }
}

TEST(Optimizer, FrozenAndGradlessParamsUntouched) {
  model::ParamStore ps;
  ps.add("p", ModuleTag::kPerceiver, Tensor({1}, {1.0}));
  ps.add("d", ModuleTag::kDecoder, Tensor({1}, {1.0}));
  ps.get("p").accumulate_grad(std::vector<double>{1.0});
  AdamState st;
  auto r = optimizer_step(ps, st, quadratic_cfg(), 4);
  EXPECT_EQ(r.updated, 0);
  EXPECT_EQ(ps.get("p")[0], 1.0);
  EXPECT_EQ(ps.get("d")[0], 1.0);
}

TEST(Ema, ClosedForm) {
  Rng rng(3);
  model::ParamStore model_ps, ema;
  model_ps.add("x", ModuleTag::kDecoder, Tensor::randn({5}, rng));
  ema.add("x", ModuleTag::kDecoder, model_ps.get("x"));
  const Tensor e0 = ema.get("x");
  std::vector<Tensor> history;
  const double d = 0.99;
  for (int k = 0; k < 5; ++k) {
    model_ps.get("x") = Tensor::randn({5}, rng);
    history.push_back(model_ps.get("x"));
    ema_update(model_ps, ema, d);
  }
  for (int i = 0; i < 5; ++i) {
    double expect = std::pow(d, 5) * e0[i];
    for (int k = 0; k < 5; ++k) expect += (1 - d) * std::pow(d, 4 - k) * history[k][i];
    EXPECT_NEAR(ema.get("x")[i], expect, 1e-12);
  }
}

TEST(Ema, LimitsAndErrors) {
  model::ParamStore m, e;
  m.add("x", ModuleTag::kDecoder, Tensor({2}, {1.0, 2.0}));
  e.add("x", ModuleTag::kDecoder, Tensor({2}, {5.0, 6.0}));
  auto e2 = e;
  ema_update(m, e2, 0.0);
  EXPECT_TRUE(e2.get("x").same_values(m.get("x")));
  auto e3 = e;
  ema_update(m, e3, 1.0 - 1e-12);
  EXPECT_NEAR(e3.get("x")[0], 5.0, 1e-10);
  EXPECT_THROW(ema_update(m, e, 1.0), Error);
  model::ParamStore bad;
  bad.add("x", ModuleTag::kDecoder, Tensor({3}));
  EXPECT_THROW(ema_update(m, bad, 0.5), Error);
}

TEST(Freezing, Policy) {
  EXPECT_EQ(freezing_policy(1), (model::TagSet{ModuleTag::kEncoder, ModuleTag::kProjection, ModuleTag::kDecoder}));
  EXPECT_EQ(freezing_policy(2), (model::TagSet{ModuleTag::kPerceiver, ModuleTag::kTrackingHead}));
  EXPECT_EQ(freezing_policy(3), (model::TagSet{ModuleTag::kPerceiver, ModuleTag::kDecoder, ModuleTag::kPresenceHead,
                                               ModuleTag::kConceptTable}));
  EXPECT_TRUE(freezing_policy(3, true).contains(ModuleTag::kEncoder));
  EXPECT_TRUE(freezing_policy(2, true).contains(ModuleTag::kEncoder));
  EXPECT_THROW(freezing_policy(0), Error);
}

TEST(Zoo, OrderedWithinFamily) {
  std::map<std::string, std::vector<std::pair<double, std::size_t>>> fam;
  ASSERT_EQ(model_zoo().size(), 9u);
  for (const auto& e : model_zoo()) fam[e.family].emplace_back(e.nominal_params_m, model::encoder_param_count(e.encoder));
  EXPECT_EQ(fam.size(), 3u);
  for (auto& [name, v] : fam) {
    std::sort(v.begin(), v.end());
    for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LT(v[i - 1].second, v[i].second) << name;
  }
  EXPECT_EQ(zoo_entry("ES-RV-S").backbone, "RepViT-M0.9");
  EXPECT_THROW(zoo_entry("ES-XX-S"), Error);
}

TEST(Checkpoint, RoundTrip) {
  auto ck = initial_checkpoint("tiny", small_model(), {}, small_scene(), 5);
  ck.stage = 1;
  ck.step = 3;
  ck.optim.t = 3;
  ck.optim.moments["proj.w"] = {Tensor({1}, {0.5}), Tensor({1}, {0.25})};
  ck.ema = ck.params;
  const auto dir = temp_dir("roundtrip");
  save_checkpoint(ck, dir);
  auto back = load_checkpoint(dir);
  EXPECT_TRUE(same_checkpoint(ck, back));
  EXPECT_EQ(back.params.hash(), ck.params.hash());
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, MissingIsPrecondition) {
  try {
    load_checkpoint(temp_dir("missing"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPrecondition);
  }
}

TEST(RunStage, ZeroStepsReturnsInput) {
  auto ck = initial_checkpoint("tiny", small_model(), {}, small_scene(), 5);
  auto cfg = desk_preset(1);
  cfg.total_steps = 0;
  auto r = run_stage(cfg, ck, {small_scene(), nullptr, 1});
  EXPECT_TRUE(same_checkpoint(r.checkpoint, ck));
  EXPECT_TRUE(r.metrics.empty());
}

TEST(RunStage, LaterStagesNeedPriorCheckpoint) {
  auto ck = initial_checkpoint("tiny", small_model(), {}, small_scene(), 5);
  auto cfg = desk_preset(2);
  try {
    run_stage(cfg, ck, {small_scene(), nullptr, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPrecondition);
  }
}

TEST(RunStage, DeterministicAndFreezesByTag) {
  auto ck = initial_checkpoint("tiny", small_model(), {}, small_scene(), 5);
  auto cfg = desk_preset(1);
  cfg.total_steps = 3;
  cfg.batch_size = 1;
  const sim::SceneConfig scene = small_scene();
  const auto dir = temp_dir("det");
  RunOptions opt;
  opt.out_dir = dir;
  auto a = run_stage(cfg, ck, {scene, nullptr, 9}, opt);
  auto b = run_stage(cfg, ck, {scene, nullptr, 9});
  ASSERT_EQ(a.metrics.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(strip_timing(a.metrics[i]).dump(), strip_timing(b.metrics[i]).dump());
  EXPECT_TRUE(same_checkpoint(a.checkpoint, b.checkpoint));
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.jsonl"));
  EXPECT_TRUE(same_checkpoint(load_checkpoint(dir / "checkpoint"), a.checkpoint));

  const model::TagSet frozen = {ModuleTag::kPerceiver, ModuleTag::kTrackingHead, ModuleTag::kPresenceHead,
                                ModuleTag::kConceptTable};
  EXPECT_EQ(a.checkpoint.params.hash(frozen), ck.params.hash(frozen));
  EXPECT_NE(a.checkpoint.params.hash({ModuleTag::kEncoder}), ck.params.hash({ModuleTag::kEncoder}));
  EXPECT_EQ(a.checkpoint.stage, 1);

  // Stage 2 keeps the encoder, then stage 3 with the encoder unfrozen moves it.
  auto c2 = desk_preset(2);
  c2.total_steps = 2;
  c2.clip_batch_size = 1;
  auto s2 = run_stage(c2, a.checkpoint, {scene, nullptr, 9});
  const model::TagSet s2_frozen = {ModuleTag::kEncoder, ModuleTag::kProjection, ModuleTag::kDecoder,
                                   ModuleTag::kPresenceHead, ModuleTag::kConceptTable};
  EXPECT_EQ(s2.checkpoint.params.hash(s2_frozen), a.checkpoint.params.hash(s2_frozen));
  EXPECT_NE(s2.checkpoint.params.hash({ModuleTag::kPerceiver}), a.checkpoint.params.hash({ModuleTag::kPerceiver}));

  auto c3 = desk_preset(3);
  c3.total_steps = 1;
  c3.batch_size = 1;
  c3.clip_batch_size = 1;
  c3.unfreeze_encoder = true;
  auto s3 = run_stage(c3, s2.checkpoint, {scene, nullptr, 9});
  EXPECT_NE(s3.checkpoint.params.hash({ModuleTag::kEncoder}), s2.checkpoint.params.hash({ModuleTag::kEncoder}));
  EXPECT_EQ(s3.checkpoint.params.hash({ModuleTag::kProjection}), s2.checkpoint.params.hash({ModuleTag::kProjection}));
  ASSERT_TRUE(s3.checkpoint.ema.has_value());
  std::filesystem::remove_all(dir);
}

TEST(RunStage, StageLossReproducesLoggedStepZero) {
  auto ck = initial_checkpoint("tiny", small_model(), {}, small_scene(), 5);
  auto cfg = desk_preset(1);
  cfg.total_steps = 1;
  cfg.batch_size = 2;
  const DataSource data{small_scene(), nullptr, 4};
  auto r = run_stage(cfg, ck, data);
  auto teacher = make_teacher(ck.teacher, ck.model, data.scene);
  auto l = stage_loss(cfg, ck.model, ck.params, teacher, data, 0);
  EXPECT_EQ(l.total, r.metrics[0]["loss_total"].get<double>());
}
