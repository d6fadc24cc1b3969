#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <limits>
#include <numeric>

#include "esam3/error.hpp"
#include "esam3/matching.hpp"
#include "esam3/numerics/grad_check.hpp"
#include "esam3/numerics/serialize.hpp"
#include "esam3/promptloop/stage1.hpp"
#include "unit/fixtures.hpp"

using namespace esam3;
using namespace esam3::prompt;
using fixtures::small_model;
using fixtures::small_scene;

namespace {

Tensor grid(int h, int w, std::initializer_list<std::pair<int, int>> on) {
  Tensor t({h, w});
  for (auto [x, y] : on) t.at(y, x) = 1.0;
  return t;
}

Tensor random_mask(int h, int w, Rng& rng, double p) {
  Tensor t({h, w});
  for (double& v : t.vec()) v = rng.bernoulli(p) ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(InitialPrompt, FullFrame) {
  Tensor m = Tensor::ones({8, 8});
  int boxes = 0, points = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    auto p = initial_prompt(m, rng);
    if (p.kind == PromptKind::kBox) {
      ++boxes;
      EXPECT_EQ(p.coords, (std::array<double, 4>{0, 0, 7, 7}));
    } else {
      ++points;
      EXPECT_EQ(p.kind, PromptKind::kPositivePoint);
      EXPECT_LE(std::abs(p.coords[0] - 3.5), 0.5);
      EXPECT_LE(std::abs(p.coords[1] - 3.5), 0.5);
    }
  }
  EXPECT_GT(boxes, 5);
  EXPECT_GT(points, 5);
}

TEST(InitialPrompt, SinglePixelAlwaysPoint) {
  Tensor m = grid(6, 6, {{4, 1}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto p = initial_prompt(m, rng);
    EXPECT_EQ(p.kind, PromptKind::kPositivePoint);
    EXPECT_EQ(p.coords[0], 4);
    EXPECT_EQ(p.coords[1], 1);
  }
}

TEST(InitialPrompt, CShapeUsesNearestInteriorPixel) {
  // C opening to the right: centroid falls in the hole.
  Tensor m({11, 11});
  for (int y = 1; y <= 9; ++y)
    for (int x = 1; x <= 9; ++x) {
      const bool ring = x <= 3 || y <= 3 || y >= 7;
      if (ring) m.at(y, x) = 1.0;
    }
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x)
      if (m.at(y, x) > 0) sx += x, sy += y, n += 1;
  const double cx = sx / n, cy = sy / n;
  ASSERT_EQ(m.at(static_cast<int>(std::lround(cy)), static_cast<int>(std::lround(cx))), 0.0);
  // Exhaustive nearest-interior search.
  double best = std::numeric_limits<double>::infinity();
  std::pair<int, int> expect{-1, -1};
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      if (m.at(y, x) == 0) continue;
      const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d < best) best = d, expect = {x, y};
    }
  auto [px, py] = center_point(m);
  EXPECT_EQ(px, expect.first);
  EXPECT_EQ(py, expect.second);
  EXPECT_EQ(m.at(py, px), 1.0);
}

TEST(InitialPrompt, LargestComponentAndErrors) {
  Tensor m = grid(8, 8, {{0, 0}, {5, 5}, {6, 5}, {5, 6}, {6, 6}});
  auto [x, y] = center_point(m);
  EXPECT_GE(x, 5);
  EXPECT_GE(y, 5);
  Rng rng(1);
  EXPECT_THROW(initial_prompt(Tensor({4, 4}), rng), Error);
}

TEST(PromptTest, ValidateAndOrder) {
  EXPECT_THROW(Prompt::box(3, 1, 3, 4).validate(8, 8), Error);
  EXPECT_THROW(Prompt::point(8, 0, true).validate(8, 8), Error);
  EXPECT_NO_THROW(Prompt::box(0, 0, 7, 7).validate(8, 8));
  PromptSet ps;
  ps.append(Prompt::box(0, 0, 3, 3));
  ps.append(Prompt::point(1, 1, false));
  EXPECT_EQ(ps.prompts[0].order_index, 0);
  EXPECT_EQ(ps.prompts[1].order_index, 1);
  EXPECT_EQ(ps.prompts[1].kind, PromptKind::kNegativePoint);
}

TEST(Disagreement, Examples) {
  Rng rng(2);
  Tensor t = random_mask(6, 6, rng, 0.4);
  auto same = disagreement(t, t);
  EXPECT_EQ(std::accumulate(same.false_negative.vec().begin(), same.false_negative.vec().end(), 0.0), 0.0);
  EXPECT_EQ(std::accumulate(same.false_positive.vec().begin(), same.false_positive.vec().end(), 0.0), 0.0);
  auto zero = disagreement(Tensor({6, 6}), t);
  EXPECT_TRUE(zero.false_negative.same_values(t));
  EXPECT_EQ(std::accumulate(zero.false_positive.vec().begin(), zero.false_positive.vec().end(), 0.0), 0.0);
}

TEST(Disagreement, MatchesPixelLoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor probs = Tensor::uniform({7, 5}, rng, 0.0, 1.0);
    Tensor teacher = random_mask(7, 5, rng, 0.5);
    auto d = disagreement(probs, teacher, 0.3);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 5; ++x) {
        const bool s = probs.at(y, x) >= 0.3, t = teacher.at(y, x) == 1.0;
        EXPECT_EQ(d.false_negative.at(y, x), t && !s ? 1.0 : 0.0);
        EXPECT_EQ(d.false_positive.at(y, x), !t && s ? 1.0 : 0.0);
        EXPECT_FALSE(d.false_negative.at(y, x) == 1.0 && d.false_positive.at(y, x) == 1.0);
      }
  }
  EXPECT_THROW(disagreement(Tensor({2, 2}), Tensor({2, 3})), Error);
}

TEST(CorrectivePoint, Examples) {
  Rng rng(3);
  auto p = corrective_point(grid(5, 5, {{2, 3}}), Tensor({5, 5}), rng);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->kind, PromptKind::kPositivePoint);
  EXPECT_EQ(p->coords[0], 2);
  EXPECT_EQ(p->coords[1], 3);

  Tensor block({7, 7});
  for (int y = 2; y <= 4; ++y)
    for (int x = 1; x <= 3; ++x) block.at(y, x) = 1.0;
  auto n = corrective_point(Tensor({7, 7}), block, rng);
  ASSERT_TRUE(n);
  EXPECT_EQ(n->kind, PromptKind::kNegativePoint);
  EXPECT_EQ(n->coords[0], 2);
  EXPECT_EQ(n->coords[1], 3);

  auto tie = corrective_point(grid(5, 5, {{0, 0}, {1, 0}}), grid(5, 5, {{3, 3}, {4, 3}}), rng);
  ASSERT_TRUE(tie);
  EXPECT_EQ(tie->kind, PromptKind::kPositivePoint);
  EXPECT_FALSE(corrective_point(Tensor({5, 5}), Tensor({5, 5}), rng));
}

TEST(CorrectivePoint, InteriorMostAndInsideRegion) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    Tensor fn = random_mask(9, 9, rng, 0.35), fp({9, 9});
    for (std::size_t i = 0; i < fn.numel(); ++i)
      if (fn[i] == 0 && rng.bernoulli(0.3)) fp[i] = 1.0;
    auto p = corrective_point(fn, fp, rng);
    const double nfn = std::accumulate(fn.vec().begin(), fn.vec().end(), 0.0);
    const double nfp = std::accumulate(fp.vec().begin(), fp.vec().end(), 0.0);
    ASSERT_TRUE(p);
    const Tensor& src = nfn >= nfp ? fn : fp;
    const int x = static_cast<int>(p->coords[0]), y = static_cast<int>(p->coords[1]);
    EXPECT_EQ(src.at(y, x), 1.0);
    // Brute-force distance transform.
    auto dist = [&](int px, int py) {
      double best = std::numeric_limits<double>::infinity();
      for (int yy = -1; yy <= 9; ++yy)
        for (int xx = -1; xx <= 9; ++xx) {
          const bool outside = xx < 0 || yy < 0 || xx >= 9 || yy >= 9;
          if (outside || src.at(yy, xx) == 0) best = std::min(best, std::hypot(xx - px, yy - py));
        }
      return best;
    };
    const double dp = dist(x, y);
    for (int yy = 0; yy < 9; ++yy)
      for (int xx = 0; xx < 9; ++xx)
        if (src.at(yy, xx) == 1.0) EXPECT_LE(dist(xx, yy), dp);
  }
}

TEST(Decoder, DensePromptMaps) {
  PromptSet ps;
  ps.append(Prompt::point(12, 4, true));
  ps.append(Prompt::box(0, 0, 15, 7));
  auto m = dense_prompt_maps(ps, 4, 8);
  ASSERT_EQ(m.shape(), (num::Shape{3, 4, 4}));
  // Point at pixel (12, 4) sits in cell (1, 0) centre.
  EXPECT_DOUBLE_EQ(m[0 * 16 + 0 * 4 + 1], std::exp(-0.5 * (0.0625 * 2 + 0.0)) > 0 ? m[1] : 0);
  EXPECT_GT(m[1], m[0]);
  EXPECT_EQ(m[2 * 16 + 0], 1.0);
  EXPECT_EQ(m[2 * 16 + 1], 1.0);
  EXPECT_EQ(m[2 * 16 + 2], 0.0);
  EXPECT_EQ(m[2 * 16 + 4], 0.0);
}

TEST(Decoder, DeterministicLogits) {
  auto cfg = small_model();
  auto st = model::Student::create(cfg, 3);
  Rng rng(4);
  Tensor feat = Tensor::randn({16, 8, 8}, rng);
  PromptSet ps;
  ps.concept_id = 2;
  ps.append(Prompt::point(20, 30, true));
  Tensor a, b;
  for (Tensor* out : {&a, &b}) {
    num::Tape tape;
    model::Session s(tape, st.params, {});
    *out = decode_prompts(s, cfg, image_embedding(s, s.constant(feat)), ps, 8).value();
  }
  EXPECT_EQ(a.shape(), (num::Shape{8, 8}));
  EXPECT_TRUE(a.same_values(b));
}

namespace {

struct Fixture {
  sim::SceneConfig scfg = small_scene();
  model::ModelConfig cfg = small_model();
  model::Student student = model::Student::create(cfg, 7);
  Teacher teacher = Teacher::oracle({}, 16);
  std::vector<DistillImage> batch;

  explicit Fixture(std::uint64_t seed, int images = 1) {
    TeacherConfig tc;
    tc.encoder = {{8, 8, 16}, {0, 0, 0}};
    teacher = Teacher::oracle(tc, 16);
    scfg.min_instances = scfg.max_instances = 2;
    Rng rng(seed);
    for (int i = 0; i < images; ++i) {
      auto scene = sim::gen_scene(scfg, seed * 31 + static_cast<std::uint64_t>(i));
      batch.push_back(make_distill_image(scfg, scene, "img" + std::to_string(i), teacher, nullptr, rng));
    }
  }

  struct Values {
    double total, feat, mask, task;
    int decodes, refinements;
  };

  Values run(int m, std::uint64_t rng_seed, model::TagSet trainable = {}) {
    num::Tape tape;
    model::Session s(tape, student.params, std::move(trainable));
    Rng rng(rng_seed);
    auto t = stage1_step(s, cfg, batch, teacher, {}, m, 8, rng);
    return {t.total.item(), t.feat.item(), t.mask.item(), t.task.item(), t.decodes, t.refinements};
  }
};

}  // namespace

TEST(Stage1, ZeroLoopsEqualsModuleComposition) {
  Fixture f(5);
  auto t = f.run(0, 1);
  EXPECT_EQ(t.decodes, 2);
  EXPECT_EQ(t.refinements, 0);

  num::Tape tape;
  model::Session s(tape, f.student.params, {});
  const auto& img = f.batch[0];
  Var feat = model::student_features(s, f.cfg, s.constant(img.input));
  const double lfeat = loss::feature_mse(feat.value(), img.teacher_feat);
  Var emb = image_embedding(s, feat);
  std::vector<Tensor> logits, tmasks;
  for (const auto& inst : img.instances) {
    logits.push_back(decode_prompts(s, f.cfg, emb, inst.prompt_set, 8).value());
    tmasks.push_back(inst.teacher_mask);
  }
  loss::LossWeights w;
  auto a = match::hungarian(match::mask_cost_from_logits(logits, tmasks, w));
  double lmask = 0, ltask = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    lmask += loss::mask_loss(logits[i], tmasks[static_cast<std::size_t>(a.row_to_col[i])], w);
    ltask += loss::mask_loss(logits[i], img.instances[i].gt_mask, w);
  }
  EXPECT_NEAR(t.feat, lfeat, 1e-12);
  EXPECT_NEAR(t.mask, lmask / 2, 1e-12);
  EXPECT_NEAR(t.task, ltask / 2, 1e-12);
  EXPECT_NEAR(t.total, loss::total_loss(ltask / 2, lfeat, lmask / 2, w), 1e-12);
}

TEST(Stage1, OneLoopAccumulatesRefinedRound) {
  Fixture f(6);
  auto t0 = f.run(0, 1);
  auto t1 = f.run(1, 1);
  EXPECT_EQ(t1.feat, t0.feat);
  EXPECT_EQ(t1.decodes, 2 + t1.refinements);
  EXPECT_GT(t1.refinements, 0);

  // Replay the refinement round by hand.
  num::Tape tape;
  model::Session s(tape, f.student.params, {});
  const auto& img = f.batch[0];
  Var emb = image_embedding(s, model::student_features(s, f.cfg, s.constant(img.input)));
  loss::LossWeights w;
  Rng rng(1);
  std::vector<Tensor> tmasks;
  std::vector<PromptSet> prompts;
  for (const auto& inst : img.instances) tmasks.push_back(inst.teacher_mask), prompts.push_back(inst.prompt_set);
  double extra_mask = 0, extra_task = 0;
  std::vector<Tensor> round0;
  for (auto& ps : prompts) round0.push_back(decode_prompts(s, f.cfg, emb, ps, 8).value());
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Tensor p = round0[i];
    for (double& v : p.vec()) v = 1 / (1 + std::exp(-v));
    auto d = disagreement(p, tmasks[i]);
    auto pt = corrective_point(d.false_negative, d.false_positive, rng);
    if (!pt) continue;
    pt->coords[0] = pt->coords[0] * 8 + 4;
    pt->coords[1] = pt->coords[1] * 8 + 4;
    prompts[i].append(*pt);
    active.push_back(i);
  }
  std::vector<Tensor> round1;
  for (auto i : active) round1.push_back(decode_prompts(s, f.cfg, emb, prompts[i], 8).value());
  auto a = match::hungarian(match::mask_cost_from_logits(round1, tmasks, w));
  for (std::size_t r = 0; r < active.size(); ++r) {
    extra_mask += loss::mask_loss(round1[r], tmasks[static_cast<std::size_t>(a.row_to_col[r])], w);
    extra_task += loss::mask_loss(round1[r], img.instances[active[r]].gt_mask, w);
  }
  EXPECT_NEAR(t1.mask, t0.mask + extra_mask / 2, 1e-12);
  EXPECT_NEAR(t1.task, t0.task + extra_task / 2, 1e-12);
}

TEST(Stage1, DeterministicAndTeacherUntouched) {
  Fixture f(7, 2);
  const auto h = f.teacher.hash();
  auto a = f.run(1, 9, {model::ModuleTag::kEncoder, model::ModuleTag::kProjection, model::ModuleTag::kDecoder});
  auto b = f.run(1, 9);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(f.teacher.hash(), h);
}

TEST(Stage1, IdenticalTeacherMakesRefinementNoOp) {
  Fixture f(8);
  TeacherConfig tc;
  tc.mode = "trained";
  f.teacher = Teacher::trained(tc, f.student);
  Rng rng(2);
  f.batch.clear();
  auto scene = sim::gen_scene(f.scfg, 99);
  f.batch.push_back(make_distill_image(f.scfg, scene, "same", f.teacher, nullptr, rng));
  auto t0 = f.run(0, 3);
  auto t1 = f.run(2, 3);
  EXPECT_EQ(t0.feat, 0.0);
  EXPECT_EQ(t1.refinements, 0);
  EXPECT_EQ(t1.total, t0.total);
}

TEST(Stage1, Errors) {
  Fixture f(9);
  num::Tape tape;
  model::Session s(tape, f.student.params, {});
  Rng rng(1);
  EXPECT_THROW(stage1_step(s, f.cfg, {}, f.teacher, {}, 1, 8, rng), Error);
  EXPECT_THROW(stage1_step(s, f.cfg, f.batch, f.teacher, {}, -1, 8, rng), Error);
  auto scene = sim::gen_scene(f.scfg, 1);
  EXPECT_THROW(make_distill_image(f.scfg, scene, "x", f.teacher, nullptr, rng, 17), Error);
}

TEST(Stage1, GradientsMatchFiniteDifferences) {
  Fixture f(10);
  std::vector<Tensor*> params;
  for (auto* p : f.student.params.params())
    if (p->tag == model::ModuleTag::kEncoder || p->tag == model::ModuleTag::kProjection ||
        p->tag == model::ModuleTag::kDecoder)
      params.push_back(&p->value);
  auto build = [&](num::Tape& tape) {
    model::Session s(tape, f.student.params,
                     {model::ModuleTag::kEncoder, model::ModuleTag::kProjection, model::ModuleTag::kDecoder});
    Rng rng(4);
    return stage1_step(s, f.cfg, f.batch, f.teacher, {}, 1, 8, rng).total;
  };
  auto r = num::grad_check_params(build, params, 1e-6, 1e-4, 2, 11);
  EXPECT_TRUE(r.ok) << r.max_error;
}

TEST(TeacherCacheTest, PutGetAndCounters) {
  auto dir = fixtures::temp_dir("cache");
  TeacherCache cache(dir);
  Rng rng(1);
  Tensor x = Tensor::randn({2, 3, 3}, rng);
  const auto k = TeacherCache::key("img", {{"size", 64}});
  EXPECT_FALSE(cache.get(k));
  EXPECT_EQ(cache.misses(), 1u);
  cache.put(k, x);
  auto y = cache.get(k);
  ASSERT_TRUE(y);
  EXPECT_TRUE(y->same_values(x));
  EXPECT_EQ(cache.hits(), 1u);
  EXPECT_NE(TeacherCache::key("img", {{"size", 65}}), k);
  std::filesystem::remove_all(dir);
}

TEST(TeacherCacheTest, ReplayOracle) {
  auto dir = fixtures::temp_dir("cache_replay");
  TeacherCache cache(dir);
  Rng rng(5);
  std::set<std::uint64_t> seen;
  std::size_t hits = 0, misses = 0, computes = 0;
  for (int i = 0; i < 100; ++i) {
    const auto k = TeacherCache::key("img" + std::to_string(rng.below(30)), {});
    if (seen.contains(k)) ++hits;
    else ++misses;
    seen.insert(k);
    cache.get_or_compute(k, [&] {
      ++computes;
      return Tensor({1}, {static_cast<double>(k % 1000)});
    });
  }
  EXPECT_EQ(cache.hits(), hits);
  EXPECT_EQ(cache.misses(), misses);
  EXPECT_EQ(computes, misses);
  std::filesystem::remove_all(dir);
}

TEST(TeacherCacheTest, CorruptEntryIsRecomputed) {
  auto dir = fixtures::temp_dir("cache_corrupt");
  TeacherCache cache(dir);
  const auto k = TeacherCache::key("img", {});
  cache.put(k, Tensor({3}, {1, 2, 3}));
  {
    std::ofstream os(cache.path_for(k), std::ios::trunc);
    os << "garbage";
  }
  int computes = 0;
  auto t = cache.get_or_compute(k, [&] {
    ++computes;
    return Tensor({3}, {4, 5, 6});
  });
  EXPECT_EQ(computes, 1);
  EXPECT_EQ(cache.corrupt(), 1u);
  EXPECT_EQ(t[0], 4.0);
  EXPECT_EQ(num::load_tensor(cache.path_for(k))[0], 4.0);
  std::filesystem::remove_all(dir);
}

TEST(TeacherTest, OracleReturnsGroundTruthAndIsFrozen) {
  auto t = Teacher::oracle({}, 64);
  Rng rng(2);
  Tensor input = Tensor::randn({3, 64, 64}, rng);
  auto f = t.features(input);
  EXPECT_EQ(f.shape(), (num::Shape{64, 8, 8}));
  EXPECT_TRUE(f.same_values(t.features(input)));
  Tensor gt = random_mask(8, 8, rng, 0.5);
  PromptSet ps;
  ps.append(Prompt::point(3, 3, true));
  EXPECT_TRUE(t.mask(f, ps, gt, 8).same_values(gt));
  EXPECT_EQ(t.fingerprint().substr(0, 7), "oracle:");
}
