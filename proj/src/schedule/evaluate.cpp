#include "esam3/schedule/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "esam3/error.hpp"
#include "esam3/promptloop/decoder.hpp"
#include "esam3/sim/detect.hpp"

namespace esam3::sched {

Predictor predictor_from_name(const std::string& name) {
  if (name == "student") return Predictor::kStudent;
  if (name == "teacher") return Predictor::kTeacher;
  if (name == "empty") return Predictor::kEmpty;
  fail(ErrorKind::kInvalidArgument, "unknown predictor '" + name + "' (expected student, teacher or empty)");
}

Tensor student_feature_map(const model::Student& student, const Tensor& input) {
  auto params = student.params;
  num::Tape tape;
  model::Session s(tape, params, {});
  return model::student_features(s, student.cfg, s.constant(input)).value();
}

PromptEval eval_prompt_miou(const model::Student& student, const prompt::Teacher& teacher,
                            const sim::SceneConfig& scfg, const std::vector<sim::SyntheticScene>& scenes,
                            std::uint64_t seed, Predictor predictor) {
  auto params = student.params;
  std::vector<std::vector<Tensor>> pred, ref;
  PromptEval out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& scene = scenes[i];
    Rng rng = Rng::substream(seed, "eval/prompt/" + std::to_string(i));
    const Tensor input = sim::preprocess(scfg, scene.image);
    const Tensor tfeat = teacher.features(input);
    num::Tape tape;
    model::Session s(tape, params, {});
    Var emb;
    if (predictor == Predictor::kStudent)
      emb = prompt::image_embedding(s, model::student_features(s, student.cfg, s.constant(input)));
    std::vector<Tensor> p, r;
    for (const auto& inst : scene.instances) {
      prompt::PromptSet ps;
      ps.concept_id = inst.concept_id;
      ps.append(prompt::initial_prompt(inst.mask, rng));
      const Tensor gt = sim::feature_mask(scfg, scene, inst.identity);
      const Tensor tm = teacher.mask(tfeat, ps, gt, scfg.feature_stride);
      Tensor pm(tm.shape());
      if (predictor == Predictor::kTeacher) {
        pm = tm;
      } else if (predictor == Predictor::kStudent) {
        const Tensor logits = prompt::decode_prompts(s, student.cfg, emb, ps, scfg.feature_stride).value();
        for (std::size_t k = 0; k < pm.numel(); ++k) pm[k] = logits[k] > 0 ? 1.0 : 0.0;
      }
      p.push_back(std::move(pm));
      r.push_back(tm);
      ++out.instances;
    }
    pred.push_back(std::move(p));
    ref.push_back(std::move(r));
  }
  out.report = sim::eval_miou(pred, ref);
  return out;
}

TrackEval eval_tracking(const model::Student& student, const sim::SceneConfig& scfg,
                        const std::vector<std::vector<sim::SyntheticScene>>& clips, bool use_memory,
                        std::uint64_t seed, Predictor predictor) {
  if (predictor == Predictor::kTeacher)
    fail(ErrorKind::kInvalidArgument, "the teacher has no tracker; use the student or empty predictor");
  auto net = student;
  TrackEval out;
  double j = 0, f = 0;
  int frames = 0;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    Rng rng = Rng::substream(seed, "eval/clip/" + std::to_string(c));
    const auto cd = mem::make_clip_data(scfg, clips[c], rng);
    std::vector<std::vector<Tensor>> pred;
    if (predictor == Predictor::kStudent) {
      pred = mem::track_clip(net, cd, use_memory);
    } else {
      for (const auto& t : cd.tracks) pred.emplace_back(t.masks.size() - 1, Tensor::zeros(t.masks.front().shape()));
    }
    double clip_j = 0;
    int clip_frames = 0;
    for (std::size_t k = 0; k < cd.tracks.size(); ++k) {
      for (std::size_t t = 1; t < cd.tracks[k].masks.size(); ++t) {
        const double iou = sim::mask_iou(pred[k][t - 1], cd.tracks[k].masks[t]);
        j += iou;
        clip_j += iou;
        f += sim::boundary_f(pred[k][t - 1], cd.tracks[k].masks[t]);
        ++frames;
        ++clip_frames;
      }
      ++out.tracks;
    }
    out.per_clip_j.push_back(clip_frames ? clip_j / clip_frames : 0.0);
  }
  if (frames > 0) {
    out.score.j = j / frames;
    out.score.f = f / frames;
    out.score.jf = 0.5 * (out.score.j + out.score.f);
  }
  return out;
}

PresenceEval eval_presence(const model::Student& student, const sim::SceneConfig& scfg,
                           const std::vector<sim::SyntheticScene>& scenes, std::uint64_t seed) {
  auto net = student;
  PresenceEval out;
  double bce = 0;
  int correct = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& scene = scenes[i];
    Rng rng = Rng::substream(seed, "eval/presence/" + std::to_string(i));
    std::vector<std::pair<int, bool>> pairs;
    for (int c : scene.concepts_present()) pairs.emplace_back(c, true);
    auto neg = sim::hard_negatives(scfg, scene);
    if (neg.empty()) {
      const auto present = scene.concepts_present();
      std::vector<int> absent;
      for (int c = 0; c < scfg.num_concepts(); ++c)
        if (std::find(present.begin(), present.end(), c) == present.end()) absent.push_back(c);
      if (!absent.empty()) neg.push_back(absent[rng.below(absent.size())]);
    }
    for (int c : neg) pairs.emplace_back(c, false);
    const Tensor feat = student_feature_map(net, sim::preprocess(scfg, scene.image));
    for (const auto& [c, positive] : pairs) {
      const auto res = sim::detect(net, feat, c);
      const double p = std::clamp(res.presence, 1e-12, 1.0 - 1e-12);
      bce += positive ? -std::log(p) : -std::log(1.0 - p);
      if ((res.presence > 0.5) == positive) ++correct;
      ++out.pairs;
      (positive ? out.positives : out.negatives) += 1;
      for (const auto& d : res.detections) {
        ++out.detections;
        if (d.score > std::min(d.presence, d.localization)) ++out.gating_violations;
      }
    }
  }
  if (out.pairs > 0) {
    out.bce = bce / out.pairs;
    out.accuracy = static_cast<double>(correct) / out.pairs;
  }
  return out;
}

}  // namespace esam3::sched
