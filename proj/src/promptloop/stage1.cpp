#include "esam3/promptloop/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "esam3/error.hpp"
#include "esam3/matching.hpp"

namespace esam3::prompt {

std::uint64_t teacher_key(const sim::SceneConfig& scfg, const std::string& image_id, const Teacher& teacher) {
  nlohmann::json pre = {{"pad_multiple", scfg.pad_multiple},
                        {"image_size", scfg.image_size},
                        {"normalize", {0.5, 0.25}},
                        {"teacher", teacher.fingerprint()}};
  return TeacherCache::key(image_id, pre);
}

DistillImage make_distill_image(const sim::SceneConfig& scfg, const sim::SyntheticScene& scene,
                                const std::string& image_id, const Teacher& teacher, TeacherCache* cache, Rng& rng,
                                int max_instances) {
  if (max_instances < 1 || max_instances > 16) fail(ErrorKind::kInvalidArgument, "max_instances must lie in [1, 16]");
  DistillImage img;
  img.image_id = image_id;
  img.input = sim::preprocess(scfg, scene.image);
  const auto key = teacher_key(scfg, image_id, teacher);
  img.teacher_feat = cache ? cache->get_or_compute(key, [&] { return teacher.features(img.input); })
                           : teacher.features(img.input);

  std::vector<std::size_t> order(scene.instances.size());
  std::iota(order.begin(), order.end(), 0);
  if (order.size() > static_cast<std::size_t>(max_instances)) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    order.resize(static_cast<std::size_t>(max_instances));
    std::sort(order.begin(), order.end());
  }
  for (std::size_t idx : order) {
    const auto& inst = scene.instances[idx];
    DistillInstance di;
    di.gt_mask = sim::feature_mask(scfg, scene, inst.identity);
    di.teacher_feat_key = key;
    di.prompt_set.concept_id = inst.concept_id;
    di.prompt_set.append(initial_prompt(inst.mask, rng));
    di.teacher_mask = teacher.mask(img.teacher_feat, di.prompt_set, di.gt_mask, scfg.feature_stride);
    img.instances.push_back(std::move(di));
  }
  return img;
}

Stage1Terms stage1_step(Session& s, const ModelConfig& cfg, const std::vector<DistillImage>& batch,
                        const Teacher& teacher, const loss::LossWeights& w, int refinement_loops, int stride,
                        Rng& rng) {
  if (batch.empty()) fail(ErrorKind::kInvalidArgument, "stage1_step: empty batch");
  if (refinement_loops < 0) fail(ErrorKind::kInvalidArgument, "stage1_step: refinement_loops must be >= 0");
  w.validate();
  Stage1Terms out;
  std::vector<Var> feat_terms, task_terms, mask_terms;
  std::size_t instance_count = 0;

  for (const auto& img : batch) {
    if (img.instances.size() > 16) fail(ErrorKind::kInvalidArgument, "stage1_step: more than 16 instances in an image");
    Var feat = model::student_features(s, cfg, s.constant(img.input));
    feat_terms.push_back(loss::feature_mse(feat, img.teacher_feat));
    if (img.instances.empty()) continue;
    instance_count += img.instances.size();
    Var emb = image_embedding(s, feat);

    std::vector<PromptSet> prompts;
    std::vector<Tensor> teacher_masks;
    for (const auto& inst : img.instances) {
      prompts.push_back(inst.prompt_set);
      teacher_masks.push_back(inst.teacher_mask);
    }
    std::vector<std::size_t> active(img.instances.size());
    std::iota(active.begin(), active.end(), 0);

    for (int round = 0; round <= refinement_loops && !active.empty(); ++round) {
      if (round > 0 && !teacher.is_oracle()) {
        for (std::size_t i : active)
          teacher_masks[i] = teacher.mask(img.teacher_feat, prompts[i], img.instances[i].gt_mask, stride);
      }
      std::vector<Var> logits;
      std::vector<Tensor> logit_values;
      for (std::size_t i : active) {
        logits.push_back(decode_prompts(s, cfg, emb, prompts[i], stride));
        logit_values.push_back(logits.back().value());
        ++out.decodes;
      }
      const auto assignment = match::hungarian(match::mask_cost_from_logits(logit_values, teacher_masks, w));
      for (std::size_t r = 0; r < active.size(); ++r) {
        const std::size_t i = active[r];
        const int col = assignment.row_to_col[r];
        const Tensor target = col >= 0 ? teacher_masks[static_cast<std::size_t>(col)] : Tensor(teacher_masks[i].shape());
        mask_terms.push_back(loss::mask_loss(logits[r], target, w));
        task_terms.push_back(loss::mask_loss(logits[r], img.instances[i].gt_mask, w));
      }
      if (round == refinement_loops) break;

      std::vector<std::size_t> next;
      for (std::size_t r = 0; r < active.size(); ++r) {
        const std::size_t i = active[r];
        Tensor probs = logit_values[r];
        for (double& v : probs.vec()) v = 1.0 / (1.0 + std::exp(-v));
        const auto d = disagreement(probs, teacher_masks[i]);
        auto point = corrective_point(d.false_negative, d.false_positive, rng);
        if (!point) continue;
        // Cell -> pixel at the cell's center.
        point->coords[0] = point->coords[0] * stride + stride / 2;
        point->coords[1] = point->coords[1] * stride + stride / 2;
        prompts[i].append(*point);
        ++out.refinements;
        next.push_back(i);
      }
      active = std::move(next);
    }
  }

  auto sum_all = [&](const std::vector<Var>& terms) {
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
    return acc;
  };
  out.feat = num::scale(sum_all(feat_terms), 1.0 / static_cast<double>(feat_terms.size()));
  if (instance_count == 0) {
    Var zero = s.constant(Tensor::zeros({1}));
    out.task = out.mask = zero;
  } else {
    const double inv = 1.0 / static_cast<double>(instance_count);
    out.task = num::scale(sum_all(task_terms), inv);
    out.mask = num::scale(sum_all(mask_terms), inv);
  }
  out.total = loss::total_loss(out.task, out.feat, out.mask, w);
  return out;
}

}  // namespace esam3::prompt
