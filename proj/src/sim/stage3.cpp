#include "esam3/sim/stage3.hpp"

#include <algorithm>
#include <map>

#include "esam3/error.hpp"
#include "esam3/matching.hpp"
#include "esam3/promptloop/decoder.hpp"

namespace esam3::sim {

Stage3Batch make_stage3_batch(const SceneConfig& scfg, const std::vector<SyntheticScene>& scenes,
                              const std::vector<std::vector<SyntheticScene>>& clips, Rng& rng,
                              const Stage3Sampling& sampling) {
  Stage3Batch batch;
  // concept -> (image, mask) for instances still visible at feature resolution
  std::map<int, std::vector<std::pair<std::size_t, Tensor>>> holders;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& inst : scenes[i].instances) {
      Tensor m = feature_mask(scfg, scenes[i], inst.identity);
      if (std::any_of(m.vec().begin(), m.vec().end(), [](double v) { return v > 0.5; })) holders[inst.concept_id].emplace_back(i, std::move(m));
    }
  }

  auto pick_exemplars = [&](int concept_id) {
    std::vector<ExemplarRef> out;
    auto it = holders.find(concept_id);
    if (it == holders.end() || !rng.bernoulli(sampling.exemplar_probability)) return out;
    const int n = std::min<int>(1 + static_cast<int>(rng.below(2)), static_cast<int>(it->second.size()));
    for (int k = 0; k < n; ++k) {
      const auto& [img, mask] = it->second[rng.below(it->second.size())];
      out.push_back({img, mask});
    }
    return out;
  };

  for (const auto& scene : scenes) {
    Stage3Image img;
    img.input = preprocess(scfg, scene.image);
    for (int c : scene.concepts_present()) {
      ConceptSample cs{c, true, {}, {}};
      for (const auto& inst : scene.instances)
        if (inst.concept_id == c) cs.instance_masks.push_back(feature_mask(scfg, scene, inst.identity));
      img.concepts.push_back(std::move(cs));
    }
    std::vector<int> negatives = hard_negatives(scfg, scene);
    for (std::size_t i = negatives.size(); i > 1; --i) std::swap(negatives[i - 1], negatives[rng.below(i)]);
    const auto present = scene.concepts_present();
    std::vector<int> others;
    for (int c = 0; c < scfg.num_concepts(); ++c)
      if (std::find(present.begin(), present.end(), c) == present.end() &&
          std::find(negatives.begin(), negatives.end(), c) == negatives.end())
        others.push_back(c);
    for (std::size_t i = others.size(); i > 1; --i) std::swap(others[i - 1], others[rng.below(i)]);
    negatives.insert(negatives.end(), others.begin(), others.end());
    negatives.resize(std::min<std::size_t>(negatives.size(), static_cast<std::size_t>(sampling.negatives_per_image)));
    for (int c : negatives) img.concepts.push_back({c, false, {}, {}});
    batch.images.push_back(std::move(img));
  }
  for (auto& img : batch.images)
    for (auto& cs : img.concepts) cs.exemplars = pick_exemplars(cs.concept_id);
  for (const auto& clip : clips) batch.clips.push_back(mem::make_clip_data(scfg, clip, rng));
  return batch;
}

Stage3Terms stage3_step(Session& s, const ModelConfig& cfg, const Stage3Batch& batch, const prompt::Teacher& teacher,
                        const loss::LossWeights& w) {
  std::size_t n_samples = 0;
  for (const auto& img : batch.images) n_samples += img.concepts.size();
  if (n_samples == 0 && batch.clips.empty()) {
    fail(ErrorKind::kInvalidArgument, "stage3_step: batch has no positive concept instance and no negatives");
  }
  std::vector<Var> feats, embs;
  for (const auto& img : batch.images) {
    feats.push_back(model::student_features(s, cfg, s.constant(img.input)));
    embs.push_back(prompt::image_embedding(s, feats.back()));
  }
  std::vector<Var> presence_terms, mask_terms, loc_terms, track_terms;
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    for (const auto& cs : batch.images[i].concepts) {
      std::vector<Exemplar> ex;
      for (const auto& e : cs.exemplars) ex.push_back({feats.at(e.image), e.mask});
      DetectorOutput out = detector_forward(s, cfg, embs[i], prompt_vector(s, cfg, cs.concept_id, ex));
      presence_terms.push_back(loss::score_bce(out.presence_logit, Tensor::scalar(cs.positive ? 1.0 : 0.0)));
      if (!cs.positive) continue;
      if (cs.instance_masks.empty()) fail(ErrorKind::kInvalidArgument, "stage3_step: positive concept without instances");

      const auto nq = static_cast<std::size_t>(cfg.num_queries);
      const auto& shape = cs.instance_masks.front().shape();
      std::vector<Var> logits;
      std::vector<Tensor> values;
      for (std::size_t q = 0; q < nq; ++q) {
        logits.push_back(num::reshape(num::slice(out.mask_logits, 0, static_cast<std::int64_t>(q), static_cast<std::int64_t>(q) + 1), shape));
        values.push_back(logits.back().value());
      }
      // Rows are instances so rows <= columns when queries outnumber them.
      std::vector<Tensor> targets(nq, Tensor(shape));
      Tensor loc_target({static_cast<std::int64_t>(nq)});
      if (cs.instance_masks.size() > nq) fail(ErrorKind::kInvalidArgument, "stage3_step: more instances than queries");
      auto cost = match::mask_cost_from_logits(values, cs.instance_masks, w);
      match::CostMatrix by_instance(cost.cols(), cost.rows());
      for (std::size_t r = 0; r < cost.rows(); ++r)
        for (std::size_t c = 0; c < cost.cols(); ++c) by_instance(c, r) = cost(r, c);
      const auto a = match::hungarian(by_instance);
      for (std::size_t inst = 0; inst < a.row_to_col.size(); ++inst) {
        const auto q = static_cast<std::size_t>(a.row_to_col[inst]);
        targets[q] = cs.instance_masks[inst];
        loc_target[q] = 1.0;
      }
      Var m = loss::mask_loss(logits[0], targets[0], w);
      for (std::size_t q = 1; q < nq; ++q) m = m + loss::mask_loss(logits[q], targets[q], w);
      mask_terms.push_back(num::scale(m, 1.0 / static_cast<double>(nq)));
      loc_terms.push_back(loss::score_bce(out.loc_logits, loc_target));
    }
  }
  for (const auto& clip : batch.clips) track_terms.push_back(mem::stage2_step(s, cfg, clip, teacher, w).total);

  auto mean_or_zero = [&](const std::vector<Var>& v) {
    if (v.empty()) return s.constant(Tensor::zeros({1}));
    Var acc = v.front();
    for (std::size_t i = 1; i < v.size(); ++i) acc = acc + v[i];
    return num::scale(acc, 1.0 / static_cast<double>(v.size()));
  };
  Stage3Terms t;
  t.presence = mean_or_zero(presence_terms);
  t.mask = mean_or_zero(mask_terms);
  t.loc = mean_or_zero(loc_terms);
  t.track = mean_or_zero(track_terms);
  t.total = t.presence + t.mask + t.loc + t.track;
  return t;
}

}  // namespace esam3::sim
