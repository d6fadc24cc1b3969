#include "esam3/sim/track.hpp"

#include <algorithm>
#include <numeric>

#include "esam3/error.hpp"
#include "esam3/sim/metrics.hpp"

namespace esam3::sim {

std::optional<Tensor> Masklet::at(int frame) const {
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i] == frame) return masks[i];
  return std::nullopt;
}

void Masklet::record(int frame, Tensor mask) {
  if (!frames.empty() && frame <= frames.back()) fail(ErrorKind::kPrecondition, "masklet frames must increase");
  frames.push_back(frame);
  masks.push_back(std::move(mask));
}

std::vector<std::pair<int, int>> greedy_match(const std::vector<std::vector<double>>& iou,
                                              const std::vector<double>& scores, double threshold) {
  if (iou.size() != scores.size()) fail(ErrorKind::kInvalidArgument, "greedy_match: one score per detection");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  const std::size_t n_m = iou.empty() ? 0 : iou.front().size();
  std::vector<bool> taken(n_m, false);
  std::vector<std::pair<int, int>> pairs;
  for (int d : order) {
    int best = -1;
    double best_iou = threshold;
    for (std::size_t m = 0; m < n_m; ++m) {
      const double v = iou[static_cast<std::size_t>(d)][m];
      if (taken[m] || v < best_iou || (best >= 0 && v == best_iou)) continue;
      best = static_cast<int>(m);
      best_iou = v;
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      pairs.emplace_back(d, best);
    }
  }
  return pairs;
}

void merge(std::vector<Masklet>& masklets, const std::vector<Tensor>& propagated,
           const std::vector<Detection>& detections, int frame, const MergeConfig& cfg, int& next_identity,
           int concept_id) {
  if (propagated.size() != masklets.size()) fail(ErrorKind::kInvalidArgument, "merge: one propagated mask per masklet");
  std::vector<std::vector<double>> iou(detections.size(), std::vector<double>(masklets.size(), 0.0));
  std::vector<double> scores;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    scores.push_back(detections[d].score);
    for (std::size_t m = 0; m < masklets.size(); ++m)
      iou[d][m] = masklets[m].alive ? mask_iou(detections[d].mask, propagated[m]) : -1.0;
  }
  const auto pairs = greedy_match(iou, scores, cfg.iou_threshold);
  std::vector<bool> det_used(detections.size(), false), matched(masklets.size(), false);
  for (auto [d, m] : pairs) {
    det_used[static_cast<std::size_t>(d)] = true;
    matched[static_cast<std::size_t>(m)] = true;
    auto& ml = masklets[static_cast<std::size_t>(m)];
    ml.record(frame, detections[static_cast<std::size_t>(d)].mask);
    ml.ttl = cfg.ttl;
  }
  for (std::size_t m = 0; m < masklets.size(); ++m) {
    auto& ml = masklets[m];
    if (!ml.alive || matched[m]) continue;
    ml.record(frame, propagated[m]);
    if (--ml.ttl <= 0) ml.alive = false;
  }
  for (std::size_t d = 0; d < detections.size(); ++d) {
    if (det_used[d] || detections[d].score <= cfg.spawn_score) continue;
    Masklet ml;
    ml.identity = next_identity++;
    ml.concept_id = concept_id;
    ml.ttl = cfg.ttl;
    ml.record(frame, detections[d].mask);
    masklets.push_back(std::move(ml));
  }
}

}  // namespace esam3::sim
