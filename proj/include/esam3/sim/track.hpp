#pragma once

// Detect / propagate / merge bookkeeping for masklets.

#include <optional>

#include "esam3/sim/detect.hpp"

namespace esam3::sim {

struct Masklet {
  int identity = 0;
  int concept_id = 0;
  std::vector<int> frames;    // strictly increasing
  std::vector<Tensor> masks;  // one per entry of `frames`
  bool alive = true;
  int ttl = 3;

  const Tensor& latest() const { return masks.back(); }
  /// Mask at `frame`, if recorded.
  std::optional<Tensor> at(int frame) const;
  void record(int frame, Tensor mask);
};

struct MergeConfig {
  double iou_threshold = 0.5;
  double spawn_score = 0.5;
  int ttl = 3;
};

/// Greedy pairing in descending detection score: each detection takes the
/// free masklet with the highest IoU at or above `threshold` (ties: lowest
/// masklet index). iou[d][m]; returns (detection, masklet) pairs.
std::vector<std::pair<int, int>> greedy_match(const std::vector<std::vector<double>>& iou,
                                              const std::vector<double>& scores, double threshold);

/// `propagated[i]` is the propagated mask of masklets[i] at `frame` (dead
/// masklets are skipped). Matched masklets take the detection mask and get
/// their TTL reset; unmatched live masklets keep the propagated mask and lose
/// one TTL, dying at zero; unmatched detections scoring above spawn_score
/// start new identities from `next_identity`.
void merge(std::vector<Masklet>& masklets, const std::vector<Tensor>& propagated,
           const std::vector<Detection>& detections, int frame, const MergeConfig& cfg, int& next_identity,
           int concept_id = 0);

}  // namespace esam3::sim
