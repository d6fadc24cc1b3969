#pragma once

// Segmentation metrics: IoU / mIoU for images, J, F and J&F for videos.

#include <vector>

#include "esam3/numerics/tensor.hpp"

namespace esam3::sim {

using num::Tensor;

/// |a & b| / |a | b|; two empty masks score 1.
double mask_iou(const Tensor& a, const Tensor& b);
/// Mask minus its 4-neighbour erosion (pixels outside the grid count as off).
Tensor boundary(const Tensor& mask);
/// 3x3 dilation.
Tensor dilate(const Tensor& mask);
/// Boundary F-measure with a 1-pixel tolerance; 1 when both are empty and 0
/// when exactly one is.
double boundary_f(const Tensor& pred, const Tensor& gt);

struct MiouReport {
  std::vector<double> per_scene;  // mean IoU over each scene's instances
  double miou = 0;                // mean of per_scene
};

/// pred[s][i] is compared with gt[s][i].
MiouReport eval_miou(const std::vector<std::vector<Tensor>>& pred, const std::vector<std::vector<Tensor>>& gt);

/// One object's masks over frames.
using MaskTrack = std::vector<Tensor>;

struct JfScore {
  double j = 0, f = 0, jf = 0;
};

/// Predicted tracks are matched to ground-truth tracks by IoU on the first
/// frame (optimal assignment); unmatched ground truth scores against empty
/// predictions. J and F are means over ground-truth objects and frames.
JfScore eval_jf(const std::vector<MaskTrack>& pred, const std::vector<MaskTrack>& gt);

}  // namespace esam3::sim
