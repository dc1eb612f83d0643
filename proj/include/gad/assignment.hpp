#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gad/core_data.hpp"

namespace gad {

/// Rows are ground-truth items, columns are predictions; rows <= cols.
using CostMatrix = Eigen::MatrixXd;

struct AssignmentResult {
  std::vector<int> assignment;  // row -> column, injective
  double total_cost{0.0};       // sum of assigned entries in row order
};

/// Minimum-cost injective row->column assignment (Kuhn-Munkres with
/// potentials, O(n^2 m)). Among optimal assignments the lexicographically
/// smallest assignment vector is returned. Throws ShapeError if rows > cols.
AssignmentResult hungarian(const CostMatrix& costs);

/// Supervision target for one ground-truth slot; activity 0 marks a padding slot.
struct GroupTarget {
  int activity{0};
  Eigen::VectorXd membership;  // {0,1}^N in clip actor order
};

/// The clip's groups followed by empty targets up to `num_slots`.
/// Throws DimError if the clip has more groups than slots.
std::vector<GroupTarget> padded_targets(const Clip& clip, int num_slots);

/// Matching cost between ground-truth slots (rows) and predicted groups
/// (columns): -p(y) + ||m - m_hat||_2 for real targets, 0 for padding.
/// `class_probs` is K x (C+1), `member_probs` is K x N.
CostMatrix group_matching_cost(std::span<const GroupTarget> targets, const Eigen::MatrixXd& class_probs,
                               const Eigen::MatrixXd& member_probs);
CostMatrix group_matching_cost(std::span<const GroupTarget> targets, std::span<const GroupPrediction> preds);

template <typename Scalar>
Scalar box_iou(const BasicBox<Scalar>& a, const BasicBox<Scalar>& b) {
  using std::max;
  using std::min;
  const Scalar iw = max(Scalar(0), min(a.x2, b.x2) - max(a.x1, b.x1));
  const Scalar ih = max(Scalar(0), min(a.y2, b.y2) - max(a.y1, b.y1));
  const Scalar inter = iw * ih;
  const Scalar uni = a.area() + b.area() - inter;
  return uni > Scalar(0) ? inter / uni : Scalar(0);
}

/// Generalized IoU in [-1, 1].
template <typename Scalar>
Scalar giou(const BasicBox<Scalar>& a, const BasicBox<Scalar>& b) {
  using std::max;
  using std::min;
  const Scalar iw = max(Scalar(0), min(a.x2, b.x2) - max(a.x1, b.x1));
  const Scalar ih = max(Scalar(0), min(a.y2, b.y2) - max(a.y1, b.y1));
  const Scalar inter = iw * ih;
  const Scalar uni = a.area() + b.area() - inter;
  const Scalar hull = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1));
  return inter / uni - (hull - uni) / hull;
}

struct TrackletCostWeights {
  double l1{5.0};
  double giou{2.0};
};

/// Sum over `frames` of l1 * ||b - b_hat||_1 + giou * (1 - GIoU(b, b_hat)).
/// Boxes are expected in normalized [0, 1] coordinates. Throws FrameMismatch
/// if a tracklet lacks a box at one of the frames.
CostMatrix tracklet_matching_cost(std::span<const Tracklet> gt, std::span<const Tracklet> pred,
                                  std::span<const int> frames, TrackletCostWeights weights = {});

/// Same, over the frame set shared by every tracklet (FrameMismatch if the
/// frame sets differ).
CostMatrix tracklet_matching_cost(std::span<const Tracklet> gt, std::span<const Tracklet> pred,
                                  TrackletCostWeights weights = {});

/// Mean IoU over `frames` between two tracklets.
double mean_tracklet_iou(const Tracklet& a, const Tracklet& b, std::span<const int> frames);

/// Greedy identity matching in descending mean-IoU order. Every predicted
/// actor id maps to the matched ground-truth id or std::nullopt.
std::map<ActorId, std::optional<ActorId>> identity_match(std::span<const Tracklet> gt,
                                                         std::span<const Tracklet> pred,
                                                         std::span<const int> frames,
                                                         double iou_threshold = 0.5);

}  // namespace gad
