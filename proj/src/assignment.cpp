#include "gad/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "gad/error.hpp"

namespace gad {

namespace {

// Kuhn-Munkres with row/column potentials. Returns row -> column.
std::vector<int> solve_assignment(const CostMatrix& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based internally; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> owner(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (owner[j] != 0) assignment[static_cast<std::size_t>(owner[j] - 1)] = j - 1;
  }
  return assignment;
}

double assigned_cost(const CostMatrix& a, const std::vector<int>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += a(static_cast<Eigen::Index>(i), assignment[i]);
  return total;
}

// Optimal cost of rows [first_row, n) over the columns not in `taken`.
double residual_optimum(const CostMatrix& a, int first_row, const std::vector<char>& taken) {
  const int n = static_cast<int>(a.rows());
  if (first_row >= n) return 0.0;
  std::vector<int> cols;
  for (int j = 0; j < a.cols(); ++j) {
    if (!taken[static_cast<std::size_t>(j)]) cols.push_back(j);
  }
  CostMatrix sub(n - first_row, static_cast<Eigen::Index>(cols.size()));
  for (int i = first_row; i < n; ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) sub(i - first_row, static_cast<Eigen::Index>(c)) = a(i, cols[c]);
  }
  return assigned_cost(sub, solve_assignment(sub));
}

}  // namespace

AssignmentResult hungarian(const CostMatrix& costs) {
  if (costs.rows() > costs.cols()) {
    throw ShapeError("hungarian: rows (" + std::to_string(costs.rows()) + ") exceed cols (" +
                     std::to_string(costs.cols()) + ")");
  }
  if (!costs.allFinite()) throw ShapeError("hungarian: cost matrix has non-finite entries");
  AssignmentResult result;
  if (costs.rows() == 0) return result;

  const double optimum = assigned_cost(costs, solve_assignment(costs));
  const double tol = 1e-12 * (1.0 + costs.cwiseAbs().maxCoeff()) * static_cast<double>(costs.rows());

  // Fix rows in order, each to the smallest column that keeps the optimum reachable.
  const int n = static_cast<int>(costs.rows());
  std::vector<char> taken(static_cast<std::size_t>(costs.cols()), 0);
  double prefix = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < costs.cols(); ++j) {
      if (taken[static_cast<std::size_t>(j)]) continue;
      taken[static_cast<std::size_t>(j)] = 1;
      const double best_rest = residual_optimum(costs, i + 1, taken);
      if (prefix + costs(i, j) + best_rest <= optimum + tol) {
        prefix += costs(i, j);
        result.assignment.push_back(j);
        break;
      }
      taken[static_cast<std::size_t>(j)] = 0;
    }
  }
  result.total_cost = assigned_cost(costs, result.assignment);
  return result;
}

std::vector<GroupTarget> padded_targets(const Clip& clip, int num_slots) {
  if (static_cast<int>(clip.groups.size()) > num_slots) {
    throw DimError("clip '" + clip.clip_id + "' has " + std::to_string(clip.groups.size()) +
                   " groups but only " + std::to_string(num_slots) + " group slots");
  }
  const auto n = static_cast<Eigen::Index>(clip.tracklets.size());
  std::vector<GroupTarget> targets;
  targets.reserve(static_cast<std::size_t>(num_slots));
  for (const auto& g : clip.groups) {
    GroupTarget t{g.activity, Eigen::VectorXd::Zero(n)};
    for (ActorId m : g.members) t.membership[clip.actor_index(m)] = 1.0;
    targets.push_back(std::move(t));
  }
  while (static_cast<int>(targets.size()) < num_slots) targets.push_back({0, Eigen::VectorXd::Zero(n)});
  return targets;
}

CostMatrix group_matching_cost(std::span<const GroupTarget> targets, const Eigen::MatrixXd& class_probs,
                               const Eigen::MatrixXd& member_probs) {
  if (class_probs.rows() != member_probs.rows()) {
    throw DimError("group_matching_cost: class and membership predictions disagree on K");
  }
  CostMatrix costs = CostMatrix::Zero(static_cast<Eigen::Index>(targets.size()), class_probs.rows());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    if (t.activity == 0) continue;
    if (t.membership.size() != member_probs.cols()) {
      throw DimError("group_matching_cost: membership vectors disagree on N (" +
                     std::to_string(t.membership.size()) + " vs " + std::to_string(member_probs.cols()) + ")");
    }
    if (t.activity >= class_probs.cols()) {
      throw DimError("group_matching_cost: class " + std::to_string(t.activity) + " outside the score vector");
    }
    for (Eigen::Index j = 0; j < class_probs.rows(); ++j) {
      costs(static_cast<Eigen::Index>(i), j) =
          -class_probs(j, t.activity) + (t.membership - member_probs.row(j).transpose()).norm();
    }
  }
  return costs;
}

CostMatrix group_matching_cost(std::span<const GroupTarget> targets, std::span<const GroupPrediction> preds) {
  if (preds.empty()) return CostMatrix::Zero(static_cast<Eigen::Index>(targets.size()), 0);
  const auto k = static_cast<Eigen::Index>(preds.size());
  Eigen::MatrixXd class_probs(k, preds[0].class_scores.size());
  Eigen::MatrixXd member_probs(k, preds[0].member_scores.size());
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& p = preds[static_cast<std::size_t>(j)];
    if (p.member_scores.size() != member_probs.cols()) {
      throw DimError("group_matching_cost: predicted membership vectors disagree on N");
    }
    if (p.class_scores.size() != class_probs.cols()) {
      throw DimError("group_matching_cost: predicted class vectors disagree on C");
    }
    class_probs.row(j) = p.class_scores.transpose();
    member_probs.row(j) = p.member_scores.transpose();
  }
  return group_matching_cost(targets, class_probs, member_probs);
}

namespace {

const BBox& box_or_throw(const Tracklet& t, int frame) {
  auto it = std::lower_bound(t.boxes.begin(), t.boxes.end(), frame,
                             [](const TimedBox& tb, int f) { return tb.frame < f; });
  if (it == t.boxes.end() || it->frame != frame) {
    throw FrameMismatch("tracklet " + std::to_string(t.actor_id) + " has no box at frame " + std::to_string(frame));
  }
  return it->box;
}

}  // namespace

CostMatrix tracklet_matching_cost(std::span<const Tracklet> gt, std::span<const Tracklet> pred,
                                  std::span<const int> frames, TrackletCostWeights weights) {
  CostMatrix costs = CostMatrix::Zero(static_cast<Eigen::Index>(gt.size()), static_cast<Eigen::Index>(pred.size()));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t j = 0; j < pred.size(); ++j) {
      double total = 0.0;
      for (int f : frames) {
        const BBox& b = box_or_throw(gt[i], f);
        const BBox& bh = box_or_throw(pred[j], f);
        const double l1 = std::abs(b.x1 - bh.x1) + std::abs(b.y1 - bh.y1) + std::abs(b.x2 - bh.x2) +
                          std::abs(b.y2 - bh.y2);
        total += weights.l1 * l1 + weights.giou * (1.0 - giou(b, bh));
      }
      costs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = total;
    }
  }
  return costs;
}

CostMatrix tracklet_matching_cost(std::span<const Tracklet> gt, std::span<const Tracklet> pred,
                                  TrackletCostWeights weights) {
  std::vector<int> frames;
  const auto frames_of = [](const Tracklet& t) {
    std::vector<int> f;
    for (const auto& tb : t.boxes) f.push_back(tb.frame);
    return f;
  };
  bool first = true;
  for (const auto* set : {&gt, &pred}) {
    for (const auto& t : *set) {
      auto f = frames_of(t);
      if (first) {
        frames = std::move(f);
        first = false;
      } else if (f != frames) {
        throw FrameMismatch("tracklet " + std::to_string(t.actor_id) + " covers a different frame set");
      }
    }
  }
  return tracklet_matching_cost(gt, pred, frames, weights);
}

double mean_tracklet_iou(const Tracklet& a, const Tracklet& b, std::span<const int> frames) {
  if (frames.empty()) return 0.0;
  double sum = 0.0;
  for (int f : frames) sum += box_iou(box_or_throw(a, f), box_or_throw(b, f));
  return sum / static_cast<double>(frames.size());
}

std::map<ActorId, std::optional<ActorId>> identity_match(std::span<const Tracklet> gt,
                                                         std::span<const Tracklet> pred,
                                                         std::span<const int> frames, double iou_threshold) {
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = mean_tracklet_iou(pred[p], gt[g], frames);
      if (iou >= iou_threshold) pairs.push_back({iou, p, g});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });

  std::map<ActorId, std::optional<ActorId>> result;
  for (const auto& t : pred) result[t.actor_id] = std::nullopt;
  std::vector<char> gt_used(gt.size(), 0), pred_used(pred.size(), 0);
  for (const auto& pr : pairs) {
    if (gt_used[pr.g] || pred_used[pr.p]) continue;
    gt_used[pr.g] = pred_used[pr.p] = 1;
    result[pred[pr.p].actor_id] = gt[pr.g].actor_id;
  }
  return result;
}

}  // namespace gad
