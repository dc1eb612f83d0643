// Independent reference computations used as test oracles. Nothing here
// calls into the library's algorithms.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gad/core_data.hpp"
#include "gad/random.hpp"

namespace oracle {

// Minimum total over every injective row -> column map, by enumerating
// column permutations.
inline double brute_force_assignment(const Eigen::MatrixXd& c) {
  const auto rows = c.rows(), cols = c.cols();
  std::vector<int> perm(static_cast<std::size_t>(cols));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) s += c(r, perm[static_cast<std::size_t>(r)]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::set<int> inter, uni = sa;
  for (int x : sb) {
    if (sa.count(x)) inter.insert(x);
    uni.insert(x);
  }
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

// AP as the sum over recall steps k/n of the best precision among all
// confidence-prefix cutoffs whose recall reaches k/n.
inline double prefix_threshold_ap(const std::vector<bool>& ranked_tp, int num_gt) {
  if (num_gt == 0) return 0.0;
  std::vector<std::pair<int, double>> cutoffs;  // (tp count, precision)
  int tp = 0;
  for (std::size_t i = 0; i < ranked_tp.size(); ++i) {
    tp += ranked_tp[i] ? 1 : 0;
    cutoffs.emplace_back(tp, static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double ap = 0.0;
  for (int k = 1; k <= num_gt; ++k) {
    double best = 0.0;
    for (const auto& [t, p] : cutoffs) {
      if (t >= k) best = std::max(best, p);
    }
    ap += best / num_gt;
  }
  return ap;
}

// Group mAP by direct greedy simulation and prefix-threshold integration.
// Detections for class c are every predicted group ranked by its class-c
// score; ties are resolved by clip id then group index.
inline double brute_force_map(const std::vector<gad::Clip>& clips, const std::vector<gad::ClipPrediction>& preds,
                              double theta, int num_classes, std::map<int, double>* per_class = nullptr) {
  double sum = 0.0;
  int counted = 0;
  for (int c = 1; c <= num_classes; ++c) {
    int num_gt = 0;
    for (const auto& clip : clips) {
      for (const auto& g : clip.groups) num_gt += g.activity == c ? 1 : 0;
    }
    struct Det {
      double conf;
      std::string clip_id;
      std::size_t clip, group;
    };
    std::vector<Det> dets;
    for (std::size_t v = 0; v < preds.size(); ++v) {
      for (std::size_t g = 0; g < preds[v].groups.size(); ++g) {
        dets.push_back({preds[v].groups[g].class_scores(c), preds[v].clip_id, v, g});
      }
    }
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
      return std::tie(b.conf, a.clip_id, a.group) < std::tie(a.conf, b.clip_id, b.group);
    });
    std::map<std::pair<std::size_t, std::size_t>, bool> used;
    std::vector<bool> ranked;
    for (const auto& d : dets) {
      const auto& clip = clips[d.clip];
      int pick = -1;
      double pick_iou = -1.0;
      for (std::size_t g = 0; g < clip.groups.size(); ++g) {
        if (clip.groups[g].activity != c || used[{d.clip, g}]) continue;
        const double iou = jaccard(clip.groups[g].members, preds[d.clip].groups[d.group].members);
        if (iou >= theta && iou > pick_iou) {
          pick = static_cast<int>(g);
          pick_iou = iou;
        }
      }
      if (pick >= 0) used[{d.clip, static_cast<std::size_t>(pick)}] = true;
      ranked.push_back(pick >= 0);
    }
    if (num_gt == 0) continue;
    const double ap = prefix_threshold_ap(ranked, num_gt);
    if (per_class) (*per_class)[c] = ap;
    sum += ap;
    ++counted;
  }
  return counted ? sum / counted : 0.0;
}

// Area of a union of boxes with coordinates on a 1/res grid, by counting cells.
inline double raster_union_area(const std::vector<gad::BBox>& boxes, int res) {
  double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
  for (const auto& b : boxes) {
    lo_x = std::min(lo_x, b.x1);
    lo_y = std::min(lo_y, b.y1);
    hi_x = std::max(hi_x, b.x2);
    hi_y = std::max(hi_y, b.y2);
  }
  const double cell = 1.0 / res;
  long covered = 0;
  for (double x = lo_x + 0.5 * cell; x < hi_x; x += cell) {
    for (double y = lo_y + 0.5 * cell; y < hi_y; y += cell) {
      for (const auto& b : boxes) {
        if (x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2) {
          ++covered;
          break;
        }
      }
    }
  }
  return static_cast<double>(covered) * cell * cell;
}

// A clip with consecutive actor ids 1..n, one box per actor at frame 0.
inline gad::Clip make_clip(const std::string& id, const std::vector<std::vector<int>>& groups,
                           const std::vector<int>& activities, const std::vector<int>& outliers) {
  gad::Clip clip;
  clip.clip_id = id;
  clip.frame_size = {100, 100};
  clip.num_frames = 1;
  std::vector<int> ids;
  for (const auto& g : groups) ids.insert(ids.end(), g.begin(), g.end());
  ids.insert(ids.end(), outliers.begin(), outliers.end());
  std::sort(ids.begin(), ids.end());
  for (int id : ids) {
    gad::Tracklet t;
    t.actor_id = id;
    t.boxes.push_back({0, gad::BBox{double(id), 0.0, double(id) + 1.0, 2.0}});
    clip.tracklets.push_back(t);
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto members = groups[g];
    std::sort(members.begin(), members.end());
    clip.groups.push_back({static_cast<int>(g) + 1, members, activities[g]});
  }
  clip.outliers = outliers;
  std::sort(clip.outliers.begin(), clip.outliers.end());
  return clip;
}

// Prediction group with given members, class `cls` at confidence `conf`
// and the rest spread evenly.
inline gad::GroupPrediction make_group(const gad::Clip& clip, std::vector<int> members, int cls, double conf,
                                       int num_classes) {
  gad::GroupPrediction g;
  std::sort(members.begin(), members.end());
  g.members = members;
  g.class_scores = Eigen::VectorXd::Constant(num_classes + 1, (1.0 - conf) / num_classes);
  g.class_scores(cls) = conf;
  const auto ids = clip.actor_ids();
  g.member_scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (std::binary_search(members.begin(), members.end(), ids[j])) g.member_scores(static_cast<Eigen::Index>(j)) = 1.0;
  }
  return g;
}

struct Fixture {
  std::vector<gad::Clip> clips;
  std::vector<gad::ClipPrediction> preds;
};

// Random small instance: two clips, at most four predicted groups in total.
inline Fixture random_instance(gad::SplitMix64& rng, int num_classes) {
  Fixture f;
  for (int v = 0; v < 2; ++v) {
    std::vector<int> ids(static_cast<std::size_t>(rng.uniform_int(4, 8)));
    std::iota(ids.begin(), ids.end(), 1);
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, int(i) - 1))]);
    std::vector<std::vector<int>> groups;
    std::vector<int> acts, outliers;
    std::size_t pos = 0;
    while (ids.size() - pos >= 2 && rng.uniform() < 0.8) {
      const auto size = std::min<std::size_t>(ids.size() - pos, static_cast<std::size_t>(rng.uniform_int(2, 3)));
      groups.emplace_back(ids.begin() + static_cast<long>(pos), ids.begin() + static_cast<long>(pos + size));
      acts.push_back(rng.uniform_int(1, num_classes));
      pos += size;
    }
    outliers.assign(ids.begin() + static_cast<long>(pos), ids.end());
    f.clips.push_back(make_clip("v" + std::to_string(v), groups, acts, outliers));
  }
  for (int v = 0; v < 2; ++v) {
    const gad::Clip& clip = f.clips[static_cast<std::size_t>(v)];
    gad::ClipPrediction p{clip.clip_id, {}, {}};
    std::vector<int> free = clip.actor_ids();
    const int count = rng.uniform_int(0, 2);
    for (int g = 0; g < count && free.size() >= 1; ++g) {
      std::vector<int> members;
      if (!clip.groups.empty() && rng.uniform() < 0.6) {
        // Start from a gt group, drop or add an actor sometimes.
        const auto& src = clip.groups[static_cast<std::size_t>(rng.uniform_int(0, int(clip.groups.size()) - 1))].members;
        for (int m : src) {
          if (std::find(free.begin(), free.end(), m) != free.end() && rng.uniform() < 0.85) members.push_back(m);
        }
      }
      if (members.empty() || rng.uniform() < 0.3) {
        for (int m : free) {
          if (rng.uniform() < 0.4 && std::find(members.begin(), members.end(), m) == members.end()) members.push_back(m);
        }
      }
      if (members.empty()) members.push_back(free.front());
      for (int m : members) free.erase(std::find(free.begin(), free.end(), m));
      Eigen::VectorXd scores(num_classes + 1);
      for (int c = 0; c <= num_classes; ++c) scores(c) = rng.uniform(0.01, 1.0);
      scores /= scores.sum();
      auto gp = make_group(clip, members, 1, 0.5, num_classes);
      gp.class_scores = scores;
      p.groups.push_back(gp);
    }
    p.predicted_outliers = free;
    std::sort(p.predicted_outliers.begin(), p.predicted_outliers.end());
    f.preds.push_back(p);
  }
  return f;
}

}  // namespace oracle
