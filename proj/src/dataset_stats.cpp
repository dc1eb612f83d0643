#include "gad/dataset_stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gad/error.hpp"

namespace gad {

namespace {

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

struct GroupDistance {
  bool has_counterpart{false};
  double value{std::numeric_limits<double>::infinity()};
};

GroupDistance nearest_non_member(const Clip& clip, const GroupAnnotation& group) {
  GroupDistance d;
  for (ActorId i : group.members) {
    const BBox& bi = key_frame_box(clip.tracklets[static_cast<std::size_t>(clip.actor_index(i))]);
    for (const auto& tj : clip.tracklets) {
      if (std::binary_search(group.members.begin(), group.members.end(), tj.actor_id)) continue;
      const BBox& bj = key_frame_box(tj);
      const double dist = (bi.center() - bj.center()).norm() / std::sqrt(0.5 * (bi.area() + bj.area()));
      d.has_counterpart = true;
      d.value = std::min(d.value, dist);
    }
  }
  return d;
}

}  // namespace

double aspect_ratio(const BBox& b) { return b.height() / b.width(); }

double union_area(std::span<const BBox> boxes) {
  std::vector<double> xs;
  for (const auto& b : boxes) {
    xs.push_back(b.x1);
    xs.push_back(b.x2);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  double area = 0.0;
  std::vector<std::pair<double, double>> spans;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double lo = xs[i], hi = xs[i + 1];
    spans.clear();
    for (const auto& b : boxes) {
      if (b.x1 <= lo && b.x2 >= hi) spans.emplace_back(b.y1, b.y2);
    }
    if (spans.empty()) continue;
    std::sort(spans.begin(), spans.end());
    double covered = 0.0;
    double start = spans.front().first, end = spans.front().second;
    for (const auto& [y1, y2] : spans) {
      if (y1 > end) {
        covered += end - start;
        start = y1;
        end = y2;
      } else {
        end = std::max(end, y2);
      }
    }
    covered += end - start;
    area += covered * (hi - lo);
  }
  return area;
}

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> points) {
  std::sort(points.begin(), points.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) throw DegenerateHull("convex hull needs at least 3 distinct points");

  std::vector<Eigen::Vector2d> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0.0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) throw DegenerateHull("points are collinear");
  return hull;
}

double polygon_area(std::span<const Eigen::Vector2d> polygon) {
  double twice = 0.0;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const auto& a = polygon[i];
    const auto& b = polygon[(i + 1) % polygon.size()];
    twice += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * twice;
}

double population_density(std::span<const BBox> boxes) {
  std::vector<Eigen::Vector2d> corners;
  for (const auto& b : boxes) {
    corners.emplace_back(b.x1, b.y1);
    corners.emplace_back(b.x2, b.y1);
    corners.emplace_back(b.x2, b.y2);
    corners.emplace_back(b.x1, b.y2);
  }
  const auto hull = convex_hull(std::move(corners));
  const double hull_area = polygon_area(hull);
  if (!(hull_area > 0.0)) throw DegenerateHull("convex hull has zero area");
  return union_area(boxes) / hull_area;
}

double population_density(const Clip& clip, int frame) {
  std::vector<BBox> boxes;
  for (const auto& g : clip.groups) {
    for (ActorId m : g.members) {
      const int idx = clip.actor_index(m);
      if (idx < 0) continue;
      if (auto b = clip.tracklets[static_cast<std::size_t>(idx)].box_at(frame)) boxes.push_back(*b);
    }
  }
  if (boxes.empty()) {
    throw InvariantError("clip '" + clip.clip_id + "': no group member has a box at frame " + std::to_string(frame));
  }
  return population_density(boxes);
}

const BBox& key_frame_box(const Tracklet& t) { return t.nearest_box(0); }

double inter_group_distance(std::span<const Clip> dataset) {
  double sum = 0.0;
  int count = 0;
  for (const auto& clip : dataset) {
    for (const auto& g : clip.groups) {
      const auto d = nearest_non_member(clip, g);
      if (!d.has_counterpart) {
        throw NoCounterpart("clip '" + clip.clip_id + "': group " + std::to_string(g.group_id) +
                            " has no other group or outlier to measure against");
      }
      sum += d.value;
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

StatsSummary summarize(std::span<const Clip> dataset) {
  StatsSummary s;
  s.aspect_ratio_edges = {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
  s.aspect_ratio_hist.assign(s.aspect_ratio_edges.size(), 0);
  double density_sum = 0.0;
  int density_count = 0;
  double distance_sum = 0.0;
  int distance_count = 0;

  for (const auto& clip : dataset) {
    ++s.num_clips;
    ++s.actors_per_clip_hist[static_cast<int>(clip.tracklets.size())];
    s.num_outliers += static_cast<int>(clip.outliers.size());
    for (const auto& t : clip.tracklets) {
      for (const auto& tb : t.boxes) {
        const double ar = aspect_ratio(tb.box);
        auto it = std::upper_bound(s.aspect_ratio_edges.begin(), s.aspect_ratio_edges.end(), ar);
        const auto bin = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - s.aspect_ratio_edges.begin() - 1));
        ++s.aspect_ratio_hist[bin];
      }
    }
    std::vector<BBox> member_boxes;
    for (const auto& g : clip.groups) {
      ++s.num_groups;
      ++s.group_size_hist[static_cast<int>(g.members.size())];
      for (ActorId m : g.members) {
        member_boxes.push_back(key_frame_box(clip.tracklets[static_cast<std::size_t>(clip.actor_index(m))]));
      }
      const auto d = nearest_non_member(clip, g);
      if (d.has_counterpart) {
        distance_sum += d.value;
        ++distance_count;
      }
    }
    if (!member_boxes.empty()) {
      density_sum += population_density(member_boxes);
      ++density_count;
    }
  }
  s.population_density = density_count > 0 ? density_sum / density_count : 0.0;
  s.inter_group_distance = distance_count > 0 ? distance_sum / distance_count : 0.0;
  return s;
}

nlohmann::json stats_to_json(const StatsSummary& s) {
  nlohmann::json gsize = nlohmann::json::object();
  for (const auto& [k, v] : s.group_size_hist) gsize[std::to_string(k)] = v;
  nlohmann::json apc = nlohmann::json::object();
  for (const auto& [k, v] : s.actors_per_clip_hist) apc[std::to_string(k)] = v;
  return {{"num_clips", s.num_clips},
          {"num_groups", s.num_groups},
          {"num_outliers", s.num_outliers},
          {"group_size_hist", gsize},
          {"actors_per_clip_hist", apc},
          {"aspect_ratio_edges", s.aspect_ratio_edges},
          {"aspect_ratio_hist", s.aspect_ratio_hist},
          {"population_density", s.population_density},
          {"inter_group_distance", s.inter_group_distance}};
}

std::string group_size_csv(const StatsSummary& s) {
  std::ostringstream os;
  os << "group_size,count\n";
  for (const auto& [k, v] : s.group_size_hist) os << k << ',' << v << '\n';
  return os.str();
}

std::string aspect_ratio_csv(const StatsSummary& s) {
  std::ostringstream os;
  os << "aspect_ratio_lo,count\n";
  for (std::size_t i = 0; i < s.aspect_ratio_hist.size(); ++i) {
    os << s.aspect_ratio_edges[i] << ',' << s.aspect_ratio_hist[i] << '\n';
  }
  return os.str();
}

std::string actors_per_clip_csv(const StatsSummary& s) {
  std::ostringstream os;
  os << "actors,count\n";
  for (const auto& [k, v] : s.actors_per_clip_hist) os << k << ',' << v << '\n';
  return os.str();
}

}  // namespace gad
