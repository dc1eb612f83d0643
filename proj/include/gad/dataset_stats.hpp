#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gad/core_data.hpp"

namespace gad {

/// Height over width in raw pixels.
double aspect_ratio(const BBox& b);

/// Exact area of a union of axis-aligned boxes (coordinate-compression sweep).
double union_area(std::span<const BBox> boxes);

/// Counterclockwise convex hull by monotone chain, without collinear
/// vertices. Throws DegenerateHull when the points span zero area.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> points);

/// Shoelace area of a simple polygon (positive for counterclockwise order).
double polygon_area(std::span<const Eigen::Vector2d> polygon);

/// Union area of the boxes over the area of the convex hull of their corners.
double population_density(std::span<const BBox> boxes);

/// Population density of the group members' boxes at `frame`; outliers are
/// excluded. Throws InvariantError if no member has a box there.
double population_density(const Clip& clip, int frame);

/// Box used for per-clip statistics: the box at frame 0, or the tracklet's
/// nearest box when it does not cover frame 0.
const BBox& key_frame_box(const Tracklet& t);

/// Area-normalized distance from each group to its nearest non-member in
/// the same clip, averaged over every group of the dataset. Throws
/// NoCounterpart if some clip holds exactly one group and no outliers.
double inter_group_distance(std::span<const Clip> dataset);

struct StatsSummary {
  std::map<int, int> group_size_hist;       // size -> number of groups
  std::map<int, int> actors_per_clip_hist;  // actor count -> number of clips
  std::vector<double> aspect_ratio_edges;   // bin edges, last bin open-ended
  std::vector<int> aspect_ratio_hist;
  double population_density{0.0};           // mean over clips with group members
  double inter_group_distance{0.0};         // over groups that have a counterpart
  int num_clips{0};
  int num_groups{0};
  int num_outliers{0};
};

StatsSummary summarize(std::span<const Clip> dataset);
nlohmann::json stats_to_json(const StatsSummary& s);
/// CSV text, one histogram per call: "bin,count" rows.
std::string group_size_csv(const StatsSummary& s);
std::string aspect_ratio_csv(const StatsSummary& s);
std::string actors_per_clip_csv(const StatsSummary& s);

}  // namespace gad
