#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace gad {

using ActorId = int;

/// Axis-aligned box in frame-pixel (or normalized) coordinates.
template <typename Scalar>
struct BasicBox {
  Scalar x1{0}, y1{0}, x2{0}, y2{0};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return width() * height(); }
  Eigen::Matrix<Scalar, 2, 1> center() const {
    return {(x1 + x2) / Scalar(2), (y1 + y2) / Scalar(2)};
  }
  bool valid() const;

  friend bool operator==(const BasicBox&, const BasicBox&) = default;
};

using BBox = BasicBox<double>;

struct FrameSize {
  int width{0};
  int height{0};
  friend bool operator==(const FrameSize&, const FrameSize&) = default;
};

struct TimedBox {
  int frame{0};
  BBox box;
  friend bool operator==(const TimedBox&, const TimedBox&) = default;
};

struct Tracklet {
  ActorId actor_id{0};
  std::vector<TimedBox> boxes;  // strictly increasing frame index

  /// Box at `frame`, if the tracklet covers it.
  std::optional<BBox> box_at(int frame) const;
  /// Box at `frame`, or the box of the nearest covered frame.
  const BBox& nearest_box(int frame) const;

  friend bool operator==(const Tracklet&, const Tracklet&) = default;
};

struct GroupAnnotation {
  int group_id{0};
  std::vector<ActorId> members;  // sorted
  int activity{0};               // 1..C; 0 is reserved for the no-activity class

  friend bool operator==(const GroupAnnotation&, const GroupAnnotation&) = default;
};

struct Clip {
  std::string clip_id;
  FrameSize frame_size;
  int num_frames{0};
  std::vector<Tracklet> tracklets;
  std::vector<GroupAnnotation> groups;
  std::vector<ActorId> outliers;  // sorted

  /// Actor ids in tracklet order. This order indexes every per-actor vector.
  std::vector<ActorId> actor_ids() const;
  /// Position of `id` in actor_ids(), or -1.
  int actor_index(ActorId id) const;
  /// Activity label per actor (tracklet order); 0 for outliers.
  std::vector<int> actor_labels() const;

  friend bool operator==(const Clip&, const Clip&) = default;
};

struct GroupPrediction {
  Eigen::VectorXd member_scores;  // one entry per actor, clip actor order
  Eigen::VectorXd class_scores;   // C + 1 entries, index 0 is no-activity
  std::vector<ActorId> members;   // sorted

  /// Index of the largest class score (lowest index on ties).
  int argmax_class() const;
  /// Largest score over the non-empty classes 1..C.
  double max_activity_score() const;
};

struct ClipPrediction {
  std::string clip_id;
  std::vector<GroupPrediction> groups;
  std::vector<ActorId> predicted_outliers;  // sorted
  /// False when the source file omitted "members"; see derive_members().
  bool members_resolved{true};
};

struct LoadOptions {
  /// Downgrade singleton groups from an error to a warning.
  bool allow_singleton_groups{false};
  std::function<void(const std::string&)> warn;
};

// Dataset I/O.
std::vector<Clip> parse_dataset(const nlohmann::json& doc, const LoadOptions& opts = {});
std::vector<Clip> load_dataset(const std::filesystem::path& path, const LoadOptions& opts = {});
nlohmann::json dataset_to_json(const std::vector<Clip>& clips);
void save_dataset(const std::filesystem::path& path, const std::vector<Clip>& clips);

/// Throws InvariantError naming the clip and field path on the first violation.
void validate_clip(const Clip& clip, const LoadOptions& opts = {});

// Prediction I/O.
std::vector<ClipPrediction> parse_predictions(const nlohmann::json& doc);
std::vector<ClipPrediction> load_predictions(const std::filesystem::path& path);
nlohmann::json predictions_to_json(const std::vector<ClipPrediction>& preds);
void save_predictions(const std::filesystem::path& path, const std::vector<ClipPrediction>& preds);

/// Fills members from member_scores when the file omitted them: each actor
/// joins the group with its highest score if that score is >= 0.5.
void derive_members(ClipPrediction& pred, const Clip& clip);

/// Throws InvariantError if group member sets overlap or touch the outliers,
/// or a score vector is malformed.
void validate_prediction(const ClipPrediction& pred, std::optional<int> num_actors = std::nullopt);

enum class SamplingMode { kDeterministic, kStochastic };

/// Segment-based frame sampling: T equal segments, one index per segment.
/// With T > num_frames, indices repeat.
std::vector<int> sample_frames(int num_frames, int count, SamplingMode mode = SamplingMode::kDeterministic,
                               std::uint64_t seed = 0);
inline std::vector<int> sample_frames(const Clip& clip, int count,
                                      SamplingMode mode = SamplingMode::kDeterministic,
                                      std::uint64_t seed = 0) {
  return sample_frames(clip.num_frames, count, mode, seed);
}

Eigen::Vector2d box_center_normalized(const BBox& b, FrameSize frame_size);

/// (x1, y1, x2, y2) divided by frame width/height.
BBox normalize_box(const BBox& b, FrameSize frame_size);

template <typename Scalar>
bool BasicBox<Scalar>::valid() const {
  using std::isfinite;
  return isfinite(x1) && isfinite(y1) && isfinite(x2) && isfinite(y2) && x1 < x2 && y1 < y2;
}

}  // namespace gad
