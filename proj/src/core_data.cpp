#include "gad/core_data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gad/error.hpp"
#include "gad/random.hpp"

namespace gad {

using nlohmann::json;

namespace {

std::string clip_prefix(const std::string& clip_id) { return "clip '" + clip_id + "': "; }

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T require_as(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw SchemaError(path + "." + key + ": wrong type");
  }
}

const json& require_array(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_array()) throw SchemaError(path + "." + key + ": expected an array");
  return v;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> from_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Clip parse_clip(const json& jc, const std::string& path) {
  Clip clip;
  clip.clip_id = require_as<std::string>(jc, "clip_id", path);
  const std::string cpath = path + "(" + clip.clip_id + ")";
  clip.frame_size.width = require_as<int>(jc, "width", cpath);
  clip.frame_size.height = require_as<int>(jc, "height", cpath);
  clip.num_frames = require_as<int>(jc, "num_frames", cpath);

  const json& actors = require_array(jc, "actors", cpath);
  for (std::size_t a = 0; a < actors.size(); ++a) {
    const std::string apath = cpath + ".actors[" + std::to_string(a) + "]";
    Tracklet t;
    t.actor_id = require_as<int>(actors[a], "actor_id", apath);
    const json& boxes = require_array(actors[a], "boxes", apath);
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      const std::string bpath = apath + ".boxes[" + std::to_string(b) + "]";
      if (!boxes[b].is_array() || boxes[b].size() != 5) {
        throw SchemaError(bpath + ": expected [frame, x1, y1, x2, y2]");
      }
      try {
        TimedBox tb;
        tb.frame = boxes[b][0].get<int>();
        tb.box = {boxes[b][1].get<double>(), boxes[b][2].get<double>(), boxes[b][3].get<double>(),
                  boxes[b][4].get<double>()};
        t.boxes.push_back(tb);
      } catch (const json::exception&) {
        throw SchemaError(bpath + ": non-numeric entry");
      }
    }
    clip.tracklets.push_back(std::move(t));
  }

  const json& groups = require_array(jc, "groups", cpath);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::string gpath = cpath + ".groups[" + std::to_string(g) + "]";
    GroupAnnotation ga;
    ga.group_id = require_as<int>(groups[g], "group_id", gpath);
    ga.members = require_as<std::vector<int>>(groups[g], "members", gpath);
    ga.activity = require_as<int>(groups[g], "activity", gpath);
    std::sort(ga.members.begin(), ga.members.end());
    clip.groups.push_back(std::move(ga));
  }
  clip.outliers = require_as<std::vector<int>>(jc, "outliers", cpath);
  std::sort(clip.outliers.begin(), clip.outliers.end());
  return clip;
}

}  // namespace

// ---------------------------------------------------------------------------
// Clip helpers

std::optional<BBox> Tracklet::box_at(int frame) const {
  auto it = std::lower_bound(boxes.begin(), boxes.end(), frame,
                             [](const TimedBox& tb, int f) { return tb.frame < f; });
  if (it != boxes.end() && it->frame == frame) return it->box;
  return std::nullopt;
}

const BBox& Tracklet::nearest_box(int frame) const {
  const TimedBox* best = &boxes.front();
  for (const auto& tb : boxes) {
    if (std::abs(tb.frame - frame) < std::abs(best->frame - frame)) best = &tb;
  }
  return best->box;
}

std::vector<ActorId> Clip::actor_ids() const {
  std::vector<ActorId> ids;
  ids.reserve(tracklets.size());
  for (const auto& t : tracklets) ids.push_back(t.actor_id);
  return ids;
}

int Clip::actor_index(ActorId id) const {
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    if (tracklets[i].actor_id == id) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> Clip::actor_labels() const {
  std::vector<int> labels(tracklets.size(), 0);
  for (const auto& g : groups) {
    for (ActorId m : g.members) {
      const int idx = actor_index(m);
      if (idx >= 0) labels[static_cast<std::size_t>(idx)] = g.activity;
    }
  }
  return labels;
}

int GroupPrediction::argmax_class() const {
  if (class_scores.size() == 0) return 0;
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < class_scores.size(); ++c) {
    if (class_scores[c] > class_scores[best]) best = c;
  }
  return static_cast<int>(best);
}

double GroupPrediction::max_activity_score() const {
  if (class_scores.size() < 2) return 0.0;
  return class_scores.tail(class_scores.size() - 1).maxCoeff();
}

// ---------------------------------------------------------------------------
// Validation

void validate_clip(const Clip& clip, const LoadOptions& opts) {
  const std::string pre = clip_prefix(clip.clip_id);
  if (clip.frame_size.width <= 0 || clip.frame_size.height <= 0) {
    throw InvariantError(pre + "width/height: frame size must be positive");
  }
  if (clip.num_frames < 1) throw InvariantError(pre + "num_frames: must be >= 1");

  std::set<ActorId> actors;
  for (std::size_t a = 0; a < clip.tracklets.size(); ++a) {
    const auto& t = clip.tracklets[a];
    const std::string path = pre + "actors[" + std::to_string(a) + "]";
    if (!actors.insert(t.actor_id).second) {
      throw InvariantError(path + ".actor_id: duplicate actor " + std::to_string(t.actor_id));
    }
    if (t.boxes.empty()) throw InvariantError(path + ".boxes: tracklet is empty");
    for (std::size_t b = 0; b < t.boxes.size(); ++b) {
      const std::string bpath = path + ".boxes[" + std::to_string(b) + "]";
      if (!t.boxes[b].box.valid()) throw InvariantError(bpath + ": box needs x1 < x2, y1 < y2, finite");
      if (b > 0 && t.boxes[b].frame <= t.boxes[b - 1].frame) {
        throw InvariantError(bpath + ": frame indices must be strictly increasing");
      }
    }
  }

  std::map<ActorId, std::string> owner;
  for (std::size_t g = 0; g < clip.groups.size(); ++g) {
    const auto& grp = clip.groups[g];
    const std::string path = pre + "groups[" + std::to_string(g) + "]";
    if (grp.activity < 1) throw InvariantError(path + ".activity: must be >= 1 (0 is reserved)");
    if (grp.members.size() < 2) {
      const std::string msg = path + ".members: singleton group " + std::to_string(grp.group_id);
      if (!opts.allow_singleton_groups) throw InvariantError(msg);
      if (opts.warn) opts.warn(msg);
    }
    for (ActorId m : grp.members) {
      if (!actors.contains(m)) {
        throw InvariantError(path + ".members: actor " + std::to_string(m) + " is not in the clip");
      }
      if (auto [it, inserted] = owner.emplace(m, path); !inserted) {
        throw InvariantError(path + ".members: actor " + std::to_string(m) + " appears in two groups");
      }
    }
  }
  for (ActorId o : clip.outliers) {
    if (!actors.contains(o)) {
      throw InvariantError(pre + "outliers: actor " + std::to_string(o) + " is not in the clip");
    }
    if (owner.contains(o)) {
      throw InvariantError(pre + "outliers: actor " + std::to_string(o) + " is also a group member");
    }
    owner.emplace(o, "outliers");
  }
  if (owner.size() != actors.size()) {
    for (ActorId a : actors) {
      if (!owner.contains(a)) {
        throw InvariantError(pre + "actor " + std::to_string(a) + " is neither a group member nor an outlier");
      }
    }
  }
}

void validate_prediction(const ClipPrediction& pred, std::optional<int> num_actors) {
  const std::string pre = clip_prefix(pred.clip_id);
  std::set<ActorId> seen;
  for (std::size_t g = 0; g < pred.groups.size(); ++g) {
    const auto& gp = pred.groups[g];
    const std::string path = pre + "groups[" + std::to_string(g) + "]";
    if (gp.class_scores.size() < 2) throw InvariantError(path + ".class_scores: need at least 2 entries");
    if ((gp.class_scores.array() < 0.0).any() || !gp.class_scores.allFinite()) {
      throw InvariantError(path + ".class_scores: must be finite and nonnegative");
    }
    if (std::abs(gp.class_scores.sum() - 1.0) > 1e-6) {
      throw InvariantError(path + ".class_scores: must sum to 1");
    }
    if (!gp.member_scores.allFinite() || (gp.member_scores.array() < 0.0).any() ||
        (gp.member_scores.array() > 1.0).any()) {
      throw InvariantError(path + ".member_scores: must lie in [0, 1]");
    }
    if (num_actors && gp.member_scores.size() != *num_actors) {
      throw InvariantError(path + ".member_scores: expected " + std::to_string(*num_actors) + " entries");
    }
    for (ActorId m : gp.members) {
      if (!seen.insert(m).second) {
        throw InvariantError(path + ".members: actor " + std::to_string(m) + " is in two predicted groups");
      }
    }
  }
  for (ActorId o : pred.predicted_outliers) {
    if (seen.contains(o)) {
      throw InvariantError(pre + "predicted_outliers: actor " + std::to_string(o) + " is also a group member");
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset I/O

std::vector<Clip> parse_dataset(const json& doc, const LoadOptions& opts) {
  const json& clips = require_array(doc, "clips", "$");
  std::vector<Clip> out;
  out.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Clip clip = parse_clip(clips[i], "$.clips[" + std::to_string(i) + "]");
    validate_clip(clip, opts);
    out.push_back(std::move(clip));
  }
  return out;
}

std::vector<Clip> load_dataset(const std::filesystem::path& path, const LoadOptions& opts) {
  return parse_dataset(read_json_file(path), opts);
}

json dataset_to_json(const std::vector<Clip>& clips) {
  json jclips = json::array();
  for (const auto& clip : clips) {
    json actors = json::array();
    for (const auto& t : clip.tracklets) {
      json boxes = json::array();
      for (const auto& tb : t.boxes) boxes.push_back({tb.frame, tb.box.x1, tb.box.y1, tb.box.x2, tb.box.y2});
      actors.push_back({{"actor_id", t.actor_id}, {"boxes", boxes}});
    }
    json groups = json::array();
    for (const auto& g : clip.groups) {
      groups.push_back({{"group_id", g.group_id}, {"members", g.members}, {"activity", g.activity}});
    }
    jclips.push_back({{"clip_id", clip.clip_id},
                      {"width", clip.frame_size.width},
                      {"height", clip.frame_size.height},
                      {"num_frames", clip.num_frames},
                      {"actors", actors},
                      {"groups", groups},
                      {"outliers", clip.outliers}});
  }
  return {{"clips", jclips}};
}

void save_dataset(const std::filesystem::path& path, const std::vector<Clip>& clips) {
  write_json_file(path, dataset_to_json(clips));
}

// ---------------------------------------------------------------------------
// Prediction I/O

std::vector<ClipPrediction> parse_predictions(const json& doc) {
  const json& clips = require_array(doc, "clips", "$");
  std::vector<ClipPrediction> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::string path = "$.clips[" + std::to_string(i) + "]";
    ClipPrediction cp;
    cp.clip_id = require_as<std::string>(clips[i], "clip_id", path);
    const json& groups = require_array(clips[i], "groups", path);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::string gpath = path + ".groups[" + std::to_string(g) + "]";
      GroupPrediction gp;
      gp.class_scores = to_vector(require_as<std::vector<double>>(groups[g], "class_scores", gpath));
      gp.member_scores = to_vector(require_as<std::vector<double>>(groups[g], "member_scores", gpath));
      if (groups[g].contains("members")) {
        gp.members = require_as<std::vector<int>>(groups[g], "members", gpath);
        std::sort(gp.members.begin(), gp.members.end());
      } else {
        cp.members_resolved = false;
      }
      cp.groups.push_back(std::move(gp));
    }
    cp.predicted_outliers = require_as<std::vector<int>>(clips[i], "predicted_outliers", path);
    std::sort(cp.predicted_outliers.begin(), cp.predicted_outliers.end());
    if (cp.members_resolved) validate_prediction(cp);
    out.push_back(std::move(cp));
  }
  return out;
}

std::vector<ClipPrediction> load_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_json_file(path));
}

json predictions_to_json(const std::vector<ClipPrediction>& preds) {
  json jclips = json::array();
  for (const auto& cp : preds) {
    json groups = json::array();
    for (const auto& g : cp.groups) {
      groups.push_back({{"class_scores", from_vector(g.class_scores)},
                        {"member_scores", from_vector(g.member_scores)},
                        {"members", g.members}});
    }
    jclips.push_back({{"clip_id", cp.clip_id}, {"groups", groups}, {"predicted_outliers", cp.predicted_outliers}});
  }
  return {{"clips", jclips}};
}

void save_predictions(const std::filesystem::path& path, const std::vector<ClipPrediction>& preds) {
  write_json_file(path, predictions_to_json(preds));
}

void derive_members(ClipPrediction& pred, const Clip& clip) {
  const auto ids = clip.actor_ids();
  const auto n = static_cast<Eigen::Index>(ids.size());
  for (auto& g : pred.groups) {
    if (g.member_scores.size() != n) {
      throw InvariantError(clip_prefix(pred.clip_id) + "member_scores: expected " + std::to_string(n) +
                           " entries, got " + std::to_string(g.member_scores.size()));
    }
    g.members.clear();
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    int best = -1;
    double best_score = 0.0;
    for (std::size_t g = 0; g < pred.groups.size(); ++g) {
      const double s = pred.groups[g].member_scores[j];
      if (best < 0 || s > best_score) {
        best = static_cast<int>(g);
        best_score = s;
      }
    }
    if (best >= 0 && best_score >= 0.5) pred.groups[static_cast<std::size_t>(best)].members.push_back(ids[j]);
  }
  for (auto& g : pred.groups) std::sort(g.members.begin(), g.members.end());
  pred.members_resolved = true;
  validate_prediction(pred, static_cast<int>(n));
}

// ---------------------------------------------------------------------------
// Sampling and geometry helpers

std::vector<int> sample_frames(int num_frames, int count, SamplingMode mode, std::uint64_t seed) {
  if (count < 1 || num_frames < 1) throw InvariantError("sample_frames: need T >= 1 and num_frames >= 1");
  const double segment = static_cast<double>(num_frames) / count;
  SplitMix64 rng(seed);
  std::vector<int> frames;
  frames.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double offset = mode == SamplingMode::kDeterministic ? 0.5 : rng.uniform();
    const int f = static_cast<int>(std::floor(segment * (i + offset)));
    frames.push_back(std::clamp(f, 0, num_frames - 1));
  }
  return frames;
}

Eigen::Vector2d box_center_normalized(const BBox& b, FrameSize frame_size) {
  return {(b.x1 + b.x2) / (2.0 * frame_size.width), (b.y1 + b.y2) / (2.0 * frame_size.height)};
}

BBox normalize_box(const BBox& b, FrameSize frame_size) {
  const double w = frame_size.width, h = frame_size.height;
  return {b.x1 / w, b.y1 / h, b.x2 / w, b.y2 / h};
}

}  // namespace gad
