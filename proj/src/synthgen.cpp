#include "gad/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gad/error.hpp"
#include "gad/random.hpp"

namespace gad {

namespace {

Eigen::VectorXd random_unit(int dim, SplitMix64& rng) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

struct Placement {
  Eigen::Vector2d center;  // normalized
  double spread{0.0};
};

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw InfeasibleSpec("synth spec: " + msg); };
  if (num_clips < 0) fail("num_clips must be >= 0");
  if (min_actors < 1 || min_actors > max_actors) fail("actor range is empty");
  if (min_groups < 0 || min_groups > max_groups) fail("group range is empty");
  if (min_group_size < 2 || min_group_size > max_group_size) fail("group-size range must be nonempty and >= 2");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) fail("outlier_fraction must lie in [0, 1]");
  if (!(tightness >= 0.0 && tightness <= 1.0)) fail("tightness must lie in [0, 1]");
  if (!(feature_noise >= 0.0)) fail("feature_noise must be >= 0");
  if (num_classes < 1 || feature_dim < 1 || num_frames < 1 || scene_tokens < 0) fail("sizes must be positive");
  if (width < 1 || height < 1) fail("frame size must be positive");
  if (min_groups * min_group_size > max_actors) {
    fail("actor range below groups * min group size (" + std::to_string(min_groups * min_group_size) + " > " +
         std::to_string(max_actors) + ")");
  }
  if (outlier_fraction == 0.0 && max_groups * max_group_size < min_actors) {
    fail("without outliers the groups cannot reach min_actors");
  }
  if (max_groups == 0 && outlier_fraction == 0.0) fail("no groups and no outliers");
}

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  SynthData data;

  // Class prototypes are shared by every clip; index 0 is the no-activity class.
  SplitMix64 proto_rng = SplitMix64::derive(spec.seed, 0xC1A55);
  std::vector<Eigen::VectorXd> prototypes;
  for (int c = 0; c <= spec.num_classes; ++c) prototypes.push_back(random_unit(spec.feature_dim, proto_rng));

  const double separation = 0.22 + 0.25 * (1.0 - spec.tightness);
  const double aspect = 2.0 * spec.width / spec.height;  // 1:2 pixel aspect in normalized units

  for (int ci = 0; ci < spec.num_clips; ++ci) {
    SplitMix64 rng = SplitMix64::derive(spec.seed, 1000 + static_cast<std::uint64_t>(ci));

    int ng = rng.uniform_int(spec.min_groups, spec.max_groups);
    std::vector<int> sizes;
    for (int g = 0; g < ng; ++g) sizes.push_back(rng.uniform_int(spec.min_group_size, spec.max_group_size));
    auto total = [&] {
      int s = 0;
      for (int v : sizes) s += v;
      return s;
    };
    while (total() > spec.max_actors) {
      auto it = std::max_element(sizes.begin(), sizes.end());
      if (*it > spec.min_group_size) {
        --*it;
      } else {
        sizes.pop_back();
      }
    }
    int outliers = 0;
    for (int slot = total(); slot < spec.max_actors; ++slot) {
      if (rng.uniform() < spec.outlier_fraction) ++outliers;
    }
    while (total() + outliers < spec.min_actors) {
      if (spec.outlier_fraction > 0.0) {
        ++outliers;
        continue;
      }
      auto it = std::min_element(sizes.begin(), sizes.end());
      if (it != sizes.end() && *it < spec.max_group_size) {
        ++*it;
      } else {
        sizes.push_back(spec.min_group_size);
      }
    }
    ng = static_cast<int>(sizes.size());

    // Group centers on a jittered ring around the frame center.
    std::vector<Placement> places;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int g = 0; g < ng; ++g) {
      const double ang = phase + 2.0 * std::numbers::pi * g / std::max(ng, 1);
      const double radius = ng > 1 ? separation / (2.0 * std::sin(std::numbers::pi / ng)) : 0.0;
      Placement p;
      p.center = Eigen::Vector2d(0.5 + radius * std::cos(ang), 0.5 + 0.8 * radius * std::sin(ang));
      p.center += Eigen::Vector2d(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02));
      p.spread = 0.03 + 0.01 * sizes[static_cast<std::size_t>(g)];
      places.push_back(p);
    }

    Clip clip;
    clip.clip_id = "synth_" + std::to_string(ci);
    clip.frame_size = {spec.width, spec.height};
    clip.num_frames = spec.num_frames;
    ClipFeatures feats;
    feats.clip_id = clip.clip_id;

    struct ActorPlan {
      Eigen::Vector2d pos;
      Eigen::VectorXd base;
      double box_w{0.03};
    };
    std::vector<ActorPlan> plans;
    ActorId next_id = 1;
    for (int g = 0; g < ng; ++g) {
      GroupAnnotation ga;
      ga.group_id = g + 1;
      ga.activity = rng.uniform_int(1, spec.num_classes);
      const Eigen::VectorXd group_dir = random_unit(spec.feature_dim, rng);
      for (int m = 0; m < sizes[static_cast<std::size_t>(g)]; ++m) {
        ActorPlan a;
        const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double r = places[static_cast<std::size_t>(g)].spread * std::sqrt(rng.uniform());
        a.pos = places[static_cast<std::size_t>(g)].center + r * Eigen::Vector2d(std::cos(ang), std::sin(ang));
        a.base = prototypes[static_cast<std::size_t>(ga.activity)] + 0.5 * group_dir;
        a.box_w = rng.uniform(0.025, 0.04);
        plans.push_back(std::move(a));
        ga.members.push_back(next_id++);
      }
      clip.groups.push_back(std::move(ga));
    }
    for (int o = 0; o < outliers; ++o) {
      ActorPlan a;
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double u = rng.uniform(0.5, 1.0);
      if (places.empty()) {
        a.pos = Eigen::Vector2d(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
      } else {
        const auto& p = places[static_cast<std::size_t>(rng.uniform_int(0, ng - 1))];
        const double r = p.spread + 0.04 + (1.0 - spec.tightness) * 0.3 * u;
        a.pos = p.center + r * Eigen::Vector2d(std::cos(ang), std::sin(ang));
      }
      a.base = prototypes[0] + 0.5 * random_unit(spec.feature_dim, rng);
      a.box_w = rng.uniform(0.025, 0.04);
      plans.push_back(std::move(a));
      clip.outliers.push_back(next_id++);
    }

    std::vector<Eigen::Vector2d> velocity;
    for (std::size_t j = 0; j < plans.size(); ++j) {
      velocity.emplace_back(rng.uniform(-0.002, 0.002), rng.uniform(-0.002, 0.002));
      Tracklet t;
      t.actor_id = static_cast<ActorId>(j) + 1;
      clip.tracklets.push_back(std::move(t));
    }
    for (int f = 0; f < spec.num_frames; ++f) {
      FrameFeatureRecord rec;
      rec.actor_feats.resize(static_cast<Eigen::Index>(plans.size()), spec.feature_dim);
      for (std::size_t j = 0; j < plans.size(); ++j) {
        const auto& a = plans[j];
        Eigen::Vector2d c = a.pos + f * velocity[j];
        const double w = a.box_w;
        const double h = std::min(0.9, w * aspect);
        c.x() = std::clamp(c.x(), w, 1.0 - w);
        c.y() = std::clamp(c.y(), 0.5 * h + 0.01, 1.0 - 0.5 * h - 0.01);
        BBox b{(c.x() - 0.5 * w) * spec.width, (c.y() - 0.5 * h) * spec.height, (c.x() + 0.5 * w) * spec.width,
               (c.y() + 0.5 * h) * spec.height};
        clip.tracklets[j].boxes.push_back({f, b});
        for (int d = 0; d < spec.feature_dim; ++d) {
          rec.actor_feats(static_cast<Eigen::Index>(j), d) = a.base(d) + spec.feature_noise * rng.normal();
        }
      }
      rec.scene_feats.resize(spec.scene_tokens, spec.feature_dim);
      for (int s = 0; s < spec.scene_tokens; ++s) {
        for (int d = 0; d < spec.feature_dim; ++d) rec.scene_feats(s, d) = 0.1 * rng.normal();
      }
      feats.frames.push_back(std::move(rec));
    }

    validate_clip(clip);
    data.clips.push_back(std::move(clip));
    data.features.push_back(std::move(feats));
  }
  return data;
}

std::vector<ClipPrediction> perturb_prediction(std::span<const Clip> clips, double noise, std::uint64_t seed,
                                               int num_classes) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw InfeasibleSpec("perturb_prediction: noise must lie in [0, 1]");
  int c_max = num_classes;
  for (const auto& clip : clips) {
    for (const auto& g : clip.groups) c_max = std::max(c_max, g.activity);
  }
  c_max = std::max(c_max, 1);

  std::vector<ClipPrediction> preds;
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const Clip& clip = clips[ci];
    SplitMix64 rng = SplitMix64::derive(seed, ci);
    const auto ids = clip.actor_ids();
    const auto n = static_cast<Eigen::Index>(ids.size());
    const int ng = static_cast<int>(clip.groups.size());

    // Group assignment per actor index, -1 for outliers.
    std::vector<int> owner(ids.size(), -1);
    for (int g = 0; g < ng; ++g) {
      for (ActorId m : clip.groups[static_cast<std::size_t>(g)].members) {
        owner[static_cast<std::size_t>(clip.actor_index(m))] = g;
      }
    }
    std::vector<int> assigned = owner;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const double flip = rng.uniform();
      const double target = rng.uniform();
      if (flip >= noise) continue;
      if (owner[j] >= 0) {
        assigned[j] = -1;
      } else if (ng > 0) {
        assigned[j] = std::min(ng - 1, static_cast<int>(target * ng));
      }
    }

    ClipPrediction pred;
    pred.clip_id = clip.clip_id;
    for (int g = 0; g < ng; ++g) {
      const int truth = clip.groups[static_cast<std::size_t>(g)].activity;
      const double flip = rng.uniform();
      const double other = rng.uniform();
      const double conf = 1.0 - 0.5 * rng.uniform();
      int cls = truth;
      if (flip < noise && c_max > 1) {
        cls = 1 + (truth - 1 + 1 + std::min(c_max - 2, static_cast<int>(other * (c_max - 1)))) % c_max;
      }
      GroupPrediction gp;
      gp.class_scores = Eigen::VectorXd::Constant(c_max + 1, (1.0 - conf) / c_max);
      gp.class_scores(cls) = conf;
      gp.member_scores = Eigen::VectorXd::Zero(n);
      for (std::size_t j = 0; j < ids.size(); ++j) {
        if (assigned[j] == g) {
          gp.member_scores(static_cast<Eigen::Index>(j)) = 1.0;
          gp.members.push_back(ids[j]);
        }
      }
      std::sort(gp.members.begin(), gp.members.end());
      pred.groups.push_back(std::move(gp));
    }
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (assigned[j] < 0) pred.predicted_outliers.push_back(ids[j]);
    }
    std::sort(pred.predicted_outliers.begin(), pred.predicted_outliers.end());
    preds.push_back(std::move(pred));
  }
  return preds;
}

}  // namespace gad
