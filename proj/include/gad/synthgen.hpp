#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gad/core_data.hpp"
#include "gad/grouping_transformer.hpp"

namespace gad {

struct SynthSpec {
  int num_clips{4};
  int min_actors{5};
  int max_actors{10};
  int min_groups{2};
  int max_groups{2};
  int min_group_size{2};
  int max_group_size{4};
  double outlier_fraction{0.3};  // chance that each free actor slot holds an outlier
  double tightness{0.5};         // 1 packs outliers and groups close together
  double feature_noise{0.1};
  int num_classes{6};
  int feature_dim{32};
  int scene_tokens{4};
  int num_frames{10};
  int width{1280};
  int height{720};
  std::uint64_t seed{0};

  /// Throws InfeasibleSpec for empty ranges, fractions outside [0, 1] or
  /// group requirements that cannot fit the actor range.
  void validate() const;
};

struct SynthData {
  std::vector<Clip> clips;
  std::vector<ClipFeatures> features;
};

/// Seeded scenes: groups are spatial clusters whose members share a class
/// prototype and a group direction; outliers carry the no-activity prototype.
SynthData generate(const SynthSpec& spec);

/// Corrupts ground truth into predictions. Each actor is flipped with
/// probability `noise` (members leave their group, outliers join a random
/// group) and each group's class is replaced with probability `noise`.
/// The same seed draws the same uniforms at every noise level, so corruption
/// grows monotonically with `noise`.
std::vector<ClipPrediction> perturb_prediction(std::span<const Clip> clips, double noise, std::uint64_t seed = 0,
                                               int num_classes = 0);

}  // namespace gad
