#include <doctest.h>

#include "gad/dataset_stats.hpp"
#include "gad/error.hpp"
#include "gad/metrics.hpp"
#include "gad/synthgen.hpp"

using namespace gad;

namespace {

double mean_map(const std::vector<Clip>& clips, double noise, double theta, int seeds) {
  double s = 0.0;
  for (int seed = 0; seed < seeds; ++seed) {
    s += group_map(clips, perturb_prediction(clips, noise, static_cast<std::uint64_t>(seed)), theta).group_map;
  }
  return s / seeds;
}

}  // namespace

TEST_SUITE("synthgen") {
  TEST_CASE("generated clips are valid and deterministic") {
    SynthSpec spec;
    spec.num_clips = 12;
    spec.seed = 3;
    const auto a = generate(spec);
    const auto b = generate(spec);
    CHECK(a.clips == b.clips);
    REQUIRE(a.features.size() == 12);
    CHECK(a.features[5].frames[2].actor_feats == b.features[5].frames[2].actor_feats);
    for (std::size_t c = 0; c < a.clips.size(); ++c) {
      CHECK_NOTHROW(validate_clip(a.clips[c]));
      const int n = static_cast<int>(a.clips[c].tracklets.size());
      CHECK(n >= spec.min_actors);
      CHECK(n <= spec.max_actors);
      CHECK(static_cast<int>(a.features[c].frames.size()) == spec.num_frames);
      CHECK(a.features[c].frames[0].actor_feats.rows() == n);
      CHECK(a.features[c].frames[0].actor_feats.cols() == spec.feature_dim);
      for (const auto& g : a.clips[c].groups) {
        CHECK(g.activity >= 1);
        CHECK(g.activity <= spec.num_classes);
      }
    }
    spec.seed = 4;
    CHECK_FALSE(generate(spec).clips == a.clips);
  }

  TEST_CASE("no outliers when the fraction is zero") {
    SynthSpec spec;
    spec.num_clips = 20;
    spec.outlier_fraction = 0.0;
    for (const auto& c : generate(spec).clips) CHECK(c.outliers.empty());
  }

  TEST_CASE("infeasible specs are rejected") {
    SynthSpec spec;
    spec.min_actors = 3;
    spec.max_actors = 3;
    spec.min_groups = 2;
    CHECK_THROWS_AS(generate(spec), InfeasibleSpec);
    spec = {};
    spec.outlier_fraction = 1.5;
    CHECK_THROWS_AS(generate(spec), InfeasibleSpec);
    spec = {};
    spec.min_group_size = 1;
    CHECK_THROWS_AS(generate(spec), InfeasibleSpec);
    spec = {};
    spec.min_actors = 9;
    spec.max_actors = 4;
    CHECK_THROWS_AS(generate(spec), InfeasibleSpec);
  }

  TEST_CASE("tighter scenes bring groups and outliers closer") {
    double prev = std::numeric_limits<double>::infinity();
    for (double t : {0.0, 0.5, 1.0}) {
      SynthSpec spec;
      spec.num_clips = 60;
      spec.tightness = t;
      spec.seed = 8;
      const double d = inter_group_distance(generate(spec).clips);
      CHECK(d < prev);
      prev = d;
    }
  }

  TEST_CASE("more outliers with a larger outlier fraction") {
    int prev = -1;
    for (double f : {0.0, 0.3, 0.7, 1.0}) {
      SynthSpec spec;
      spec.num_clips = 60;
      spec.outlier_fraction = f;
      spec.seed = 9;
      int count = 0;
      for (const auto& c : generate(spec).clips) count += static_cast<int>(c.outliers.size());
      CHECK(count > prev);
      prev = count;
    }
  }

  TEST_CASE("perturbation levels") {
    SynthSpec spec;
    spec.num_clips = 10;
    spec.seed = 10;
    const auto clips = generate(spec).clips;
    const auto clean = perturb_prediction(clips, 0.0, 1);
    CHECK(group_map(clips, clean, 1.0).group_map == 1.0);
    CHECK(outlier_miou(clips, clean) == 1.0);
    CHECK(group_map(clips, perturb_prediction(clips, 1.0, 1), 1.0).group_map == 0.0);
    const double mid = mean_map(clips, 0.1, 1.0, 20);
    CHECK(mid > 0.0);
    CHECK(mid < 1.0);
    CHECK_THROWS_AS(perturb_prediction(clips, 1.5, 1), InfeasibleSpec);
  }

  TEST_CASE("corruption grows with noise") {
    SynthSpec spec;
    spec.num_clips = 8;
    spec.seed = 11;
    const auto clips = generate(spec).clips;
    // Outlier mIoU falls for every seed; Group mAP falls on average.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      double prev = 2.0;
      for (int i = 0; i <= 10; ++i) {
        const double m = outlier_miou(clips, perturb_prediction(clips, i / 10.0, seed));
        CHECK(m <= prev + 1e-12);
        prev = m;
      }
    }
    double prev = 2.0;
    for (int i = 0; i <= 10; ++i) {
      const double m = mean_map(clips, i / 10.0, 1.0, 20);
      CHECK(m <= prev + 1e-12);
      prev = m;
    }
  }

  TEST_CASE("perturbed predictions partition the actors") {
    SynthSpec spec;
    spec.num_clips = 10;
    const auto clips = generate(spec).clips;
    const auto preds = perturb_prediction(clips, 0.4, 2);
    for (std::size_t c = 0; c < clips.size(); ++c) {
      CHECK_NOTHROW(validate_prediction(preds[c], static_cast<int>(clips[c].tracklets.size())));
      std::vector<ActorId> seen = preds[c].predicted_outliers;
      for (const auto& g : preds[c].groups) seen.insert(seen.end(), g.members.begin(), g.members.end());
      std::sort(seen.begin(), seen.end());
      CHECK(seen == clips[c].actor_ids());
    }
  }
}
