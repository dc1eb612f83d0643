#include <doctest.h>

#include <cmath>

#include "gad/error.hpp"
#include "gad/synthgen.hpp"
#include "gad/training.hpp"
#include "oracles.hpp"

using namespace gad;
using nn::Matrix;

namespace {

SynthData tiny_data(std::uint64_t seed, int clips = 2) {
  SynthSpec spec;
  spec.num_clips = clips;
  spec.min_actors = 4;
  spec.max_actors = 5;
  spec.max_group_size = 2;
  spec.num_classes = 2;
  spec.feature_dim = 6;
  spec.scene_tokens = 2;
  spec.num_frames = 3;
  spec.seed = seed;
  return generate(spec);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.dim = 8;
  cfg.num_tokens = 3;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.num_classes = 2;
  cfg.num_frames = 2;
  cfg.embed_dim = 8;
  cfg.ffn_dim = 16;
  cfg.scene_tokens = 2;
  return cfg;
}

ModelOutput run(const GroupingTransformer& model, const Clip& clip, const ClipFeatures& feats) {
  return model.forward(build_input(clip, feats, sample_frames(clip, model.config().num_frames)));
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("group loss closed forms") {
    CHECK(group_loss(3, Eigen::VectorXd::Zero(7)) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
    Eigen::VectorXd l(2);
    l << 0.0, std::log(9.0);
    CHECK(group_loss(1, l) == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
  }

  TEST_CASE("membership loss closed forms") {
    Eigen::VectorXd t(2), p(2);
    t << 1, 0;
    p << 0.5, 0.5;
    CHECK(membership_loss(t, p) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Eigen::VectorXd t1(1), p1(1);
    t1 << 1;
    p1 << 0.9;
    CHECK(membership_loss(t1, p1) == doctest::Approx(0.1053605156578263).epsilon(1e-12));
    p1 << 0.0;
    CHECK(std::isfinite(membership_loss(t1, p1)));
    CHECK_THROWS_AS(membership_loss(t, p1), DimError);
  }

  TEST_CASE("consistency loss closed forms") {
    const std::vector<std::vector<int>> pair{{0, 1}};
    // Three identical embeddings: each member sees one positive out of two.
    const Matrix same = Matrix::Ones(3, 4);
    CHECK(consistency_loss(same, pair, 0.2) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));

    // Two identical members and one orthogonal outsider at tau 0.2.
    Matrix e = Matrix::Zero(3, 2);
    e << 1, 0, 2, 0, 0, 1;
    const double expected = -2.0 * std::log(std::exp(5.0) / (std::exp(5.0) + 1.0));
    CHECK(consistency_loss(e, pair, 0.2) == doctest::Approx(expected).epsilon(1e-12));

    std::vector<std::string> warnings;
    const std::vector<std::vector<int>> lone{{2}};
    CHECK(consistency_loss(e, lone, 0.2, [&](const std::string& w) { warnings.push_back(w); }) == 0.0);
    CHECK(warnings.size() == 1);
    CHECK_THROWS_AS(consistency_loss(e, pair, 0.0), ShapeError);
  }

  TEST_CASE("consistency loss ignores embedding scale") {
    SplitMix64 rng(3);
    const std::vector<std::vector<int>> groups{{0, 2, 3}, {1, 4}};
    for (int trial = 0; trial < 30; ++trial) {
      const Matrix e = nn::normal_matrix(6, 5, 1.0, rng);
      const double base = consistency_loss(e, groups, 0.2);
      CHECK(base >= 0.0);
      CHECK(consistency_loss(e * rng.uniform(0.01, 100.0), groups, 0.2) == doctest::Approx(base).epsilon(1e-10));
    }
  }

  TEST_CASE("individual action loss") {
    const std::vector<int> labels{0, 3, 6};
    CHECK(individual_action_loss(Matrix::Zero(3, 7), labels) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
    CHECK_THROWS_AS(individual_action_loss(Matrix::Zero(2, 7), labels), DimError);
  }

  TEST_CASE("matching minimizes the group cost") {
    SplitMix64 rng(4);
    const Clip clip = oracle::make_clip("m", {{1, 2}, {3, 4}}, {1, 2}, {5});
    const auto targets = padded_targets(clip, 3);
    int greedy_worse = 0;
    for (int trial = 0; trial < 200; ++trial) {
      ModelOutput out;
      out.group_logits = nn::Tensor(nn::normal_matrix(3, 3, 2.0, rng));
      out.membership_logits = nn::Tensor(nn::normal_matrix(3, 5, 2.0, rng));
      const auto cost = group_matching_cost(targets, out.class_probs(), out.membership_probs());
      const auto r = match_groups(targets, out);
      CHECK(r.total_cost == doctest::Approx(oracle::brute_force_assignment(cost)).epsilon(1e-12));
      // Row-by-row greedy for comparison.
      std::vector<bool> used(3, false);
      double greedy = 0.0;
      for (Eigen::Index i = 0; i < 3; ++i) {
        Eigen::Index best = -1;
        for (Eigen::Index s = 0; s < 3; ++s) {
          if (!used[static_cast<std::size_t>(s)] && (best < 0 || cost(i, s) < cost(i, best))) best = s;
        }
        used[static_cast<std::size_t>(best)] = true;
        greedy += cost(i, best);
      }
      if (greedy > r.total_cost + 1e-9) ++greedy_worse;
    }
    CHECK(greedy_worse > 0);
  }

  TEST_CASE("clip loss decomposes into its weighted terms") {
    const auto data = tiny_data(5);
    const GroupingTransformer model(tiny_config(), 6);
    for (std::size_t c = 0; c < data.clips.size(); ++c) {
      const auto out = run(model, data.clips[c], data.features[c]);
      const LossWeights w{3.0, 0.5, 0.2, 1.0};
      const auto l = clip_loss(out, data.clips[c], w);
      CHECK(l.parts.total ==
            doctest::Approx(l.parts.l_ind + l.parts.l_group + 3.0 * l.parts.l_mem + 0.5 * l.parts.l_con).epsilon(1e-12));
      const auto zero = clip_loss(out, data.clips[c], {0.0, 0.0, 0.2, 1.0});
      CHECK(zero.parts.total == doctest::Approx(l.parts.l_ind + l.parts.l_group).epsilon(1e-12));
      CHECK(l.parts.l_mem >= 0.0);
      CHECK(l.parts.l_con >= 0.0);
    }
  }

  TEST_CASE("clip loss does not depend on slot order") {
    const auto data = tiny_data(7);
    const GroupingTransformer model(tiny_config(), 8);
    const auto out = run(model, data.clips[0], data.features[0]);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(3);
    perm.indices() << 2, 0, 1;
    ModelOutput swapped = out;
    swapped.group_logits = nn::Tensor(perm * out.group_logits.value());
    swapped.membership_logits = nn::Tensor(perm * out.membership_logits.value());
    const double a = clip_loss(out, data.clips[0]).parts.total;
    const double b = clip_loss(swapped, data.clips[0]).parts.total;
    CHECK(b == doctest::Approx(a).epsilon(1e-12));
  }

  TEST_CASE("model gradients pass a finite-difference check") {
    const auto checks = model_grad_checks(0, 1e-5, 1e-3);
    CHECK(checks.size() > 50);
    for (const auto& c : checks) {
      INFO(c.name << " rel err " << c.result.max_rel_error);
      CHECK(c.result.passed);
    }
  }

  TEST_CASE("learning rate schedule") {
    const Schedule s{200, 1e-4, 5, 16, 1.0, SamplingMode::kStochastic};
    CHECK(learning_rate(s, 0) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(learning_rate(s, 4) == doctest::Approx(0.82e-4).epsilon(1e-12));
    CHECK(learning_rate(s, 5) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(learning_rate(s, 199) == doctest::Approx(1e-4 / 195.0).epsilon(1e-12));
    for (int e = 5; e < 199; ++e) CHECK(learning_rate(s, e + 1) < learning_rate(s, e));
  }

  TEST_CASE("zero learning rate leaves parameters untouched") {
    const auto data = tiny_data(9);
    GroupingTransformer model(tiny_config(), 10);
    std::vector<Matrix> before;
    for (const auto& p : model.params().params()) before.push_back(p.tensor.value());
    Schedule s{3, 0.0, 1, 1, 1.0, SamplingMode::kStochastic};
    train(model, data.clips, data.features, s);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(model.params().params()[i].tensor.value() == before[i]);
  }

  TEST_CASE("training is deterministic and reduces the loss") {
    const auto data = tiny_data(11, 3);
    const Schedule s{30, 1e-3, 2, 1, 1.0, SamplingMode::kStochastic};
    GroupingTransformer a(tiny_config(), 12), b(tiny_config(), 12);
    const auto ca = train(a, data.clips, data.features, s, {}, 5);
    const auto cb = train(b, data.clips, data.features, s, {}, 5);
    CHECK(loss_curve_csv(ca) == loss_curve_csv(cb));
    CHECK(ca.back().total < ca.front().total);
    CHECK(loss_curve_csv(ca).rfind("epoch,l_ind,l_group,l_mem,l_con,total\n", 0) == 0);
  }

  TEST_CASE("non-finite loss raises a divergence error") {
    const auto data = tiny_data(13);
    GroupingTransformer model(tiny_config(), 14);
    model.params().get("actor_in.w").mutable_value()(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const Schedule s{2, 1e-3, 1, 1, 1.0, SamplingMode::kStochastic};
    CHECK_THROWS_AS(train(model, data.clips, data.features, s), DivergenceError);
  }
}
