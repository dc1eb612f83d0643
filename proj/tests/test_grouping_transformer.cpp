#include <doctest.h>

#include <numbers>

#include "gad/error.hpp"
#include "gad/grouping_transformer.hpp"
#include "gad/synthgen.hpp"

using namespace gad;
using nn::Matrix;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.dim = 8;
  cfg.num_tokens = 3;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.num_classes = 3;
  cfg.num_frames = 2;
  cfg.embed_dim = 8;
  cfg.ffn_dim = 16;
  cfg.scene_tokens = 2;
  return cfg;
}

ModelInput random_input(SplitMix64& rng, int n, int frames, int dim, bool scene) {
  ModelInput in;
  for (int t = 0; t < frames; ++t) {
    in.actor_feats.push_back(nn::normal_matrix(n, dim, 1.0, rng));
    Matrix boxes(n, 4);
    for (int j = 0; j < n; ++j) boxes.row(j) << rng.uniform(), rng.uniform(), rng.uniform(0.02, 0.1), rng.uniform(0.05, 0.2);
    in.boxes.push_back(boxes);
    in.scene_feats.push_back(scene ? nn::normal_matrix(3, dim, 1.0, rng) : Matrix());
  }
  return in;
}

ModelOutput manual_output(const Matrix& group_logits, const Matrix& membership_logits) {
  ModelOutput out;
  out.group_logits = nn::Tensor(group_logits);
  out.membership_logits = nn::Tensor(membership_logits);
  return out;
}

}  // namespace

TEST_SUITE("grouping_transformer") {
  TEST_CASE("output shapes and ranges") {
    const auto cfg = small_config();
    const GroupingTransformer model(cfg, 1);
    SplitMix64 rng(2);
    for (bool scene : {false, true}) {
      const auto out = model.forward(random_input(rng, 5, 2, cfg.input_dim, scene));
      CHECK(out.actor_embeddings.shape() == std::array<Eigen::Index, 2>{5, 8});
      CHECK(out.group_embeddings.shape() == std::array<Eigen::Index, 2>{3, 8});
      CHECK(out.actor_logits.shape() == std::array<Eigen::Index, 2>{5, 4});
      CHECK(out.group_logits.shape() == std::array<Eigen::Index, 2>{3, 4});
      CHECK(out.membership_logits.shape() == std::array<Eigen::Index, 2>{3, 5});
      const Matrix p = out.membership_probs();
      CHECK(((p.array() > 0.0) && (p.array() < 1.0)).all());
      const Matrix c = out.class_probs();
      for (Eigen::Index k = 0; k < 3; ++k) CHECK(c.row(k).sum() == doctest::Approx(1.0).epsilon(1e-14));
    }
  }

  TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.num_heads = 3;
    CHECK_THROWS_AS(GroupingTransformer{cfg}, ShapeError);
    cfg = small_config();
    cfg.mu = 2.0;
    CHECK_THROWS_AS(GroupingTransformer{cfg}, ShapeError);
    cfg.mu = 0.0;
    CHECK_THROWS_AS(GroupingTransformer{cfg}, ShapeError);
  }

  TEST_CASE("zeroed membership head gives probability one half") {
    const auto cfg = small_config();
    GroupingTransformer model(cfg, 3);
    for (const char* name : {"group_mem.fc2.w", "group_mem.fc2.b"}) model.params().get(name).mutable_value().setZero();
    SplitMix64 rng(4);
    const auto out = model.forward(random_input(rng, 4, 2, cfg.input_dim, false));
    CHECK((out.membership_probs().array() == 0.5).all());
  }

  TEST_CASE("permuting actors permutes the outputs") {
    const auto cfg = small_config();
    const GroupingTransformer model(cfg, 5);
    SplitMix64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      const int n = 6;
      const auto in = random_input(rng, n, 2, cfg.input_dim, true);
      std::vector<int> perm{3, 0, 5, 1, 4, 2};
      ModelInput shuffled = in;
      for (std::size_t t = 0; t < in.actor_feats.size(); ++t) {
        for (int j = 0; j < n; ++j) {
          shuffled.actor_feats[t].row(j) = in.actor_feats[t].row(perm[static_cast<std::size_t>(j)]);
          shuffled.boxes[t].row(j) = in.boxes[t].row(perm[static_cast<std::size_t>(j)]);
        }
      }
      const auto a = model.forward(in);
      const auto b = model.forward(shuffled);
      CHECK(b.group_logits.value().isApprox(a.group_logits.value(), 1e-10));
      for (int j = 0; j < n; ++j) {
        const int src = perm[static_cast<std::size_t>(j)];
        CHECK(b.actor_logits.value().row(j).isApprox(a.actor_logits.value().row(src), 1e-10));
        CHECK(b.membership_logits.value().col(j).isApprox(a.membership_logits.value().col(src), 1e-10));
      }
    }
  }

  TEST_CASE("distance mask") {
    Eigen::MatrixX2d centers(3, 2);
    centers << 0.1, 0.1, 0.5, 0.5, 0.2, 0.1;
    const auto m = distance_mask(centers, 0.2);
    CHECK_FALSE(m(0, 1));
    CHECK_FALSE(m(1, 0));
    CHECK(m(0, 2));
    CHECK(m(2, 0));
    for (int i = 0; i < 3; ++i) CHECK(m(i, i));
    // An actor far from everyone still attends to itself.
    const auto tight = distance_mask(centers, 1e-6);
    CHECK(tight(1, 1));
    CHECK(tight.count() == 3);
  }

  TEST_CASE("masked pairs receive exactly zero attention") {
    auto cfg = small_config();
    cfg.mu = 0.2;
    const GroupingTransformer model(cfg, 7);
    SplitMix64 rng(8);
    auto in = random_input(rng, 3, 2, cfg.input_dim, false);
    for (auto& b : in.boxes) b.leftCols<2>() << 0.1, 0.1, 0.5, 0.5, 0.2, 0.1;
    const auto out = model.forward(in, true);
    REQUIRE(out.actor_attention.size() == 2);
    for (const auto& frame : out.actor_attention) {
      REQUIRE(frame.size() == 2);
      for (const auto& layer : frame) {
        REQUIRE(layer.size() == 2);
        for (const auto& w : layer) {
          CHECK(w(0, 1) == 0.0);
          CHECK(w(1, 0) == 0.0);
          CHECK(w(1, 1) == 1.0);
          CHECK(w(0, 2) > 0.0);
        }
      }
    }
  }

  TEST_CASE("a mask radius covering the unit square changes nothing") {
    auto masked = small_config();
    masked.mu = std::numbers::sqrt2;
    auto plain = masked;
    plain.use_distance_mask = false;
    const GroupingTransformer a(masked, 9), b(plain, 9);
    SplitMix64 rng(10);
    const auto in = random_input(rng, 7, 2, masked.input_dim, true);
    const auto oa = a.forward(in, true), ob = b.forward(in, true);
    CHECK(oa.group_logits.value() == ob.group_logits.value());
    CHECK(oa.membership_logits.value() == ob.membership_logits.value());
    CHECK(oa.actor_logits.value() == ob.actor_logits.value());
  }

  TEST_CASE("infer_groups") {
    const std::vector<ActorId> ids{4, 7, 9};
    SUBCASE("no-activity slots are dropped and low scores become outliers") {
      Matrix logits(2, 3), mem(2, 3);
      logits << 0, 5, 0,  //
          5, 0, 0;
      mem << 3, 3, -3,  //
          3, 3, 3;
      const auto pred = infer_groups(manual_output(logits, mem), ids, "x");
      REQUIRE(pred.groups.size() == 1);
      CHECK(pred.groups[0].members == std::vector<ActorId>{4, 7});
      CHECK(pred.groups[0].argmax_class() == 1);
      CHECK(pred.predicted_outliers == std::vector<ActorId>{9});
    }
    SUBCASE("each actor joins its best slot") {
      Matrix logits(2, 3), mem(2, 3);
      logits << 0, 5, 0,  //
          0, 0, 5;
      mem << 3, 1, -3,  //
          1, 2, 4;
      const auto pred = infer_groups(manual_output(logits, mem), ids, "x");
      // Slot 0 keeps only actor 4 and dissolves.
      REQUIRE(pred.groups.size() == 1);
      CHECK(pred.groups[0].members == std::vector<ActorId>{7, 9});
      CHECK(pred.predicted_outliers == std::vector<ActorId>{4});
      const auto kept = infer_groups(manual_output(logits, mem), ids, "x", {0.5, false});
      CHECK(kept.groups.size() == 2);
    }
    SUBCASE("groups and outliers partition the actors") {
      SplitMix64 rng(11);
      for (int trial = 0; trial < 100; ++trial) {
        const Matrix logits = nn::normal_matrix(4, 3, 2.0, rng);
        const Matrix mem = nn::normal_matrix(4, 3, 2.0, rng);
        const auto pred = infer_groups(manual_output(logits, mem), ids, "x");
        std::vector<ActorId> seen = pred.predicted_outliers;
        for (const auto& g : pred.groups) {
          CHECK(g.members.size() >= 2);
          seen.insert(seen.end(), g.members.begin(), g.members.end());
        }
        std::sort(seen.begin(), seen.end());
        CHECK(seen == ids);
      }
    }
  }

  TEST_CASE("features round trip and build_input") {
    SynthSpec spec;
    spec.num_clips = 2;
    spec.feature_dim = 5;
    spec.seed = 12;
    const auto data = generate(spec);
    const auto again = parse_features(nlohmann::json::parse(features_to_json(data.features).dump()));
    REQUIRE(again.size() == 2);
    CHECK(again[1].clip_id == data.features[1].clip_id);
    CHECK(again[1].frames[3].actor_feats == data.features[1].frames[3].actor_feats);
    CHECK(again[0].frames[0].scene_feats == data.features[0].frames[0].scene_feats);

    const std::vector<int> frames{0, 4};
    const auto in = build_input(data.clips[0], data.features[0], frames);
    CHECK(in.actor_feats.size() == 2);
    CHECK(in.boxes[0].rows() == static_cast<Eigen::Index>(data.clips[0].tracklets.size()));
    CHECK(((in.boxes[1].leftCols<2>().array() >= 0.0) && (in.boxes[1].leftCols<2>().array() <= 1.0)).all());

    auto short_features = data.features[0];
    short_features.frames.pop_back();
    CHECK_THROWS_AS(build_input(data.clips[0], short_features, frames), SchemaError);
    CHECK_THROWS_AS(parse_features(nlohmann::json::parse(R"({"clip_id": "a", "frames": [{"actor_feats": [[1, 2], [3]]}]})")),
                    SchemaError);
  }

  TEST_CASE("config is recovered from a checkpoint") {
    const auto cfg = small_config();
    const GroupingTransformer model(cfg, 13);
    const auto doc = nn::params_to_json(model.params());
    ModelConfig base;
    base.num_heads = 2;
    const auto got = config_from_checkpoint(doc, base);
    CHECK(got.input_dim == cfg.input_dim);
    CHECK(got.dim == cfg.dim);
    CHECK(got.num_tokens == cfg.num_tokens);
    CHECK(got.num_layers == cfg.num_layers);
    CHECK(got.num_classes == cfg.num_classes);
    CHECK(got.embed_dim == cfg.embed_dim);
    CHECK(got.ffn_dim == cfg.ffn_dim);
    CHECK(got.scene_tokens == cfg.scene_tokens);
    GroupingTransformer restored(got, 99);
    nn::load_params_json(restored.params(), doc);
    SplitMix64 rng(14);
    const auto in = random_input(rng, 4, 2, cfg.input_dim, false);
    CHECK(restored.forward(in).group_logits.value() == model.forward(in).group_logits.value());
  }
}
