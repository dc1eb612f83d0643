#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gad/core_data.hpp"
#include "gad/numerics.hpp"

namespace gad {

struct ModelConfig {
  int input_dim{32};     // actor/scene feature width in the feature files
  int dim{32};           // transformer width D
  int num_tokens{12};    // group tokens K
  int num_layers{6};     // L
  int num_heads{4};      // H
  int num_classes{6};    // activity classes C (logits have C + 1 columns)
  int num_frames{5};     // sampled frames T
  int embed_dim{32};     // width of the membership projection
  int ffn_dim{64};
  int scene_tokens{4};   // learned scene tokens used when no scene features are given
  double mu{0.2};        // distance-mask threshold in unit-square coordinates
  bool use_distance_mask{true};

  /// Throws ShapeError when D is not divisible by H, K < 1 or mu is outside (0, sqrt 2].
  void validate() const;
};

/// One clip's inputs over the sampled frames.
struct ModelInput {
  std::vector<nn::Matrix> actor_feats;  // T x (N x input_dim)
  std::vector<nn::Matrix> boxes;        // T x (N x 4): normalized (cx, cy, w, h)
  std::vector<nn::Matrix> scene_feats;  // T x (S x input_dim); empty -> learned tokens

  int num_actors() const { return actor_feats.empty() ? 0 : static_cast<int>(actor_feats.front().rows()); }
};

/// Frame-averaged model outputs; tensors stay attached to the graph.
struct ModelOutput {
  nn::Tensor actor_embeddings;   // N x D
  nn::Tensor group_embeddings;   // K x D
  nn::Tensor actor_logits;       // N x (C + 1)
  nn::Tensor group_logits;       // K x (C + 1)
  nn::Tensor membership_logits;  // K x N
  /// Actor self-attention weights, [frame][layer][head], when recorded.
  std::vector<std::vector<std::vector<nn::Matrix>>> actor_attention;

  Eigen::MatrixXd class_probs() const;       // row softmax of group_logits
  Eigen::MatrixXd membership_probs() const;  // logistic of membership_logits
};

/// All learnable parameters, created with a seeded initialization.
class GroupingTransformer {
 public:
  explicit GroupingTransformer(const ModelConfig& cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  ModelOutput forward(const ModelInput& input, bool record_attention = false) const;

 private:
  ModelConfig cfg_;
  nn::ParamSet params_;
};

/// (i, j) allowed iff the centers are within mu, or i == j.
nn::BoolMatrix distance_mask(const Eigen::MatrixX2d& centers, double mu);

struct InferOptions {
  double score_threshold{0.5};
  /// Groups left with fewer than two members become outliers.
  bool dissolve_small_groups{true};
};

/// Drops slots classified as no-activity, assigns each actor to its
/// highest-scoring surviving group (or marks it an outlier below the
/// threshold), then dissolves undersized groups.
ClipPrediction infer_groups(const ModelOutput& out, std::span<const ActorId> actor_ids, const std::string& clip_id,
                            const InferOptions& opts = {});

// ---------------------------------------------------------------------------
// Feature files

struct FrameFeatureRecord {
  nn::Matrix actor_feats;  // N x F
  nn::Matrix scene_feats;  // S x F, may be empty
};

struct ClipFeatures {
  std::string clip_id;
  std::vector<FrameFeatureRecord> frames;  // one entry per clip frame
};

std::vector<ClipFeatures> parse_features(const nlohmann::json& doc);
std::vector<ClipFeatures> load_features(const std::filesystem::path& path);
nlohmann::json features_to_json(std::span<const ClipFeatures> features);
void save_features(const std::filesystem::path& path, std::span<const ClipFeatures> features);

/// Gathers the sampled frames of a clip into model inputs. Throws
/// SchemaError when the feature record does not fit the clip.
ModelInput build_input(const Clip& clip, const ClipFeatures& features, std::span<const int> frames);

/// Runs the model on every clip (deterministic frame sampling) and applies
/// infer_groups. Throws SchemaError if a clip has no feature record.
std::vector<ClipPrediction> predict(const GroupingTransformer& model, std::span<const Clip> clips,
                                    std::span<const ClipFeatures> features, const InferOptions& opts = {});

/// Config whose shape fields (input_dim, D, K, L, C, embed/ffn widths,
/// scene tokens) are read from a checkpoint; other fields come from `base`.
ModelConfig config_from_checkpoint(const nlohmann::json& checkpoint, ModelConfig base);

}  // namespace gad
