#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gad/assignment.hpp"
#include "gad/core_data.hpp"
#include "gad/grouping_transformer.hpp"
#include "gad/numerics.hpp"

namespace gad {

struct LossWeights {
  double lambda_mem{5.0};
  double lambda_con{2.0};
  double tau{0.2};
  /// Weight of group-loss terms whose target is the no-activity class.
  double empty_class_weight{1.0};
};

struct LossBreakdown {
  double l_ind{0.0};
  double l_group{0.0};  // summed over matched slots
  double l_mem{0.0};    // summed over matched real groups
  double l_con{0.0};
  double total{0.0};
};

using WarnFn = std::function<void(const std::string&)>;

/// Hungarian matching of padded targets (rows) to group slots (columns) on
/// detached class and membership probabilities.
AssignmentResult match_groups(std::span<const GroupTarget> targets, const ModelOutput& out);

// Loss terms on plain values.

/// -log softmax(logits)[target].
double group_loss(int target, const Eigen::VectorXd& logits);
/// Mean binary cross-entropy of probabilities clamped to [eps, 1 - eps].
double membership_loss(const Eigen::VectorXd& target, const Eigen::VectorXd& probs, double eps = 1e-12);
/// Contrastive grouping loss over cosine similarities of the rows of
/// `embeddings`. `groups` lists actor row indices; groups with fewer than
/// two members are skipped with a warning.
double consistency_loss(const Eigen::MatrixXd& embeddings, std::span<const std::vector<int>> groups, double tau,
                        const WarnFn& warn = {});
/// Mean cross-entropy of per-actor logits against per-actor labels.
double individual_action_loss(const Eigen::MatrixXd& logits, std::span<const int> labels);

// The same terms on tensors.

nn::Tensor consistency_loss(const nn::Tensor& embeddings, std::span<const std::vector<int>> groups, double tau,
                            const WarnFn& warn = {});
nn::Tensor individual_action_loss(const nn::Tensor& logits, std::span<const int> labels);

/// Member row indices of every gt group of the clip.
std::vector<std::vector<int>> group_indices(const Clip& clip);

struct ClipLoss {
  nn::Tensor total;
  LossBreakdown parts;
  AssignmentResult matching;
};

/// Matched set loss of one clip:
/// total = l_ind + l_group + lambda_mem * l_mem + lambda_con * l_con.
ClipLoss clip_loss(const ModelOutput& out, const Clip& clip, const LossWeights& weights = {}, const WarnFn& warn = {});

struct Schedule {
  int epochs{200};
  double lr{1e-4};          // peak learning rate
  int warmup_epochs{5};     // linear warmup from lr / 10
  int batch{16};
  double clip_norm{1.0};
  SamplingMode sampling{SamplingMode::kStochastic};
};

/// Learning rate of `epoch` (0-based): linear warmup from lr / 10 to lr,
/// then linear decay towards 0 at the last epoch.
double learning_rate(const Schedule& schedule, int epoch);

using EpochCallback = std::function<void(int epoch, const LossBreakdown& mean_loss)>;

/// Adam training with global gradient clipping. Returns the mean
/// LossBreakdown of every epoch. Throws DivergenceError on a non-finite
/// loss or gradient norm.
std::vector<LossBreakdown> train(GroupingTransformer& model, std::span<const Clip> clips,
                                 std::span<const ClipFeatures> features, const Schedule& schedule,
                                 const LossWeights& weights = {}, std::uint64_t seed = 0,
                                 const EpochCallback& on_epoch = {}, const WarnFn& warn = {});

/// Finite-difference check of the total loss against every parameter of a
/// small model (N = 3 actors, K = 2 slots, D = 8, L = 1) on a fixed clip.
std::vector<nn::NamedCheck> model_grad_checks(std::uint64_t seed = 0, double h = 1e-5, double tol = 1e-3);

/// "epoch,l_ind,l_group,l_mem,l_con,total" rows.
std::string loss_curve_csv(std::span<const LossBreakdown> curve);

}  // namespace gad
