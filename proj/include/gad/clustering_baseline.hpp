#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gad/core_data.hpp"

namespace gad {

enum class AffinityKind { kCosine, kRbf };

/// N x N symmetric affinity with a zero diagonal. Cosine uses
/// max(0, cos(f_i, f_j)); rbf uses exp(-|c_i - c_j|^2 / (2 bandwidth^2)).
Eigen::MatrixXd build_affinity(const Eigen::MatrixXd& points, AffinityKind kind, double bandwidth = 1.0);

struct EigenDecomposition {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // column i pairs with values(i)
};

/// Cyclic Jacobi rotations on a symmetric matrix.
EigenDecomposition jacobi_eigen(const Eigen::MatrixXd& symmetric, double tol = 1e-14, int max_sweeps = 100);

/// I - D^{-1/2} A D^{-1/2}; rows of zero degree keep only the identity.
Eigen::MatrixXd normalized_laplacian(const Eigen::MatrixXd& affinity);

struct SpectralResult {
  std::vector<int> labels;            // cluster per actor, 0..k-1
  Eigen::VectorXd eigenvalues;        // the k smallest
  Eigen::MatrixXd eigenvectors;       // N x k
  double max_residual{0.0};           // max |L v - lambda v| over the returned pairs
  std::vector<int> isolated;          // actors with zero total affinity
};

/// Normalized spectral clustering into k clusters; k-means++ seeding and at
/// most 100 Lloyd iterations. Actors with zero degree get their own cluster
/// and are reported in `isolated`. Throws ShapeError unless 1 <= k <= N.
SpectralResult spectral_cluster(const Eigen::MatrixXd& affinity, int k, std::uint64_t seed = 0);

/// Clusters of one actor become outliers, larger ones become groups. Class
/// scores are uniform over 1..C unless per-actor votes (class labels) are
/// supplied, in which case the vote histogram is used.
ClipPrediction clusters_to_prediction(const std::string& clip_id, std::span<const ActorId> actor_ids,
                                      std::span<const int> labels, int num_classes,
                                      std::optional<std::span<const int>> votes = std::nullopt);

}  // namespace gad
