#include "gad/clustering_baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gad/error.hpp"
#include "gad/random.hpp"

namespace gad {

namespace {

// Lloyd iterations from k-means++ seeds; ties go to the lowest index.
std::vector<int> kmeans(const Eigen::MatrixXd& points, int k, SplitMix64& rng, int max_iters = 100) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centers(k, points.cols());
  std::vector<Eigen::Index> chosen;
  chosen.push_back(static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(n) - 1)));
  centers.row(0) = points.row(chosen[0]);
  Eigen::VectorXd d2(n);
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) best = std::min(best, (points.row(i) - centers.row(j)).squaredNorm());
      d2(i) = best;
    }
    Eigen::Index pick = 0;
    const double total = d2.sum();
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2(i) <= 0.0) continue;
        if (u < d2(i)) {
          pick = i;
          break;
        }
        u -= d2(i);
      }
      while (d2(pick) <= 0.0) --pick;
    } else {
      // Every point already coincides with a center; take the first unused one.
      while (std::find(chosen.begin(), chosen.end(), pick) != chosen.end()) ++pick;
    }
    chosen.push_back(pick);
    centers.row(c) = points.row(pick);
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != best) {
        labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (int c = 0; c < k; ++c) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(points.cols());
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] == c) {
          sum += points.row(i);
          ++count;
        }
      }
      if (count > 0) centers.row(c) = sum / count;
    }
  }
  return labels;
}

// Renumbers labels in order of first appearance.
void canonicalize(std::vector<int>& labels) {
  std::vector<int> map;
  for (int& l : labels) {
    if (l >= static_cast<int>(map.size())) map.resize(static_cast<std::size_t>(l) + 1, -1);
    int& m = map[static_cast<std::size_t>(l)];
    if (m < 0) m = *std::max_element(map.begin(), map.end()) + 1;
    l = m;
  }
}

}  // namespace

Eigen::MatrixXd build_affinity(const Eigen::MatrixXd& points, AffinityKind kind, double bandwidth) {
  const Eigen::Index n = points.rows();
  if (kind == AffinityKind::kRbf && !(bandwidth > 0.0)) throw ShapeError("build_affinity: bandwidth must be positive");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = 0.0;
      if (kind == AffinityKind::kCosine) {
        const double denom = points.row(i).norm() * points.row(j).norm();
        v = denom > 0.0 ? std::max(0.0, points.row(i).dot(points.row(j)) / denom) : 0.0;
      } else {
        v = std::exp(-(points.row(i) - points.row(j)).squaredNorm() / (2.0 * bandwidth * bandwidth));
      }
      a(i, j) = a(j, i) = v;
    }
  }
  return a;
}

EigenDecomposition jacobi_eigen(const Eigen::MatrixXd& symmetric, double tol, int max_sweeps) {
  const Eigen::Index n = symmetric.rows();
  if (symmetric.cols() != n) throw ShapeError("jacobi_eigen: matrix must be square");
  Eigen::MatrixXd a = 0.5 * (symmetric + symmetric.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(1.0, a.norm());

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (std::sqrt(off) <= tol * scale) break;

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });
  EigenDecomposition out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

Eigen::MatrixXd normalized_laplacian(const Eigen::MatrixXd& affinity) {
  const Eigen::Index n = affinity.rows();
  const Eigen::VectorXd degree = affinity.rowwise().sum();
  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) inv_sqrt(i) = degree(i) > 0.0 ? 1.0 / std::sqrt(degree(i)) : 0.0;
  Eigen::MatrixXd l = -(inv_sqrt.asDiagonal() * affinity * inv_sqrt.asDiagonal());
  l.diagonal().array() += 1.0;
  return l;
}

SpectralResult spectral_cluster(const Eigen::MatrixXd& affinity, int k, std::uint64_t seed) {
  const Eigen::Index n = affinity.rows();
  if (affinity.cols() != n) throw ShapeError("spectral_cluster: affinity must be square");
  if (k < 1 || k > n) throw ShapeError("spectral_cluster: need 1 <= k <= N");

  SpectralResult res;
  res.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<Eigen::Index> connected;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (affinity.row(i).sum() > 0.0) {
      connected.push_back(i);
    } else {
      res.isolated.push_back(static_cast<int>(i));
    }
  }

  int next_label = 0;
  if (!connected.empty()) {
    const auto m = static_cast<Eigen::Index>(connected.size());
    Eigen::MatrixXd sub(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) sub(i, j) = affinity(connected[i], connected[j]);
    }
    const int kc = static_cast<int>(std::clamp<Eigen::Index>(k - static_cast<Eigen::Index>(res.isolated.size()), 1, m));
    const Eigen::MatrixXd lap = normalized_laplacian(sub);
    const EigenDecomposition eig = jacobi_eigen(lap);
    res.eigenvalues = eig.values.head(kc);
    res.eigenvectors = eig.vectors.leftCols(kc);
    for (int c = 0; c < kc; ++c) {
      const double r = (lap * eig.vectors.col(c) - eig.values(c) * eig.vectors.col(c)).norm();
      res.max_residual = std::max(res.max_residual, r);
    }

    std::vector<int> sub_labels;
    if (kc == 1) {
      sub_labels.assign(static_cast<std::size_t>(m), 0);
    } else if (kc == m) {
      sub_labels.resize(static_cast<std::size_t>(m));
      std::iota(sub_labels.begin(), sub_labels.end(), 0);
    } else {
      Eigen::MatrixXd rows = res.eigenvectors;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double norm = rows.row(i).norm();
        if (norm > 0.0) rows.row(i) /= norm;
      }
      SplitMix64 rng(seed);
      sub_labels = kmeans(rows, kc, rng);
    }
    canonicalize(sub_labels);
    for (Eigen::Index i = 0; i < m; ++i) {
      res.labels[static_cast<std::size_t>(connected[i])] = sub_labels[static_cast<std::size_t>(i)];
      next_label = std::max(next_label, sub_labels[static_cast<std::size_t>(i)] + 1);
    }
  }
  for (int i : res.isolated) res.labels[static_cast<std::size_t>(i)] = next_label++;
  canonicalize(res.labels);
  return res;
}

ClipPrediction clusters_to_prediction(const std::string& clip_id, std::span<const ActorId> actor_ids,
                                      std::span<const int> labels, int num_classes,
                                      std::optional<std::span<const int>> votes) {
  if (labels.size() != actor_ids.size()) throw DimError("clusters_to_prediction: one label per actor required");
  if (votes && votes->size() != actor_ids.size()) throw DimError("clusters_to_prediction: one vote per actor required");
  if (num_classes < 1) throw ShapeError("clusters_to_prediction: need at least one class");
  const auto n = static_cast<Eigen::Index>(actor_ids.size());
  const int num_clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

  ClipPrediction pred;
  pred.clip_id = clip_id;
  for (int c = 0; c < num_clusters; ++c) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (labels[static_cast<std::size_t>(j)] == c) idx.push_back(j);
    }
    if (idx.empty()) continue;
    if (idx.size() == 1) {
      pred.predicted_outliers.push_back(actor_ids[static_cast<std::size_t>(idx[0])]);
      continue;
    }
    GroupPrediction gp;
    gp.member_scores = Eigen::VectorXd::Zero(n);
    gp.class_scores = Eigen::VectorXd::Zero(num_classes + 1);
    for (Eigen::Index j : idx) {
      gp.member_scores(j) = 1.0;
      gp.members.push_back(actor_ids[static_cast<std::size_t>(j)]);
      if (votes) {
        const int v = (*votes)[static_cast<std::size_t>(j)];
        if (v < 0 || v > num_classes) throw DimError("clusters_to_prediction: vote outside 0..C");
        gp.class_scores(v) += 1.0;
      }
    }
    if (votes) {
      gp.class_scores /= static_cast<double>(idx.size());
    } else {
      gp.class_scores.tail(num_classes).setConstant(1.0 / num_classes);
    }
    std::sort(gp.members.begin(), gp.members.end());
    pred.groups.push_back(std::move(gp));
  }
  std::sort(pred.predicted_outliers.begin(), pred.predicted_outliers.end());
  return pred;
}

}  // namespace gad
