#include <doctest.h>

#include <numeric>

#include <Eigen/Eigenvalues>

#include "gad/clustering_baseline.hpp"
#include "gad/error.hpp"
#include "gad/random.hpp"

using namespace gad;

namespace {

// Block-diagonal affinity: cliques of the given sizes, `leak` between them.
Eigen::MatrixXd cliques(const std::vector<int>& sizes, double leak = 0.0) {
  const int n = std::accumulate(sizes.begin(), sizes.end(), 0);
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(n, n, leak);
  int start = 0;
  for (int s : sizes) {
    a.block(start, start, s, s).setOnes();
    start += s;
  }
  a.diagonal().setZero();
  return a;
}

std::vector<int> clique_labels(const std::vector<int>& sizes) {
  std::vector<int> out;
  for (std::size_t c = 0; c < sizes.size(); ++c) out.insert(out.end(), static_cast<std::size_t>(sizes[c]), int(c));
  return out;
}

}  // namespace

TEST_SUITE("clustering") {
  TEST_CASE("affinities") {
    Eigen::MatrixXd f(3, 2);
    f << 1, 0, 2, 0, 0, 3;
    const auto cos = build_affinity(f, AffinityKind::kCosine);
    CHECK(cos(0, 1) == doctest::Approx(1.0));
    CHECK(cos(0, 2) == 0.0);
    CHECK(cos.diagonal().isZero());
    CHECK(cos.isApprox(cos.transpose()));
    Eigen::MatrixXd opp(2, 2);
    opp << 1, 0, -1, 0;
    CHECK(build_affinity(opp, AffinityKind::kCosine)(0, 1) == 0.0);

    Eigen::MatrixXd c(2, 2);
    c << 0, 0, 1, 0;
    CHECK(build_affinity(c, AffinityKind::kRbf, 1.0)(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK_THROWS_AS(build_affinity(c, AffinityKind::kRbf, 0.0), ShapeError);
  }

  TEST_CASE("Jacobi agrees with a reference eigensolver") {
    SplitMix64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = rng.uniform_int(1, 12);
      Eigen::MatrixXd m(n, n);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
      m = (m + m.transpose()).eval();
      const auto mine = jacobi_eigen(m);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(m);
      CHECK((mine.values - ref.eigenvalues()).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK((m * mine.vectors - mine.vectors * mine.values.asDiagonal()).norm() <= 1e-8);
      CHECK((mine.vectors.transpose() * mine.vectors - Eigen::MatrixXd::Identity(n, n)).norm() <= 1e-10);
      for (int i = 1; i < n; ++i) CHECK(mine.values(i - 1) <= mine.values(i));
    }
  }

  TEST_CASE("normalized Laplacian") {
    const auto a = cliques({3, 2});
    const auto l = normalized_laplacian(a);
    CHECK(l.isApprox(l.transpose()));
    const auto eig = jacobi_eigen(l);
    CHECK(std::abs(eig.values(0)) <= 1e-12);
    CHECK(std::abs(eig.values(1)) <= 1e-12);
    CHECK(eig.values(2) > 0.5);
    CHECK(eig.values.maxCoeff() <= 2.0 + 1e-12);
  }

  TEST_CASE("two cliques are recovered for every seed") {
    const std::vector<int> sizes{4, 3};
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto r = spectral_cluster(cliques(sizes, 0.01), 2, seed);
      CHECK(r.labels == clique_labels(sizes));
      CHECK(r.max_residual <= 1e-8);
    }
  }

  TEST_CASE("k at the extremes") {
    const auto a = cliques({3, 3}, 0.2);
    const auto one = spectral_cluster(a, 1);
    CHECK(one.labels == std::vector<int>(6, 0));
    const auto all = spectral_cluster(a, 6);
    CHECK(all.labels == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK_THROWS_AS(spectral_cluster(a, 0), ShapeError);
    CHECK_THROWS_AS(spectral_cluster(a, 7), ShapeError);
  }

  TEST_CASE("isolated actors form their own clusters") {
    Eigen::MatrixXd a = cliques({2, 2, 1}, 0.0);
    const auto r = spectral_cluster(a, 3, 3);
    CHECK(r.isolated == std::vector<int>{4});
    CHECK(r.labels == std::vector<int>{0, 0, 1, 1, 2});
  }

  TEST_CASE("labels partition the actors and follow a permutation") {
    SplitMix64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
      const int n = rng.uniform_int(3, 9);
      Eigen::MatrixXd pts(n, 2);
      for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.uniform();
      const auto a = build_affinity(pts, AffinityKind::kRbf, 0.2);
      const int k = rng.uniform_int(1, n);
      const auto r = spectral_cluster(a, k, 7);
      REQUIRE(r.labels.size() == static_cast<std::size_t>(n));
      // Canonical numbering: labels appear in increasing order of first use.
      int next = 0;
      for (int l : r.labels) {
        CHECK(l >= 0);
        CHECK(l <= next);
        if (l == next) ++next;
      }
      CHECK(next <= n);
    }
    // Reversing actor order reverses the clique assignment.
    const std::vector<int> sizes{2, 4};
    Eigen::MatrixXd a = cliques(sizes, 0.05);
    const Eigen::MatrixXd rev = a.colwise().reverse().rowwise().reverse();
    const auto r = spectral_cluster(rev, 2, 1);
    CHECK(r.labels == std::vector<int>{0, 0, 0, 0, 1, 1});
  }

  TEST_CASE("clusters become predictions") {
    const std::vector<ActorId> ids{10, 11, 12, 13, 14};
    const std::vector<int> labels{0, 1, 0, 2, 1};
    const auto p = clusters_to_prediction("c", ids, labels, 4);
    REQUIRE(p.groups.size() == 2);
    CHECK(p.groups[0].members == std::vector<ActorId>{10, 12});
    CHECK(p.groups[1].members == std::vector<ActorId>{11, 14});
    CHECK(p.predicted_outliers == std::vector<ActorId>{13});
    CHECK(p.groups[0].class_scores(0) == 0.0);
    CHECK(p.groups[0].class_scores(3) == 0.25);
    CHECK(p.groups[0].member_scores(2) == 1.0);
    CHECK(p.groups[0].member_scores(1) == 0.0);

    const std::vector<int> votes{2, 0, 2, 1, 3};
    const auto v = clusters_to_prediction("c", ids, labels, 4, std::span<const int>(votes));
    CHECK(v.groups[0].class_scores(2) == 1.0);
    CHECK(v.groups[1].class_scores(0) == 0.5);
    CHECK(v.groups[1].class_scores(3) == 0.5);
    CHECK_THROWS_AS(clusters_to_prediction("c", ids, std::vector<int>{0, 1}, 4), DimError);
  }
}
