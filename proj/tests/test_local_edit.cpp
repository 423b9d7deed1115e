#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "mgan/local_edit.hpp"
#include "mgan/pipeline.hpp"
#include "mgan/rng.hpp"

using namespace mgan;
using Eigen::MatrixXd;

namespace {

// Independent oracle: plain Lloyd iterations on the sphere from uniformly
// random initial points, best total cosine similarity over many restarts.
std::vector<int> restart_oracle(const MatrixXd& pts, int k, int restarts) {
  std::vector<int> best_assign;
  double best = -1e300;
  Rng rng(777);
  for (int r = 0; r < restarts; ++r) {
    MatrixXd c(k, pts.cols());
    for (int j = 0; j < k; ++j) c.row(j) = pts.row(static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(pts.rows()))));
    std::vector<int> a(static_cast<std::size_t>(pts.rows()));
    double total = 0;
    for (int it = 0; it < 100; ++it) {
      total = 0;
      for (Index i = 0; i < pts.rows(); ++i) {
        Index arg;
        total += (c * pts.row(i).transpose()).maxCoeff(&arg);
        a[static_cast<std::size_t>(i)] = static_cast<int>(arg);
      }
      MatrixXd s = MatrixXd::Zero(k, pts.cols());
      for (Index i = 0; i < pts.rows(); ++i) s.row(a[static_cast<std::size_t>(i)]) += pts.row(i);
      for (int j = 0; j < k; ++j)
        if (s.row(j).norm() > 0) c.row(j) = s.row(j).normalized();
    }
    if (total > best) {
      best = total;
      best_assign = a;
    }
  }
  return best_assign;
}

// Fraction of points whose labels disagree under the best label matching.
double disagreement(const std::vector<int>& a, const std::vector<int>& b, int k) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::size_t best = a.size();
  do {
    std::size_t miss = 0;
    for (std::size_t i = 0; i < a.size(); ++i) miss += perm[static_cast<std::size_t>(a[i])] != b[i];
    best = std::min(best, miss);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(a.size());
}

struct Fixture {
  Generator g{generator_config_for(16), 3};
  ClusterModel model;
  Fixture() {
    g.estimate_w_mean(1000, 4);
    ClusterOptions o;
    o.n_samples = 40;
    o.k = 4;
    model = fit_clusters(g, o, 5);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("orthogonal unit vectors are a fixed point") {
  MatrixXd pts(30, 5);
  for (int i = 0; i < 30; ++i) {
    pts.row(i).setZero();
    pts(i, i % 3) = 1.0;
  }
  const KMeansResult r = spherical_kmeans(pts, 3, 1);
  CHECK(r.objective.back() == 30.0);
  for (int j = 0; j < 3; ++j) {
    bool found = false;
    for (int e = 0; e < 3; ++e) found = found || r.centroids.row(j) == MatrixXd::Identity(5, 5).row(e);
    CHECK(found);
  }
}

TEST_CASE("k-means agrees with a best-of-100-restarts oracle") {
  const int dim = 8, k = 3;
  MatrixXd centers = MatrixXd::Zero(k, dim);
  centers(0, 0) = centers(1, 3) = centers(2, 6) = 1.0;
  MatrixXd raw(200, dim);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    raw.row(i) = centers.row(i % k);
    for (int c = 0; c < dim; ++c) raw(i, c) += 0.25 * standard_normal(rng);
  }
  const MatrixXd pts = normalize_rows(raw);
  const KMeansResult r = spherical_kmeans(pts, k, 9);
  CHECK(disagreement(r.assignment, restart_oracle(pts, k, 100), k) <= 0.02);
  for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] >= r.objective[i - 1] - 1e-12);
  for (int j = 0; j < k; ++j) CHECK(std::abs(r.centroids.row(j).norm() - 1.0) < 1e-9);
}

TEST_CASE("k-means input validation") {
  MatrixXd pts = normalize_rows(MatrixXd::Random(20, 4));
  CHECK_THROWS_AS(spherical_kmeans(pts, 5, 1), ConfigError);
  pts(0, 0) += 0.5;
  CHECK_THROWS_AS(spherical_kmeans(pts, 2, 1), DimensionError);
}

TEST_CASE("empty clusters are reseeded") {
  // Ten identical points and one outlier: k = 3 forces at least one duplicate centroid.
  MatrixXd pts = MatrixXd::Zero(11, 3);
  for (int i = 0; i < 10; ++i) pts(i, 0) = 1.0;
  pts(10, 1) = 1.0;
  const KMeansResult r = spherical_kmeans(pts, 3, 2);
  CHECK(r.centroids.rows() == 3);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(r.centroids.row(j).norm() - 1.0) < 1e-9);
}

TEST_CASE("query gate arithmetic") {
  ClusterModel m;
  m.k = 1;
  m.layer_name = "block0";
  m.layer_membership = {MatrixXd(1, 3)};
  m.layer_membership[0] << 0.0, 0.1, 0.2;
  const QueryMatrix q = build_query(m, 0, 20);
  CHECK(q.q[0][0] == doctest::Approx(0.1192).epsilon(1e-4));
  CHECK(q.q[0][1] == 0.5);
  CHECK(q.q[0][2] == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(q.q[0][0] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))).epsilon(1e-15));
  CHECK(q.warning.empty());
  m.layer_membership[0] << 0.9, 0.9, 0.9;
  CHECK(std::abs(build_query(m, 0, 100).q[0][0] - 1.0) < 1e-15);
  CHECK_FALSE(build_query(m, 0, 150).warning.empty());
  CHECK_THROWS_AS(build_query(m, 1, 50), NotFoundError);
  CHECK(std::abs(q.rho / (1 + q.rho) - 0.1) < 1e-15);
}

TEST_CASE("interpolation is symmetric under swapping roles") {
  StyleSet s{{VectorXd::LinSpaced(4, 0, 3)}}, r{{VectorXd::LinSpaced(4, 5, -2)}};
  QueryMatrix q;
  q.q = {VectorXd(2)};
  q.q[0] << 0.3, 0.8;
  QueryMatrix flipped = q;
  flipped.q[0] = VectorXd::Ones(2) - q.q[0];
  const StyleSet a = interpolate_styles(s, r, q), b = interpolate_styles(r, s, flipped);
  CHECK((a.layers[0] - b.layers[0]).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("cluster model invariants") {
  const Fixture& f = fixture();
  const ClusterModel& m = f.model;
  for (int j = 0; j < m.k; ++j) CHECK(std::abs(m.centroids.row(j).norm() - 1.0) < 1e-9);
  for (std::size_t i = 1; i < m.objective.size(); ++i) CHECK(m.objective[i] >= m.objective[i - 1] - 1e-9);
  REQUIRE(m.layer_membership.size() == static_cast<std::size_t>(f.g.config().num_blocks()));
  for (const MatrixXd& lm : m.layer_membership)
    for (Index c = 0; c < lm.cols(); ++c) CHECK(lm.col(c).sum() == doctest::Approx(1.0).epsilon(1e-12));
  ClusterOptions too_many;
  too_many.k = 99;
  CHECK_THROWS_AS(fit_clusters(f.g, too_many, 1), ConfigError);
}

TEST_CASE("gate endpoints reproduce target and reference exactly") {
  const Fixture& f = fixture();
  const LatentRecord s = make_latent_record(f.g, 21, 0.65), r = make_latent_record(f.g, 22, 0.65);
  const LocalEditResult zero = local_edit(f.g, f.model, QueryMatrix::constant(f.model, 0.0), s, r);
  CHECK(zero.image == render(f.g, s));
  const LocalEditResult one = local_edit(f.g, f.model, QueryMatrix::constant(f.model, 1.0), s, r);
  LatentRecord r_under_s = r;
  r_under_s.noise_seed = s.noise_seed;
  CHECK(one.image == render(f.g, r_under_s));
  // Memberships far below theta with a steep gate also give the target back.
  QueryMatrix low = build_query(f.model, 0, 1e6, 0.999);
  CHECK(local_edit(f.g, f.model, low, s, r).image == render(f.g, s));
}

TEST_CASE("mask is the cluster region of either image") {
  const Fixture& f = fixture();
  const LatentRecord s = make_latent_record(f.g, 23, 0.65), r = make_latent_record(f.g, 24, 0.65);
  const LocalEditResult out = local_edit(f.g, f.model, build_query(f.model, 1, 50), s, r);
  CHECK(out.mask.shape() == Shape{1, 16, 16});
  for (double v : out.mask.values()) CHECK((v == 0.0 || v == 1.0));
  const std::vector<int> labels{0, 1, 1, 0};
  const Tensor m = cluster_mask(labels, 2, 1, 4);
  const std::vector<double> expect{0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0};
  CHECK(m.storage() == expect);
}

TEST_CASE("cross-checkpoint mixes are refused") {
  const Fixture& f = fixture();
  Generator other(generator_config_for(16), 77);
  other.estimate_w_mean(1000, 4);
  const LatentRecord s = make_latent_record(f.g, 25, 0.65), foreign = make_latent_record(other, 26, 0.65);
  CHECK_THROWS_AS(local_edit(f.g, f.model, build_query(f.model, 0, 50), s, foreign), ProvenanceError);
  CHECK_THROWS_AS(local_edit(other, f.model, build_query(f.model, 0, 50), foreign, foreign), ProvenanceError);
}
