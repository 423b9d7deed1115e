#include "doctest.h"

#include <cmath>

#include "mgan/global_edit.hpp"
#include "mgan/rng.hpp"
#include "mgan/pipeline.hpp"

using namespace mgan;

namespace {

struct Fixture {
  Generator g{generator_config_for(16), 3};
  EditBasis basis;
  Fixture() {
    g.estimate_w_mean(1000, 4);
    basis = fit_basis(g, 2000, 16, 5);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("rank-one data has a single non-zero variance") {
  Eigen::MatrixXd samples(300, 6);
  const VectorXd dir = VectorXd::LinSpaced(6, 1, 6).normalized();
  Rng rng(1);
  for (int i = 0; i < 300; ++i) samples.row(i) = (3.0 * standard_normal(rng)) * dir.transpose();
  const EditBasis b = fit_basis_from_samples(samples, 6);
  CHECK(b.explained_variance[0] > 0);
  for (int k = 1; k < 6; ++k) CHECK(b.explained_variance[k] < 1e-10);
  CHECK(std::abs(b.components.col(0).dot(dir)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("known diagonal covariance is recovered within five percent") {
  const std::vector<double> var{5, 4, 3, 2, 1};
  Eigen::MatrixXd samples(50000, 5);
  Rng rng(2);
  for (Index i = 0; i < samples.rows(); ++i)
    for (int j = 0; j < 5; ++j) samples(i, j) = std::sqrt(var[static_cast<std::size_t>(j)]) * standard_normal(rng);
  const EditBasis b = fit_basis_from_samples(samples, 5);
  for (int k = 0; k < 5; ++k) CHECK(std::abs(b.explained_variance[k] / var[static_cast<std::size_t>(k)] - 1.0) < 0.05);
}

TEST_CASE("basis is orthonormal, ordered and reproducible") {
  const Fixture& f = fixture();
  const Eigen::MatrixXd gram = f.basis.components.transpose() * f.basis.components;
  CHECK((gram - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-6);
  for (int k = 1; k < f.basis.size(); ++k) CHECK(f.basis.explained_variance[k] <= f.basis.explained_variance[k - 1]);
  const EditBasis again = fit_basis(f.g, 2000, 16, 5);
  for (int k = 0; k < 16; ++k) {
    const double c = again.components.col(k).dot(f.basis.components.col(k));
    CHECK(std::abs(std::abs(c) - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(fit_basis(f.g, 100, f.g.config().dim_w + 1, 5), ConfigError);
}

TEST_CASE("zero edit is the identity") {
  const Fixture& f = fixture();
  const LatentRecord r = make_latent_record(f.g, 7, 0.65);
  const int L = f.g.config().num_blocks();
  const GlobalEdit zero{{{0, 0.0}, {3, 0.0}}, LayerRange::all(L), true};
  const LatentW w = apply_edit(r, f.basis, zero, L);
  for (const VectorXd& layer : w.layers) CHECK(layer == r.w);
  CHECK(f.g.synthesize(w, r.noise_seed) == render(f.g, r));
}

TEST_CASE("edit displacement equals the coordinate norm") {
  const Fixture& f = fixture();
  const LatentRecord r = make_latent_record(f.g, 8, 1.0);
  const int L = f.g.config().num_blocks();
  const GlobalEdit e{{{0, 1.5}, {2, -0.7}, {5, 0.25}}, LayerRange::all(L), false};
  const LatentW w = apply_edit(r, f.basis, e, L);
  const double x = std::sqrt(1.5 * 1.5 + 0.7 * 0.7 + 0.25 * 0.25);
  CHECK((w.layers[0] - r.w).norm() == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("plus and minus sigma cancel") {
  const Fixture& f = fixture();
  const LatentRecord r = make_latent_record(f.g, 9, 0.65);
  const int L = f.g.config().num_blocks();
  const GlobalEdit plus{{{0, 1.0}}, LayerRange::all(L), true}, minus{{{0, -1.0}}, LayerRange::all(L), true};
  const LatentW up = apply_edit(r, f.basis, plus, L), down = apply_edit(r, f.basis, minus, L);
  CHECK((up.layers[0] - r.w).norm() == doctest::Approx((down.layers[0] - r.w).norm()).epsilon(1e-12));
  CHECK(apply_edit(r, f.basis, GlobalEdit::compose(plus, minus), L).layers[0] == r.w);
  CHECK((apply_edit(up, f.basis, minus).layers[0] - r.w).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer-restricted edit leaves excluded style vectors bit-equal") {
  const Fixture& f = fixture();
  const LatentRecord r = make_latent_record(f.g, 10, 0.65);
  const int L = f.g.config().num_blocks();
  const GlobalEdit e{{{0, 2.0}}, LayerRange{0, 1}, true};
  ActivationCapture before, after;
  before.block_name = after.block_name = block_name(L - 1);
  const Tensor a = f.g.synthesize(LatentW::broadcast(r.w, L), r.noise_seed, &before);
  const Tensor b = f.g.synthesize(apply_edit(r, f.basis, e, L), r.noise_seed, &after);
  CHECK_FALSE(before.styles.layers[0] == after.styles.layers[0]);
  for (int i = 1; i < L; ++i) CHECK(before.styles.layers[static_cast<std::size_t>(i)] == after.styles.layers[static_cast<std::size_t>(i)]);
  CHECK_FALSE(a == b);
}

TEST_CASE("layer range parsing") {
  CHECK(LayerRange::parse("0..2", 5).end == 2);
  CHECK(LayerRange::parse("3..", 5).end == 5);
  CHECK(LayerRange::parse("4", 5).begin == 4);
  CHECK_THROWS_AS(LayerRange::parse("2..1", 5), ConfigError);
  CHECK_THROWS_AS(LayerRange::parse("0..6", 5), ConfigError);
  CHECK_THROWS_AS(LayerRange::parse("x", 5), ConfigError);
}

TEST_CASE("sweep at zero is the original image") {
  const Fixture& f = fixture();
  const LatentRecord r = make_latent_record(f.g, 11, 0.65);
  const auto strip = component_sweep(f.g, r, f.basis, 1, {0.0}, LayerRange::all(f.g.config().num_blocks()));
  REQUIRE(strip.size() == 1);
  CHECK(strip[0] == render(f.g, r));
  CHECK_THROWS_AS(component_sweep(f.g, r, f.basis, 1, {}, LayerRange::all(5)), ConfigError);
}

TEST_CASE("basis from another checkpoint is refused") {
  const Fixture& f = fixture();
  Generator other(generator_config_for(16), 99);
  other.estimate_w_mean(1000, 4);
  const LatentRecord r = make_latent_record(other, 12, 0.65);
  CHECK_THROWS_AS(apply_edit(r, f.basis, GlobalEdit{{{0, 1.0}}, LayerRange::all(3), true}, 3), ProvenanceError);
}

TEST_CASE("edit json round trip") {
  const GlobalEdit e{{{0, 1.5}, {4, -2.0}}, LayerRange{1, 3}, false};
  const GlobalEdit back = global_edit_from_json(to_json(e));
  CHECK(back.coordinates == e.coordinates);
  CHECK(back.layers.begin == 1);
  CHECK(back.layers.end == 3);
  CHECK_FALSE(back.sigma_units);
}
