#include "doctest.h"

#include <cmath>
#include <limits>

#include "mgan/generator.hpp"
#include "mgan/pipeline.hpp"
#include "mgan/training.hpp"

using namespace mgan;

namespace {

Generator small_generator(std::uint64_t seed = 1) {
  Generator g(generator_config_for(16), seed);
  g.estimate_w_mean(1000, 2);
  return g;
}

}  // namespace

TEST_CASE("mapping is deterministic and rejects bad input") {
  const Generator g = small_generator();
  const VectorXd z = sample_z(g.config().dim_z, 4);
  CHECK(g.map_latent(z) == g.map_latent(z));
  VectorXd bad = z;
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(g.map_latent(bad), NumericError);
  CHECK_THROWS_AS(g.map_latent(VectorXd::Zero(3)), DimensionError);
}

TEST_CASE("fresh zero-bias mapping sends z = 0 to w = 0") {
  const Generator g(generator_config_for(16), 7);
  CHECK(g.map_latent(VectorXd::Zero(g.config().dim_z)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("truncation endpoints") {
  const Generator g = small_generator();
  const VectorXd w = g.map_latent(sample_z(g.config().dim_z, 5));
  CHECK(g.truncate(w, 1.0) == w);
  CHECK(g.truncate(w, 0.0) == g.w_mean());
  const Generator fresh(generator_config_for(16), 1);
  CHECK_THROWS_AS(fresh.truncate(w, 0.5), StateError);
}

TEST_CASE("synthesis is deterministic and broadcast equals the per-layer list") {
  Generator g = small_generator();
  // Noise gains start at zero; give them weight so the noise seed matters.
  for (auto& [name, t] : g.parameters())
    if (name.find("noise_gain") != std::string::npos) for (Index i = 0; i < t->size(); ++i) (*t)[i] = 0.1;
  const VectorXd w = g.map_latent(sample_z(g.config().dim_z, 6));
  const LatentW b = LatentW::broadcast(w, g.config().num_blocks());
  LatentW listed;
  for (int i = 0; i < g.config().num_blocks(); ++i) listed.layers.push_back(w);
  const Tensor a = g.synthesize(b, 11);
  CHECK(a.shape() == Shape{1, 16, 16});
  CHECK(a == g.synthesize(b, 11));
  CHECK(a == g.synthesize(listed, 11));
  CHECK_FALSE(a == g.synthesize(b, 12));
  for (double v : a.values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("capture records the named block") {
  const Generator g = small_generator();
  const LatentW w = LatentW::broadcast(g.map_latent(sample_z(g.config().dim_z, 6)), g.config().num_blocks());
  ActivationCapture cap;
  cap.block_name = "block1";
  g.synthesize(w, 3, &cap);
  CHECK(cap.activation.shape() == Shape{1, g.config().channels[1], 8, 8});
  CHECK(cap.styles.layers.size() == static_cast<std::size_t>(g.config().num_blocks()));
  CHECK(cap.blocks.size() == static_cast<std::size_t>(g.config().num_blocks()));
  CHECK(cap.blocks[1] == cap.activation);
  CHECK_THROWS_AS(block_index("block9", g.config().num_blocks()), NotFoundError);
  LatentW short_w = w;
  short_w.layers.pop_back();
  CHECK_THROWS_AS(g.synthesize(short_w, 3), DimensionError);
}

TEST_CASE("sample grid is reproducible") {
  const Generator g = small_generator();
  const SampleGrid a = sample_grid(g, 40, 0.65, 9), b = sample_grid(g, 40, 0.65, 9);
  CHECK(a.images == b.images);
  CHECK_FALSE(a.untrained);
  CHECK(sample_grid(Generator(generator_config_for(16), 1), 1, 1.0, 0).untrained);
}

TEST_CASE("psi = 0 collapses every latent to the mean") {
  const Generator g = small_generator();
  const SampleGrid grid = sample_grid(g, 8, 0.0, 10);
  // Noise maps stay per-sample; with them pinned the images coincide too.
  const Tensor mean_image = g.synthesize(LatentW::broadcast(g.w_mean(), g.config().num_blocks()), 0);
  for (const LatentRecord& r : grid.records) {
    CHECK(r.w == g.w_mean());
    CHECK(g.synthesize(LatentW::broadcast(r.w, g.config().num_blocks()), 0) == mean_image);
  }
}

TEST_CASE("diversity falls with stronger truncation") {
  const Generator g = small_generator();
  const SampleGrid hi = sample_grid(g, 64, 0.65, 12), lo = sample_grid(g, 64, 0.2, 12);
  CHECK(diversity(hi.images) > diversity(lo.images));
}

TEST_CASE("latent records round-trip and re-render") {
  const Generator g = small_generator();
  const LatentRecord r = make_latent_record(g, 21, 0.65);
  const LatentRecord back = latent_record_from_json(to_json(r));
  CHECK(back.id() == r.id());
  CHECK(render(g, back) == render(g, r));
  CHECK(r.checkpoint_id == g.checkpoint_id());
}

TEST_CASE("ema mean counts images") {
  Generator g(generator_config_for(16), 1);
  VectorXd m = VectorXd::Ones(g.config().dim_w);
  g.ema_update_mean(m, 16);
  CHECK(g.w_mean() == m);
  CHECK(g.w_mean_count() == 16);
  g.ema_update_mean(VectorXd::Zero(g.config().dim_w), 16);
  CHECK(g.w_mean()[0] == doctest::Approx(g.config().w_mean_decay));
  CHECK(g.w_mean_count() == 32);
}
