#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "mgan/pipeline.hpp"
#include "mgan/training.hpp"
#include "support.hpp"

using namespace mgan;

namespace {

CorpusImages toy_images(int size = 16, int n = 80) {
  CorpusOptions o;
  o.n = n;
  o.image_size = size;
  o.seed = 4;
  o.test_fraction = 0.2;
  return corpus_images(build_corpus(o));
}

TrainConfig toy_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.total_images_shown = 4 * 1000;
  c.metrics_every = 10;
  c.checkpoint_every = 50;
  c.heldout_samples = 8;
  c.diversity_samples = 4;
  c.seed = 5;
  return c;
}

Trainer toy_trainer(const TrainConfig& c, const CorpusImages& imgs) {
  ModelBundle b = new_training_bundle(16, c);
  return Trainer(b.generator, *b.discriminator, c, imgs.train, imgs.test);
}

std::vector<double> snapshot(const ParamRefs& p) {
  std::vector<double> out;
  for (const auto& [name, t] : p) out.insert(out.end(), t->values().begin(), t->values().end());
  return out;
}

}  // namespace

TEST_CASE("value function arithmetic") {
  const std::vector<double> half{0.5, 0.5};
  CHECK(value_function(half, half) == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  const std::vector<double> r{0.9, 0.8}, f{0.1, 0.3};
  const double oracle = std::log(0.9) / 2 + std::log(0.8) / 2 + std::log(0.9) / 2 + std::log(0.7) / 2;
  CHECK(value_function(r, f) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(value_function(r, f) == doctest::Approx(-0.3953).epsilon(1e-4));
  int clamped = 0;
  const std::vector<double> one{1.0}, zero{0.0};
  CHECK(std::abs(value_function(one, zero, &clamped)) < 1e-6);
  CHECK(clamped == 2);
  const std::vector<double> bad{1.5};
  CHECK_THROWS_AS(value_function(bad, half), NumericError);
}

TEST_CASE("diversity sentinel") {
  const Tensor a = mgan::testing::random_tensor({1, 4, 4}, 1);
  CHECK(diversity({a, a, a, a}) == 0.0);
  const Tensor b = mgan::testing::random_tensor({1, 4, 4}, 2), c = mgan::testing::random_tensor({1, 4, 4}, 3);
  CHECK(diversity({a, b, c}) == doctest::Approx(diversity({c, a, b})).epsilon(1e-14));
}

TEST_CASE("one discriminator step increases V on its batch") {
  const CorpusImages imgs = toy_images();
  const TrainConfig c = toy_config();
  ModelBundle b = new_training_bundle(16, c);
  Discriminator& d = *b.discriminator;
  const Tensor real = stack_images(std::span<const Tensor>(imgs.train.data(), 4));
  const Tensor z = mgan::testing::random_tensor({4, b.generator.config().dim_z}, 6, -2, 2);
  const auto noise = b.generator.make_noise(std::vector<std::uint64_t>{1, 2, 3, 4});
  auto value = [&] {
    Tape tape;
    Var fake = b.generator.forward(tape, tape.constant(z), noise, false);
    const auto pr = d.forward(tape, tape.constant(real), false).value();
    const auto pf = d.forward(tape, fake, false).value();
    return value_function(pr.values(), pf.values());
  };
  const double before = value();
  OptimizerState s;
  s.learning_rate = 1e-3;
  const double loss = d_step(b.generator, d, s, real, z, noise);
  CHECK(loss == doctest::Approx(-before).epsilon(1e-12));
  CHECK(value() > before);
}

TEST_CASE("generator gradient against a fixed discriminator") {
  const TrainConfig c = toy_config();
  ModelBundle b = new_training_bundle(16, c);
  const Discriminator& d = *b.discriminator;
  const Tensor z = mgan::testing::random_tensor({2, b.generator.config().dim_z}, 7, -2, 2);
  const auto noise = b.generator.make_noise(std::vector<std::uint64_t>{8, 9});
  for (LossVariant v : {LossVariant::non_saturating, LossVariant::minimax}) {
    auto loss = [&](Tape& tape) {
      Var p = d.forward(tape, b.generator.forward(tape, tape.constant(z), noise, true), false);
      return v == LossVariant::non_saturating ? ops::affine(ops::mean(ops::log_clamped(p, kProbabilityFloor)), -1.0, 0.0)
                                              : ops::mean(ops::log_clamped(ops::affine(p, -1.0, 1.0), kProbabilityFloor));
    };
    const auto r = mgan::testing::check_parameters(loss, b.generator.parameters(), 1e-5, 4);
    INFO(to_string(v) << " worst: " << r.worst);
    CHECK(r.max_rel_error < 1e-4);
    // g_step reports the same loss value.
    OptimizerState s;
    s.learning_rate = 0;
    Tape tape;
    const double expect = loss(tape).value()[0];
    CHECK(g_step(b.generator, d, s, z, noise, v) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const CorpusImages imgs = toy_images();
  TrainConfig c = toy_config();
  c.lr_g = c.lr_d = 0;
  Trainer t = toy_trainer(c, imgs);
  const auto g0 = snapshot(t.generator().parameters());
  std::vector<MetricsRecord> log;
  t.run(10, [&](const MetricsRecord& r) { log.push_back(r); });
  CHECK(snapshot(t.generator().parameters()) == g0);
  REQUIRE(log.size() == 1);
  CHECK(std::isfinite(log[0].d_loss));
  CHECK(std::isfinite(log[0].g_loss));
}

TEST_CASE("fixed seed gives identical metrics logs") {
  const CorpusImages imgs = toy_images();
  TrainConfig c = toy_config();
  c.r1_gamma = 1.0;
  auto run = [&] {
    Trainer t = toy_trainer(c, imgs);
    std::ostringstream out;
    t.run(100, [&](const MetricsRecord& r) { out << metrics_line(r) << "\n"; });
    return out.str();
  };
  const std::string a = run();
  CHECK(a == run());
  CHECK(std::count(a.begin(), a.end(), '\n') == 10);
}

TEST_CASE("resolution mismatch is rejected before any step") {
  const CorpusImages imgs = toy_images(32, 20);
  const TrainConfig c = toy_config();
  ModelBundle b = new_training_bundle(16, c);
  CHECK_THROWS_AS(Trainer(b.generator, *b.discriminator, c, imgs.train, imgs.test), ConfigError);
}

TEST_CASE("non-finite loss reports the step") {
  const CorpusImages imgs = toy_images();
  const TrainConfig c = toy_config();
  ModelBundle b = new_training_bundle(16, c);
  for (auto& [name, t] : b.discriminator->parameters()) (*t)[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer t(b.generator, *b.discriminator, c, imgs.train, imgs.test);
  try {
    t.run(3);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  TrainConfig c = toy_config();
  c.checkpoint_every = 15;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<TrainConfig>()) == j);
}

TEST_CASE("discriminator-only warmup separates an untrained generator") {
  const CorpusImages imgs = toy_images(16, 200);
  TrainConfig c = toy_config();
  c.heldout_samples = 32;
  Trainer t = toy_trainer(c, imgs);
  t.train_discriminator_only(100);
  CHECK(t.heldout_accuracy() > 0.95);
}
