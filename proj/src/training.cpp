#include "mgan/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

#include "mgan/rng.hpp"

namespace mgan {

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "minimax") return LossVariant::minimax;
  if (s == "non_saturating") return LossVariant::non_saturating;
  throw ConfigError("unknown loss variant '" + s + "'");
}

std::string to_string(LossVariant v) { return v == LossVariant::minimax ? "minimax" : "non_saturating"; }

double value_function(std::span<const double> d_real, std::span<const double> d_fake, int* clamped) {
  if (d_real.empty() || d_fake.empty()) throw NumericError("value_function needs non-empty inputs");
  int clamp_count = 0;
  auto safe_log = [&](double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw NumericError("value_function: probability " + std::to_string(p) + " outside [0,1]");
    const double c = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
    if (c != p) ++clamp_count;
    return c;
  };
  double real = 0, fake = 0;
  for (double p : d_real) real += std::log(safe_log(p));
  for (double p : d_fake) fake += std::log(1.0 - safe_log(p));
  if (clamped) *clamped = clamp_count;
  return real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
}

double diversity(const std::vector<Tensor>& images) {
  if (images.size() < 2) return 0.0;
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      total += (images[i].vector() - images[j].vector()).norm();
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(lr_g >= 0 && lr_d >= 0)) throw ConfigError("learning rates must be non-negative");
  if (metrics_every < 1 || checkpoint_every < 1) throw ConfigError("cadences must be >= 1 step");
  if (checkpoint_every % metrics_every != 0) throw ConfigError("checkpoint_every must be a multiple of metrics_every");
  if (total_images_shown < batch_size) throw ConfigError("total_images_shown must cover at least one batch");
  if (!(r1_gamma >= 0) || r1_every < 1) throw ConfigError("r1_gamma must be >= 0 and r1_every >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"total_images_shown", c.total_images_shown},
       {"batch_size", c.batch_size},
       {"lr_g", c.lr_g},
       {"lr_d", c.lr_d},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"seed", c.seed},
       {"metrics_every", c.metrics_every},
       {"checkpoint_every", c.checkpoint_every},
       {"loss_variant", to_string(c.loss_variant)},
       {"heldout_samples", c.heldout_samples},
       {"diversity_samples", c.diversity_samples},
       {"r1_gamma", c.r1_gamma},
       {"r1_every", c.r1_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.total_images_shown = j.at("total_images_shown");
  c.batch_size = j.at("batch_size");
  c.lr_g = j.at("lr_g");
  c.lr_d = j.at("lr_d");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.seed = j.at("seed");
  c.metrics_every = j.at("metrics_every");
  c.checkpoint_every = j.at("checkpoint_every");
  c.loss_variant = parse_loss_variant(j.at("loss_variant"));
  c.heldout_samples = j.at("heldout_samples");
  c.diversity_samples = j.at("diversity_samples");
  c.r1_gamma = j.value("r1_gamma", TrainConfig{}.r1_gamma);
  c.r1_every = j.value("r1_every", TrainConfig{}.r1_every);
}

nlohmann::json to_json(const MetricsRecord& r) {
  return {{"step", r.step}, {"d_loss", r.d_loss}, {"g_loss", r.g_loss}, {"heldout_acc", r.heldout_acc}, {"diversity", r.diversity}};
}

std::string metrics_line(const MetricsRecord& r) { return to_json(r).dump(); }

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw DimensionError("cannot stack an empty image list");
  const Index h = images.front().dim(images.front().rank() - 2), w = images.front().dim(images.front().rank() - 1);
  Tensor batch(Shape{static_cast<Index>(images.size()), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != h * w) throw DimensionError("image " + std::to_string(i) + " has shape " + shape_string(images[i].shape()));
    std::copy(images[i].data(), images[i].data() + h * w, batch.data() + static_cast<Index>(i) * h * w);
  }
  return batch;
}

double d_step(const Generator& g, Discriminator& d, OptimizerState& state, const Tensor& real_batch, const Tensor& z_batch,
              const std::vector<Tensor>& noise, const GradientPenalty* penalty) {
  Tape tape;
  Var fake = g.forward(tape, tape.constant(z_batch), noise, false);
  Var logit_real = d.logits(tape, tape.constant(real_batch), true);
  Var p_real = ops::sigmoid(logit_real);
  Var p_fake = d.forward(tape, tape.constant(fake.value()), true);
  Var value = ops::add(ops::mean(ops::log_clamped(p_real, kProbabilityFloor)),
                       ops::mean(ops::log_clamped(ops::affine(p_fake, -1.0, 1.0), kProbabilityFloor)));
  Var loss = ops::affine(value, -1.0, 0.0);
  const double out = loss.value()[0];
  if (!std::isfinite(out)) return out;
  if (penalty && penalty->weight > 0) {
    if (penalty->perturbation.shape() != real_batch.shape())
      throw DimensionError("penalty perturbation " + shape_string(penalty->perturbation.shape()) + " vs batch " +
                           shape_string(real_batch.shape()));
    Tensor shifted = real_batch;
    for (Index i = 0; i < shifted.size(); ++i) shifted.data()[i] += penalty->sigma * penalty->perturbation.data()[i];
    Var diff = ops::add(d.logits(tape, tape.constant(shifted), true), ops::affine(logit_real, -1.0, 0.0));
    const double scale = 0.5 * penalty->weight / (penalty->sigma * penalty->sigma);
    loss = ops::add(loss, ops::affine(ops::mean(ops::square(diff)), scale, 0.0));
  }
  tape.backward(loss);
  adam_step(d.parameters(), state);
  return out;
}

double g_step(Generator& g, const Discriminator& d, OptimizerState& state, const Tensor& z_batch,
              const std::vector<Tensor>& noise, LossVariant variant, VectorXd* w_batch_mean) {
  Tape tape;
  Var w = g.map(tape, tape.constant(z_batch), true);
  std::vector<Var> styles;
  for (int i = 0; i < g.config().num_blocks(); ++i) styles.push_back(g.block_style(tape, i, w, true));
  Var fake = g.synthesize(tape, styles, noise, true);
  Var p_fake = d.forward(tape, fake, false);
  Var loss = variant == LossVariant::non_saturating
                 ? ops::affine(ops::mean(ops::log_clamped(p_fake, kProbabilityFloor)), -1.0, 0.0)
                 : ops::mean(ops::log_clamped(ops::affine(p_fake, -1.0, 1.0), kProbabilityFloor));
  const double out = loss.value()[0];
  if (w_batch_mean) {
    const Index n = w.shape()[0];
    *w_batch_mean = w.value().matrix(n, w.shape()[1]).colwise().mean().transpose();
  }
  if (!std::isfinite(out)) return out;
  tape.backward(loss);
  adam_step(g.parameters(), state);
  return out;
}

Trainer::Trainer(Generator g, Discriminator d, TrainConfig config, std::vector<Tensor> train_images,
                 std::vector<Tensor> heldout_images, std::optional<TrainerState> resume)
    : g_(std::move(g)), d_(std::move(d)), config_(std::move(config)), train_images_(std::move(train_images)),
      heldout_images_(std::move(heldout_images)) {
  config_.validate();
  if (g_.config().resolution() != d_.config().resolution)
    throw ConfigError("generator resolution " + std::to_string(g_.config().resolution()) + " != discriminator resolution " +
                      std::to_string(d_.config().resolution));
  if (train_images_.empty()) throw ConfigError("training set is empty");
  const Index s = g_.config().resolution();
  for (const auto* set : {&train_images_, &heldout_images_})
    for (const Tensor& img : *set)
      if (img.size() != s * s)
        throw ConfigError("corpus resolution " + shape_string(img.shape()) + " does not match model resolution " + std::to_string(s));
  if (resume) {
    state_ = std::move(*resume);
  }
  state_.opt_g.learning_rate = config_.lr_g;
  state_.opt_d.learning_rate = config_.lr_d;
  for (auto* o : {&state_.opt_g, &state_.opt_d}) {
    o->beta1 = config_.beta1;
    o->beta2 = config_.beta2;
  }
}

Tensor Trainer::real_batch(std::int64_t step) const {
  const auto n = static_cast<std::int64_t>(train_images_.size());
  std::vector<Tensor> picks;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm;
  for (int j = 0; j < config_.batch_size; ++j) {
    const std::int64_t pos = step * config_.batch_size + j;
    const std::int64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      perm.resize(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(config_.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
      cached_epoch = epoch;
    }
    picks.push_back(train_images_[perm[static_cast<std::size_t>(pos % n)]]);
  }
  return stack_images(picks);
}

Tensor Trainer::z_batch(std::uint64_t seed) const {
  Tensor z(Shape{config_.batch_size, g_.config().dim_z});
  for (int b = 0; b < config_.batch_size; ++b) {
    const VectorXd zi = sample_z(g_.config().dim_z, derive_seed(seed, "sample", static_cast<std::uint64_t>(b)));
    std::copy(zi.data(), zi.data() + zi.size(), z.data() + b * zi.size());
  }
  return z;
}

std::vector<std::uint64_t> Trainer::noise_seeds(std::uint64_t seed) const {
  std::vector<std::uint64_t> seeds;
  for (int b = 0; b < config_.batch_size; ++b) seeds.push_back(derive_seed(seed, "sample", static_cast<std::uint64_t>(b)));
  return seeds;
}

void Trainer::run(std::int64_t steps, const std::function<void(const MetricsRecord&)>& on_metrics,
                  const std::function<void(const Trainer&)>& on_checkpoint) {
  const std::int64_t end = std::min(config_.total_steps(), state_.step + steps);
  double d_acc = 0, g_acc = 0;
  int window = 0;
  while (state_.step < end) {
    const auto s = static_cast<std::uint64_t>(state_.step);
    const Tensor reals = real_batch(state_.step);
    std::optional<GradientPenalty> penalty;
    if (config_.r1_gamma > 0 && state_.step % config_.r1_every == 0) {
      penalty.emplace();
      penalty->weight = config_.r1_gamma * config_.r1_every;
      penalty->perturbation = Tensor(reals.shape());
      Rng rng(derive_seed(config_.seed, "r1", s));
      for (double& v : penalty->perturbation.values()) v = standard_normal(rng);
    }
    const double dl = d_step(g_, d_, state_.opt_d, reals, z_batch(derive_seed(config_.seed, "z-d", s)),
                             g_.make_noise(noise_seeds(derive_seed(config_.seed, "noise-d", s))),
                             penalty ? &*penalty : nullptr);
    if (!std::isfinite(dl)) throw TrainingError("non-finite discriminator loss at step " + std::to_string(state_.step));
    VectorXd w_mean_batch;
    const double gl = g_step(g_, d_, state_.opt_g, z_batch(derive_seed(config_.seed, "z-g", s)),
                             g_.make_noise(noise_seeds(derive_seed(config_.seed, "noise-g", s))), config_.loss_variant,
                             &w_mean_batch);
    if (!std::isfinite(gl)) throw TrainingError("non-finite generator loss at step " + std::to_string(state_.step));
    g_.ema_update_mean(w_mean_batch, config_.batch_size);
    d_acc += dl;
    g_acc += gl;
    ++window;
    ++state_.step;
    if (state_.step % config_.metrics_every == 0) {
      const MetricsRecord r = evaluate(d_acc / window, g_acc / window);
      if (on_metrics) on_metrics(r);
      d_acc = g_acc = 0;
      window = 0;
    }
    if (state_.step % config_.checkpoint_every == 0) {
      snap_to_float32();
      if (on_checkpoint) on_checkpoint(*this);
    }
  }
}

void Trainer::train_discriminator_only(int steps) {
  for (int i = 0; i < steps; ++i) {
    const auto s = static_cast<std::uint64_t>(i);
    d_step(g_, d_, state_.opt_d, real_batch(i), z_batch(derive_seed(config_.seed, "z-warmup", s)),
           g_.make_noise(noise_seeds(derive_seed(config_.seed, "noise-warmup", s))));
  }
}

double Trainer::heldout_accuracy() const {
  const std::size_t n = std::min<std::size_t>(heldout_images_.size(), static_cast<std::size_t>(config_.heldout_samples));
  if (n == 0) return 0.0;
  std::vector<Tensor> reals(heldout_images_.begin(), heldout_images_.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<Tensor> fakes;
  const std::uint64_t eval_seed = derive_seed(config_.seed, "eval-heldout");
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t si = derive_seed(eval_seed, "sample", i);
    fakes.push_back(g_.synthesize(LatentW::broadcast(g_.map_latent(sample_z(g_.config().dim_z, si)), g_.config().num_blocks()), si));
  }
  const auto pr = d_.probabilities(reals), pf = d_.probabilities(fakes);
  std::size_t correct = 0;
  for (double p : pr) correct += p > 0.5;
  for (double p : pf) correct += p < 0.5;
  return static_cast<double>(correct) / static_cast<double>(2 * n);
}

double Trainer::sample_diversity(int n, double psi) const {
  std::vector<Tensor> samples;
  const std::uint64_t eval_seed = derive_seed(config_.seed, "eval-diversity");
  for (int i = 0; i < n; ++i) {
    const std::uint64_t si = derive_seed(eval_seed, "sample", static_cast<std::uint64_t>(i));
    VectorXd w = g_.map_latent(sample_z(g_.config().dim_z, si));
    if (psi != 1.0) w = g_.truncate(w, psi);
    samples.push_back(g_.synthesize(LatentW::broadcast(w, g_.config().num_blocks()), si));
  }
  return diversity(samples);
}

MetricsRecord Trainer::evaluate(double d_loss, double g_loss) const {
  return {state_.step, d_loss, g_loss, heldout_accuracy(), sample_diversity(config_.diversity_samples, 1.0)};
}

void Trainer::snap_to_float32() {
  auto snap = [](Tensor& t) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  };
  for (auto& [name, t] : g_.parameters()) snap(*t);
  for (auto& [name, t] : d_.parameters()) snap(*t);
  for (auto* opt : {&state_.opt_g, &state_.opt_d})
    for (auto& [name, m] : opt->moments) {
      snap(m.first);
      snap(m.second);
    }
  VectorXd wm = g_.w_mean().cast<float>().cast<double>();
  g_.set_w_mean(wm, g_.w_mean_count());
}

}  // namespace mgan
