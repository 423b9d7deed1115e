#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgan/discriminator.hpp"
#include "mgan/generator.hpp"
#include "mgan/optim.hpp"

namespace mgan {

enum class LossVariant { minimax, non_saturating };

LossVariant parse_loss_variant(const std::string& s);
std::string to_string(LossVariant v);

inline constexpr double kProbabilityFloor = 1e-7;

/// E[log d_real] + E[log(1 - d_fake)] with probabilities clamped to
/// [1e-7, 1 - 1e-7]; `clamped` receives how many inputs hit the clamp.
/// Throws NumericError for inputs outside [0,1] or NaN.
double value_function(std::span<const double> d_real, std::span<const double> d_fake, int* clamped = nullptr);

/// Mean pairwise L2 distance between images; 0 for fewer than two.
double diversity(const std::vector<Tensor>& images);

struct TrainConfig {
  std::int64_t total_images_shown = 200000;
  int batch_size = 16;
  double lr_g = 2e-3;
  double lr_d = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  std::uint64_t seed = 1;
  int metrics_every = 250;     // steps
  int checkpoint_every = 2500; // steps; parameters are snapped to 32-bit here
  LossVariant loss_variant = LossVariant::non_saturating;
  int heldout_samples = 128;
  int diversity_samples = 16;
  // Gradient penalty on reals, applied every r1_every steps; 0 disables it.
  double r1_gamma = 1.0;
  int r1_every = 4;

  std::int64_t total_steps() const { return total_images_shown / batch_size; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct MetricsRecord {
  std::int64_t step = 0;
  double d_loss = 0;
  double g_loss = 0;
  double heldout_acc = 0;
  double diversity = 0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

nlohmann::json to_json(const MetricsRecord& r);
/// One JSON object per line, compact and key-sorted.
std::string metrics_line(const MetricsRecord& r);

/// Stacks [1,S,S] images into an [N,1,S,S] batch.
Tensor stack_images(std::span<const Tensor> images);

/// Penalty weight/2 * E||grad_x logit(x)||^2 on reals, estimated as
/// E[(logit(x + sigma*n) - logit(x))^2] / sigma^2 with n standard normal,
/// which needs only first-order gradients.
struct GradientPenalty {
  double weight = 0;
  double sigma = 1e-2;
  Tensor perturbation;  // standard normal, shaped like the real batch
};

/// One discriminator update ascending the value function; returns -V on the batch.
double d_step(const Generator& g, Discriminator& d, OptimizerState& state, const Tensor& real_batch, const Tensor& z_batch,
              const std::vector<Tensor>& noise, const GradientPenalty* penalty = nullptr);
/// One generator update; returns the generator loss for `variant`.
/// When `w_batch_mean` is given it receives the mean mapped latent of the batch.
double g_step(Generator& g, const Discriminator& d, OptimizerState& state, const Tensor& z_batch,
              const std::vector<Tensor>& noise, LossVariant variant, VectorXd* w_batch_mean = nullptr);

struct TrainerState {
  std::int64_t step = 0;
  OptimizerState opt_g;
  OptimizerState opt_d;
};

/// Alternating min-max training on a fixed image set. Every random draw is a
/// pure function of (config.seed, step), so a run resumed from a checkpoint
/// replays the uninterrupted run exactly.
class Trainer {
 public:
  Trainer(Generator g, Discriminator d, TrainConfig config, std::vector<Tensor> train_images,
          std::vector<Tensor> heldout_images, std::optional<TrainerState> resume = std::nullopt);

  const Generator& generator() const { return g_; }
  Generator& generator() { return g_; }
  const Discriminator& discriminator() const { return d_; }
  const TrainerState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }

  /// Runs `steps` alternating steps (bounded by config.total_steps()).
  /// on_metrics fires per metrics cadence; on_checkpoint after each 32-bit snap.
  void run(std::int64_t steps, const std::function<void(const MetricsRecord&)>& on_metrics = {},
           const std::function<void(const Trainer&)>& on_checkpoint = {});
  /// Discriminator-only updates against the current generator.
  void train_discriminator_only(int steps);

  double heldout_accuracy() const;
  double sample_diversity(int n, double psi) const;
  MetricsRecord evaluate(double d_loss, double g_loss) const;

  /// Rounds every parameter, moment and w_mean to 32-bit precision.
  void snap_to_float32();

 private:
  Tensor real_batch(std::int64_t step) const;
  Tensor z_batch(std::uint64_t seed) const;
  std::vector<std::uint64_t> noise_seeds(std::uint64_t seed) const;

  Generator g_;
  Discriminator d_;
  TrainConfig config_;
  std::vector<Tensor> train_images_;
  std::vector<Tensor> heldout_images_;
  TrainerState state_;
};

}  // namespace mgan
