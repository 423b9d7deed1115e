#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgan/autodiff.hpp"
#include "mgan/tensor.hpp"

namespace mgan {

using VectorXd = Eigen::VectorXd;

struct GeneratorConfig {
  int dim_z = 64;
  int dim_w = 64;
  int mapping_depth = 8;
  /// Output channels per synthesis block; block 0 runs at 4x4 and every
  /// later block doubles the resolution.
  std::vector<int> channels{32, 32, 16, 8, 4};
  double leaky_slope = 0.2;
  double w_mean_decay = 0.995;

  int num_blocks() const { return static_cast<int>(channels.size()); }
  int resolution() const { return 4 << (num_blocks() - 1); }
  int block_resolution(int block) const { return 4 << block; }
  void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

/// One w per synthesis block.
struct LatentW {
  std::vector<VectorXd> layers;

  static LatentW broadcast(const VectorXd& w, int num_blocks);
  int size() const { return static_cast<int>(layers.size()); }
};

/// Per-block style vectors [scale(C) | shift(C)] produced by the block's affine map.
struct StyleSet {
  std::vector<VectorXd> layers;
};

/// Activations recorded at one named block during synthesis.
struct ActivationCapture {
  std::string block_name;  // "block0" ... "block{L-1}"
  Tensor activation;       // [1,C,H,W] after style modulation
  StyleSet styles;
  std::vector<Tensor> blocks;  // every block's output, block 0 first
};

/// Style-based generator: mapping MLP z -> w, then a learned 4x4 constant
/// refined by (upsample, conv, noise, leaky-ReLU, AdaIN(style)) blocks.
class Generator {
 public:
  explicit Generator(GeneratorConfig config, std::uint64_t init_seed = 0);

  const GeneratorConfig& config() const { return config_; }
  ParamRefs parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  Tensor* find_parameter(const std::string& name);

  // Tape-level building blocks (training and gradient checks).
  Var map(Tape& tape, const Var& z, bool track) const;
  Var block_style(Tape& tape, int block, const Var& w, bool track) const;
  /// Runs synthesis from per-block styles [N,2C_i]; noise[i] is [N,1,H_i,W_i].
  Var synthesize(Tape& tape, const std::vector<Var>& styles, const std::vector<Tensor>& noise, bool track,
                 std::vector<Var>* block_outputs = nullptr) const;
  /// z -> image with a single shared w per sample.
  Var forward(Tape& tape, const Var& z, const std::vector<Tensor>& noise, bool track) const;

  // Per-image inference.
  VectorXd map_latent(const VectorXd& z) const;
  StyleSet styles(const LatentW& w) const;
  Tensor synthesize(const LatentW& w, std::optional<std::uint64_t> noise_seed, ActivationCapture* capture = nullptr) const;
  Tensor synthesize_styles(const StyleSet& styles, std::optional<std::uint64_t> noise_seed,
                           ActivationCapture* capture = nullptr) const;

  /// Per-block noise maps for a batch; noise_seeds[n] pins sample n.
  std::vector<Tensor> make_noise(const std::vector<std::uint64_t>& noise_seeds) const;
  std::vector<Tensor> make_noise(std::optional<std::uint64_t> noise_seed) const;

  // Mean latent used for truncation.
  const VectorXd& w_mean() const { return w_mean_; }
  std::int64_t w_mean_count() const { return w_mean_count_; }
  void set_w_mean(const VectorXd& mean, std::int64_t count);
  /// Exact running sample mean.
  void accumulate_mean(const VectorXd& w);
  /// Exponential moving average with config().w_mean_decay (training).
  void ema_update_mean(const VectorXd& batch_mean, std::int64_t batch_size);
  /// Replaces w_mean by the sample mean over n fresh standard-normal z.
  void estimate_w_mean(int n, std::uint64_t seed);
  /// w_mean + psi * (w - w_mean); needs w_mean from >= 1000 samples.
  VectorXd truncate(const VectorXd& w, double psi) const;

  /// Content id over the 32-bit rendering of every parameter.
  std::string checkpoint_id() const;

  static constexpr std::int64_t kMinMeanSamples = 1000;

 private:
  GeneratorConfig config_;
  std::vector<Tensor> map_weight_, map_bias_;
  Tensor const_input_;
  struct Block {
    Tensor conv, bias, noise_gain, style_weight, style_bias;
  };
  std::vector<Block> blocks_;
  Tensor out_weight_, out_bias_;
  VectorXd w_mean_;
  std::int64_t w_mean_count_ = 0;
};

VectorXd sample_z(int dim_z, std::uint64_t seed);

/// Everything needed to re-render (and re-edit) one sampled image.
struct LatentRecord {
  std::string checkpoint_id;
  std::uint64_t seed = 0;  // drives both z and the noise maps
  double psi = 1.0;
  VectorXd w;              // truncated latent
  std::uint64_t noise_seed = 0;

  std::string id() const;
};

nlohmann::json to_json(const LatentRecord& r);
LatentRecord latent_record_from_json(const nlohmann::json& j);

LatentRecord make_latent_record(const Generator& g, std::uint64_t sample_seed, double psi);
Tensor render(const Generator& g, const LatentRecord& record);

struct SampleGrid {
  std::vector<Tensor> images;
  std::vector<LatentRecord> records;
  /// Set when the generator's mean latent was never estimated.
  bool untrained = false;
};

/// n reproducible samples at truncation psi; sample i uses seed derive_seed(seed, "grid", i).
SampleGrid sample_grid(const Generator& g, int n, double psi, std::uint64_t seed);

std::string block_name(int block);
int block_index(const std::string& name, int num_blocks);

}  // namespace mgan
