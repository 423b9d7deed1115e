#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mgan/autodiff.hpp"
#include "mgan/tensor.hpp"

namespace mgan {

/// Convolutional discriminator mirroring the synthesis depth: a 1x1 input
/// projection, one stride-2 3x3 convolution per generator upsampling, and a
/// dense head emitting one probability.
struct DiscriminatorConfig {
  int resolution = 64;
  /// channels[0] is the input projection; channels[i] the i-th downsampling conv.
  std::vector<int> channels{8, 8, 16, 32, 32};
  double leaky_slope = 0.2;

  int num_downsamples() const { return static_cast<int>(channels.size()) - 1; }
  void validate() const;
  static DiscriminatorConfig for_resolution(int resolution);
};

void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config, std::uint64_t init_seed = 0);

  const DiscriminatorConfig& config() const { return config_; }
  ParamRefs parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;

  /// [N,1,S,S] images -> [N,1] logits.
  Var logits(Tape& tape, const Var& images, bool track) const;
  /// [N,1,S,S] images -> [N,1] probabilities.
  Var forward(Tape& tape, const Var& images, bool track) const;

  std::vector<double> probabilities(const std::vector<Tensor>& images) const;

 private:
  DiscriminatorConfig config_;
  Tensor in_weight_, in_bias_;
  std::vector<Tensor> conv_, conv_bias_;
  Tensor head_weight_, head_bias_;
};

}  // namespace mgan
