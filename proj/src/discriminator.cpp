#include "mgan/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mgan/rng.hpp"

namespace mgan {
namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = stddev * standard_normal(rng);
  return t;
}

}  // namespace

void DiscriminatorConfig::validate() const {
  if (channels.empty()) throw ConfigError("discriminator needs an input projection");
  for (int c : channels)
    if (c < 1) throw ConfigError("discriminator channel counts must be positive");
  if (resolution != (4 << num_downsamples()))
    throw ConfigError("discriminator depth does not reduce resolution " + std::to_string(resolution) + " to 4x4");
}

DiscriminatorConfig DiscriminatorConfig::for_resolution(int resolution) {
  DiscriminatorConfig c;
  c.resolution = resolution;
  c.channels = {8};
  for (int r = resolution; r > 4; r /= 2) {
    const int next = r / 2;
    c.channels.push_back(next >= 32 ? 8 : next >= 16 ? 16 : 32);
  }
  return c;
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"resolution", c.resolution}, {"channels", c.channels}, {"leaky_slope", c.leaky_slope}, {"output_activation", "sigmoid"}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c.resolution = j.at("resolution");
  c.channels = j.at("channels").get<std::vector<int>>();
  c.leaky_slope = j.value("leaky_slope", 0.2);
}

Discriminator::Discriminator(DiscriminatorConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(init_seed, "discriminator-init"));
  const double gain = std::sqrt(2.0 / (1.0 + config_.leaky_slope * config_.leaky_slope));
  in_weight_ = normal_tensor({config_.channels[0], 1, 1, 1}, gain, rng);
  in_bias_ = Tensor(Shape{config_.channels[0]});
  for (int i = 1; i < static_cast<int>(config_.channels.size()); ++i) {
    const int cin = config_.channels[static_cast<std::size_t>(i - 1)], cout = config_.channels[static_cast<std::size_t>(i)];
    conv_.push_back(normal_tensor({cout, cin, 3, 3}, gain / std::sqrt(9.0 * cin), rng));
    conv_bias_.emplace_back(Shape{cout});
  }
  const Index features = static_cast<Index>(config_.channels.back()) * 16;
  head_weight_ = normal_tensor({features, 1}, 1.0 / std::sqrt(static_cast<double>(features)), rng);
  head_bias_ = Tensor(Shape{1});
}

std::vector<std::pair<std::string, const Tensor*>> Discriminator::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> p;
  p.emplace_back("from_image.weight", &in_weight_);
  p.emplace_back("from_image.bias", &in_bias_);
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    p.emplace_back("down" + std::to_string(i) + ".conv", &conv_[i]);
    p.emplace_back("down" + std::to_string(i) + ".bias", &conv_bias_[i]);
  }
  p.emplace_back("head.weight", &head_weight_);
  p.emplace_back("head.bias", &head_bias_);
  return p;
}

ParamRefs Discriminator::parameters() {
  ParamRefs p;
  for (const auto& [name, t] : std::as_const(*this).parameters()) p.emplace_back(name, const_cast<Tensor*>(t));
  return p;
}

Var Discriminator::logits(Tape& tape, const Var& images, bool track) const {
  const Shape s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != config_.resolution || s[3] != config_.resolution)
    throw DimensionError("discriminator expects [N,1," + std::to_string(config_.resolution) + "," +
                         std::to_string(config_.resolution) + "], got " + shape_string(s));
  Var x = ops::conv2d(images, tape.parameter(in_weight_, track), 1, 0);
  x = ops::leaky_relu(ops::add_channel_bias(x, tape.parameter(in_bias_, track)), config_.leaky_slope);
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    x = ops::conv2d(x, tape.parameter(conv_[i], track), 2, 1);
    x = ops::leaky_relu(ops::add_channel_bias(x, tape.parameter(conv_bias_[i], track)), config_.leaky_slope);
  }
  x = ops::reshape(x, {s[0], static_cast<Index>(config_.channels.back()) * 16});
  return ops::dense(x, tape.parameter(head_weight_, track), tape.parameter(head_bias_, track));
}

Var Discriminator::forward(Tape& tape, const Var& images, bool track) const {
  return ops::sigmoid(logits(tape, images, track));
}

std::vector<double> Discriminator::probabilities(const std::vector<Tensor>& images) const {
  std::vector<double> out;
  const Index s = config_.resolution;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    Tensor batch(Shape{static_cast<Index>(end - start), 1, s, s});
    for (std::size_t i = start; i < end; ++i) {
      if (images[i].size() != s * s) throw DimensionError("discriminator input has shape " + shape_string(images[i].shape()));
      std::copy(images[i].data(), images[i].data() + s * s, batch.data() + static_cast<Index>(i - start) * s * s);
    }
    Tape tape;
    Var p = forward(tape, tape.constant(std::move(batch)), false);
    for (double v : p.value().values()) out.push_back(v);
  }
  return out;
}

}  // namespace mgan
