#include "mgan/generator.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "mgan/hash.hpp"
#include "mgan/rng.hpp"

namespace mgan {
namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = stddev * standard_normal(rng);
  return t;
}

Tensor row(const VectorXd& v) {
  Tensor t(Shape{1, v.size()});
  t.vector() = v;
  return t;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (dim_z < 1 || dim_w < 1) throw ConfigError("generator latent dimensions must be positive");
  if (mapping_depth < 1) throw ConfigError("mapping network needs at least one layer");
  if (channels.empty()) throw ConfigError("generator needs at least one synthesis block");
  for (int c : channels)
    if (c < 1) throw ConfigError("synthesis channel counts must be positive");
  if (!(w_mean_decay >= 0 && w_mean_decay < 1)) throw ConfigError("w_mean_decay must lie in [0,1)");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"dim_z", c.dim_z},       {"dim_w", c.dim_w},           {"mapping_depth", c.mapping_depth},
       {"channels", c.channels}, {"leaky_slope", c.leaky_slope}, {"w_mean_decay", c.w_mean_decay},
       {"hidden_activation", "leaky_relu"}, {"output_activation", "tanh_to_unit"}, {"upsampling", "nearest"}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c.dim_z = j.at("dim_z");
  c.dim_w = j.at("dim_w");
  c.mapping_depth = j.at("mapping_depth");
  c.channels = j.at("channels").get<std::vector<int>>();
  c.leaky_slope = j.value("leaky_slope", 0.2);
  c.w_mean_decay = j.value("w_mean_decay", 0.995);
}

LatentW LatentW::broadcast(const VectorXd& w, int num_blocks) {
  return LatentW{std::vector<VectorXd>(static_cast<std::size_t>(num_blocks), w)};
}

std::string block_name(int block) { return "block" + std::to_string(block); }

int block_index(const std::string& name, int num_blocks) {
  for (int i = 0; i < num_blocks; ++i)
    if (name == block_name(i)) return i;
  throw NotFoundError("unknown synthesis block '" + name + "'");
}

Generator::Generator(GeneratorConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(init_seed, "generator-init"));
  const double lrelu_gain = std::sqrt(2.0 / (1.0 + config_.leaky_slope * config_.leaky_slope));
  for (int i = 0; i < config_.mapping_depth; ++i) {
    const int in = i == 0 ? config_.dim_z : config_.dim_w;
    map_weight_.push_back(normal_tensor({in, config_.dim_w}, lrelu_gain / std::sqrt(in), rng));
    map_bias_.emplace_back(Shape{config_.dim_w});
  }
  const int c0 = config_.channels.front();
  const_input_ = normal_tensor({1, c0, 4, 4}, 1.0, rng);
  int in_c = c0;
  for (int c : config_.channels) {
    Block b;
    b.conv = normal_tensor({c, in_c, 3, 3}, lrelu_gain / std::sqrt(9.0 * in_c), rng);
    b.bias = Tensor(Shape{c});
    b.noise_gain = Tensor(Shape{c});
    b.style_weight = normal_tensor({config_.dim_w, 2 * c}, 0.5 / std::sqrt(config_.dim_w), rng);
    b.style_bias = Tensor(Shape{2 * c});
    blocks_.push_back(std::move(b));
    in_c = c;
  }
  out_weight_ = normal_tensor({1, in_c, 1, 1}, 1.0 / std::sqrt(in_c), rng);
  out_bias_ = Tensor(Shape{1});
  w_mean_ = VectorXd::Zero(config_.dim_w);
}

ParamRefs Generator::parameters() {
  ParamRefs p;
  for (const auto& [name, t] : std::as_const(*this).parameters()) p.emplace_back(name, const_cast<Tensor*>(t));
  return p;
}

std::vector<std::pair<std::string, const Tensor*>> Generator::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < map_weight_.size(); ++i) {
    out.emplace_back("mapping." + std::to_string(i) + ".weight", &map_weight_[i]);
    out.emplace_back("mapping." + std::to_string(i) + ".bias", &map_bias_[i]);
  }
  out.emplace_back("synthesis.const", &const_input_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "synthesis." + block_name(static_cast<int>(i)) + ".";
    out.emplace_back(prefix + "conv", &blocks_[i].conv);
    out.emplace_back(prefix + "bias", &blocks_[i].bias);
    out.emplace_back(prefix + "noise_gain", &blocks_[i].noise_gain);
    out.emplace_back(prefix + "style_weight", &blocks_[i].style_weight);
    out.emplace_back(prefix + "style_bias", &blocks_[i].style_bias);
  }
  out.emplace_back("synthesis.to_image.weight", &out_weight_);
  out.emplace_back("synthesis.to_image.bias", &out_bias_);
  return out;
}

Tensor* Generator::find_parameter(const std::string& name) {
  for (auto& [n, t] : parameters())
    if (n == name) return t;
  return nullptr;
}

Var Generator::map(Tape& tape, const Var& z, bool track) const {
  if (z.value().rank() != 2 || z.shape()[1] != config_.dim_z)
    throw DimensionError("mapping network expects z of shape [N," + std::to_string(config_.dim_z) + "], got " +
                         shape_string(z.shape()));
  Var x = z;
  for (std::size_t i = 0; i < map_weight_.size(); ++i) {
    x = ops::dense(x, tape.parameter(map_weight_[i], track), tape.parameter(map_bias_[i], track));
    x = ops::leaky_relu(x, config_.leaky_slope);
  }
  return x;
}

Var Generator::block_style(Tape& tape, int block, const Var& w, bool track) const {
  const Block& b = blocks_.at(static_cast<std::size_t>(block));
  return ops::dense(w, tape.parameter(b.style_weight, track), tape.parameter(b.style_bias, track));
}

Var Generator::synthesize(Tape& tape, const std::vector<Var>& styles, const std::vector<Tensor>& noise, bool track,
                          std::vector<Var>* block_outputs) const {
  const int L = config_.num_blocks();
  if (static_cast<int>(styles.size()) != L)
    throw DimensionError("synthesis expects " + std::to_string(L) + " style layers, got " + std::to_string(styles.size()));
  if (static_cast<int>(noise.size()) != L)
    throw DimensionError("synthesis expects " + std::to_string(L) + " noise maps, got " + std::to_string(noise.size()));
  const Index n = styles.front().shape()[0];
  Var x = ops::repeat_batch(tape.parameter(const_input_, track), n);
  for (int i = 0; i < L; ++i) {
    const Block& b = blocks_[static_cast<std::size_t>(i)];
    if (i > 0) x = ops::upsample2x(x);
    x = ops::conv2d(x, tape.parameter(b.conv, track), 1, 1);
    x = ops::add_channel_bias(x, tape.parameter(b.bias, track));
    x = ops::add_noise(x, noise[static_cast<std::size_t>(i)], tape.parameter(b.noise_gain, track));
    x = ops::leaky_relu(x, config_.leaky_slope);
    x = ops::adaptive_instance_norm(x, styles[static_cast<std::size_t>(i)]);
    if (block_outputs) block_outputs->push_back(x);
  }
  x = ops::conv2d(x, tape.parameter(out_weight_, track), 1, 0);
  x = ops::add_channel_bias(x, tape.parameter(out_bias_, track));
  return ops::affine(ops::tanh(x), 0.5, 0.5);
}

Var Generator::forward(Tape& tape, const Var& z, const std::vector<Tensor>& noise, bool track) const {
  Var w = map(tape, z, track);
  std::vector<Var> styles;
  for (int i = 0; i < config_.num_blocks(); ++i) styles.push_back(block_style(tape, i, w, track));
  return synthesize(tape, styles, noise, track);
}

VectorXd Generator::map_latent(const VectorXd& z) const {
  if (z.size() != config_.dim_z) throw DimensionError("z has length " + std::to_string(z.size()) + ", expected " + std::to_string(config_.dim_z));
  if (!z.allFinite()) throw NumericError("map_latent: z contains non-finite values");
  Tape tape;
  Var w = map(tape, tape.constant(row(z)), false);
  return w.value().vector();
}

StyleSet Generator::styles(const LatentW& w) const {
  if (w.size() != config_.num_blocks())
    throw DimensionError("LatentW has " + std::to_string(w.size()) + " layers, synthesis has " + std::to_string(config_.num_blocks()));
  StyleSet out;
  Tape tape;
  for (int i = 0; i < w.size(); ++i) {
    const VectorXd& wi = w.layers[static_cast<std::size_t>(i)];
    if (wi.size() != config_.dim_w) throw DimensionError("w layer " + std::to_string(i) + " has wrong length");
    out.layers.push_back(block_style(tape, i, tape.constant(row(wi)), false).value().vector());
  }
  return out;
}

Tensor Generator::synthesize(const LatentW& w, std::optional<std::uint64_t> noise_seed, ActivationCapture* capture) const {
  return synthesize_styles(styles(w), noise_seed, capture);
}

Tensor Generator::synthesize_styles(const StyleSet& styles, std::optional<std::uint64_t> noise_seed,
                                    ActivationCapture* capture) const {
  const int L = config_.num_blocks();
  if (static_cast<int>(styles.layers.size()) != L) throw DimensionError("style set does not match synthesis depth");
  Tape tape;
  std::vector<Var> style_vars;
  for (int i = 0; i < L; ++i) {
    const VectorXd& s = styles.layers[static_cast<std::size_t>(i)];
    if (s.size() != 2 * config_.channels[static_cast<std::size_t>(i)])
      throw DimensionError("style layer " + std::to_string(i) + " has length " + std::to_string(s.size()));
    style_vars.push_back(tape.constant(row(s)));
  }
  std::vector<Var> outputs;
  Var img = synthesize(tape, style_vars, make_noise(noise_seed), false, capture ? &outputs : nullptr);
  if (capture) {
    const int idx = block_index(capture->block_name, L);
    capture->activation = outputs[static_cast<std::size_t>(idx)].value();
    capture->styles = styles;
    capture->blocks.clear();
    for (const Var& o : outputs) capture->blocks.push_back(o.value());
  }
  const Index s = config_.resolution();
  return img.value().reshaped(Shape{1, s, s});
}

std::vector<Tensor> Generator::make_noise(const std::vector<std::uint64_t>& noise_seeds) const {
  std::vector<Tensor> maps;
  const auto n = static_cast<Index>(noise_seeds.size());
  for (int i = 0; i < config_.num_blocks(); ++i) {
    const Index r = config_.block_resolution(i);
    Tensor t(Shape{n, 1, r, r});
    for (Index b = 0; b < n; ++b) {
      Rng rng(derive_seed(noise_seeds[static_cast<std::size_t>(b)], "noise", static_cast<std::uint64_t>(i)));
      for (Index k = 0; k < r * r; ++k) t[b * r * r + k] = standard_normal(rng);
    }
    maps.push_back(std::move(t));
  }
  return maps;
}

std::vector<Tensor> Generator::make_noise(std::optional<std::uint64_t> noise_seed) const {
  return make_noise(std::vector<std::uint64_t>{noise_seed ? *noise_seed : std::random_device{}()});
}

void Generator::set_w_mean(const VectorXd& mean, std::int64_t count) {
  if (mean.size() != config_.dim_w || !mean.allFinite()) throw NumericError("w_mean must be finite with length dim_w");
  w_mean_ = mean;
  w_mean_count_ = count;
}

void Generator::accumulate_mean(const VectorXd& w) {
  ++w_mean_count_;
  w_mean_ += (w - w_mean_) / static_cast<double>(w_mean_count_);
}

void Generator::ema_update_mean(const VectorXd& batch_mean, std::int64_t batch_size) {
  if (w_mean_count_ == 0)
    w_mean_ = batch_mean;
  else
    w_mean_ = batch_mean + config_.w_mean_decay * (w_mean_ - batch_mean);
  w_mean_count_ += batch_size;
}

void Generator::estimate_w_mean(int n, std::uint64_t seed) {
  w_mean_.setZero();
  w_mean_count_ = 0;
  for (int i = 0; i < n; ++i) accumulate_mean(map_latent(sample_z(config_.dim_z, derive_seed(seed, "w-mean", static_cast<std::uint64_t>(i)))));
}

VectorXd Generator::truncate(const VectorXd& w, double psi) const {
  if (psi == 1.0 && w.size() == config_.dim_w) return w;
  if (w_mean_count_ < kMinMeanSamples)
    throw StateError("truncation needs w_mean estimated from >= 1000 samples (have " + std::to_string(w_mean_count_) + ")");
  if (w.size() != config_.dim_w) throw DimensionError("truncate: w has wrong length");
  return w_mean_ + psi * (w - w_mean_);
}

std::string Generator::checkpoint_id() const {
  std::string bytes;
  for (const auto& [name, t] : parameters()) {
    bytes += name;
    for (double v : t->values()) {
      const float f = static_cast<float>(v);
      bytes.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  return short_id(bytes);
}

std::string LatentRecord::id() const {
  std::string key = checkpoint_id + ":" + std::to_string(seed) + ":" + std::to_string(noise_seed) + ":";
  key.append(reinterpret_cast<const char*>(&psi), sizeof psi);
  key.append(reinterpret_cast<const char*>(w.data()), static_cast<std::size_t>(w.size()) * sizeof(double));
  return short_id(key);
}

nlohmann::json to_json(const LatentRecord& r) {
  return {{"checkpoint_id", r.checkpoint_id},
          {"seed", r.seed},
          {"psi", r.psi},
          {"noise_seed", r.noise_seed},
          {"w", std::vector<double>(r.w.data(), r.w.data() + r.w.size())}};
}

LatentRecord latent_record_from_json(const nlohmann::json& j) {
  LatentRecord r;
  r.checkpoint_id = j.at("checkpoint_id");
  r.seed = j.at("seed");
  r.psi = j.at("psi");
  r.noise_seed = j.at("noise_seed");
  const auto w = j.at("w").get<std::vector<double>>();
  r.w = Eigen::Map<const VectorXd>(w.data(), static_cast<Index>(w.size()));
  return r;
}

LatentRecord make_latent_record(const Generator& g, std::uint64_t sample_seed, double psi) {
  LatentRecord r;
  r.checkpoint_id = g.checkpoint_id();
  r.seed = sample_seed;
  r.psi = psi;
  r.w = g.truncate(g.map_latent(sample_z(g.config().dim_z, sample_seed)), psi);
  r.noise_seed = sample_seed;
  return r;
}

Tensor render(const Generator& g, const LatentRecord& record) {
  return g.synthesize(LatentW::broadcast(record.w, g.config().num_blocks()), record.noise_seed);
}

SampleGrid sample_grid(const Generator& g, int n, double psi, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_grid: n must be >= 1");
  SampleGrid grid;
  grid.untrained = g.w_mean_count() == 0;
  for (int i = 0; i < n; ++i) {
    grid.records.push_back(make_latent_record(g, derive_seed(seed, "grid", static_cast<std::uint64_t>(i)), psi));
    grid.images.push_back(render(g, grid.records.back()));
  }
  return grid;
}

VectorXd sample_z(int dim_z, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "z"));
  VectorXd z(dim_z);
  for (int i = 0; i < dim_z; ++i) z[i] = standard_normal(rng);
  return z;
}

}  // namespace mgan
