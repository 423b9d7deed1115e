#include "mgan/pipeline.hpp"

#include <bit>

#include "mgan/image_io.hpp"
#include "mgan/rng.hpp"

namespace mgan {

std::vector<int> default_channels(int resolution) {
  if (resolution < 8 || !std::has_single_bit(static_cast<unsigned>(resolution)))
    throw ConfigError("resolution must be a power of two >= 8, got " + std::to_string(resolution));
  const int blocks = std::countr_zero(static_cast<unsigned>(resolution)) - 1;  // 4 -> 1 block
  const std::vector<int> widths{4, 8, 16, 32, 32, 32, 32};
  std::vector<int> out;
  for (int i = blocks - 1; i >= 0; --i) out.push_back(widths[static_cast<std::size_t>(std::min(i, 6))]);
  return out;
}

GeneratorConfig generator_config_for(int resolution) {
  GeneratorConfig c;
  c.channels = default_channels(resolution);
  return c;
}

CorpusImages corpus_images(const CorpusManifest& manifest, const std::optional<std::filesystem::path>& dir) {
  CorpusImages out;
  if (dir) {
    out.train = load_split(*dir, manifest, false);
    out.test = load_split(*dir, manifest, true);
    return out;
  }
  for (const auto& it : manifest.train_items) out.train.push_back(quantize8(corpus_image(it.spec, manifest.image_size)));
  for (const auto& it : manifest.test_items) out.test.push_back(quantize8(corpus_image(it.spec, manifest.image_size)));
  return out;
}

ModelBundle new_training_bundle(int resolution, const TrainConfig& config) {
  config.validate();
  ModelBundle b{Generator(generator_config_for(resolution), derive_seed(config.seed, "init-g")), {}, {}, {}, {}, {}, nlohmann::json::object(), {}};
  b.discriminator.emplace(DiscriminatorConfig::for_resolution(resolution), derive_seed(config.seed, "init-d"));
  b.train_config = config;
  TrainerState st;
  st.opt_g.learning_rate = config.lr_g;
  st.opt_d.learning_rate = config.lr_d;
  for (auto* o : {&st.opt_g, &st.opt_d}) {
    o->beta1 = config.beta1;
    o->beta2 = config.beta2;
  }
  b.trainer_state = st;
  return b;
}

void train_bundle(ModelBundle& bundle, const CorpusImages& images, std::int64_t steps, const MetricsSink& on_metrics,
                  const std::optional<std::filesystem::path>& checkpoint) {
  if (!bundle.discriminator || !bundle.train_config || !bundle.trainer_state)
    throw StateError("checkpoint lacks the discriminator or trainer state needed to train");
  Trainer trainer(bundle.generator, *bundle.discriminator, *bundle.train_config, images.train, images.test, *bundle.trainer_state);
  auto refresh = [&](const Trainer& t) {
    bundle.generator = t.generator();
    bundle.discriminator = t.discriminator();
    bundle.trainer_state = t.state();
    bundle.basis.reset();  // fitted on the previous generator
    bundle.clusters.reset();
  };
  trainer.run(steps, on_metrics, [&](const Trainer& t) {
    refresh(t);
    if (checkpoint) save_bundle(*checkpoint, bundle);
  });
  refresh(trainer);
}

}  // namespace mgan
