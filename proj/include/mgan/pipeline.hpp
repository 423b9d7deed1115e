#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "mgan/checkpoint.hpp"
#include "mgan/phantom.hpp"

namespace mgan {

/// Synthesis widths for a square output of `resolution` (a power of two >= 8).
std::vector<int> default_channels(int resolution);
GeneratorConfig generator_config_for(int resolution);

struct CorpusImages {
  std::vector<Tensor> train;
  std::vector<Tensor> test;
};

/// Reads the PNGs from `dir`, or renders them from the manifest when no directory is given.
CorpusImages corpus_images(const CorpusManifest& manifest, const std::optional<std::filesystem::path>& dir = std::nullopt);

/// Freshly initialized generator and discriminator for `resolution`, seeded from config.seed.
ModelBundle new_training_bundle(int resolution, const TrainConfig& config);

using MetricsSink = std::function<void(const MetricsRecord&)>;

/// Continues training `bundle` for `steps` steps from its stored trainer state.
/// At every checkpoint cadence the bundle is refreshed and, if `checkpoint` is set, saved there.
void train_bundle(ModelBundle& bundle, const CorpusImages& images, std::int64_t steps, const MetricsSink& on_metrics = {},
                  const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

}  // namespace mgan
