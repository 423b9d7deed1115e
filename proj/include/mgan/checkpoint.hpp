#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mgan/discriminator.hpp"
#include "mgan/generator.hpp"
#include "mgan/global_edit.hpp"
#include "mgan/local_edit.hpp"
#include "mgan/training.hpp"

namespace mgan {

constexpr std::uint32_t kCheckpointVersion = 1;

struct Section {
  std::string name;
  std::string payload;  // raw bytes
};

/// "MGAN" | u32 version | u64 metadata length | metadata JSON | u32 section count |
/// per section: u32 name length, name, u64 payload length, payload. Integers are little-endian.
struct CheckpointContainer {
  std::uint32_t version = kCheckpointVersion;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<Section> sections;

  const Section* find(const std::string& name) const;
  void put(Section s);
};

/// SHA-256 over every section's name and payload, in order.
std::string sections_digest(const std::vector<Section>& sections);

std::string serialize_container(const CheckpointContainer& c);  // stamps metadata["digest"]
CheckpointContainer parse_container(const std::string& bytes);
/// Writes to a sibling temp file, then renames over `path`.
void save_container(const std::filesystem::path& path, const CheckpointContainer& c);
CheckpointContainer load_container(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
/// u32 count, then per tensor: u32 name length, name, u32 ndim, u64 dims, f32 values.
std::string encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(const std::string& payload);

/// A trained model plus whatever has been fitted on top of it.
struct ModelBundle {
  Generator generator;
  std::optional<Discriminator> discriminator;
  std::optional<TrainConfig> train_config;
  std::optional<TrainerState> trainer_state;
  std::optional<EditBasis> basis;
  std::optional<ClusterModel> clusters;
  /// Free-form extra metadata (corpus manifest path, image size, ...).
  nlohmann::json info = nlohmann::json::object();
  /// Sections this build does not understand, kept for re-saving.
  std::vector<Section> unknown_sections;
};

CheckpointContainer to_container(const ModelBundle& bundle);
ModelBundle from_container(const CheckpointContainer& c);

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace mgan
