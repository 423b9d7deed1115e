#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mgan/tensor.hpp"

namespace mgan {

enum class Side { left, right };
/// Corner label standing in for the two standard radiographic views.
enum class ViewGlyph { A, B };

/// Attributes of one synthetic phantom radiograph. Coordinates are
/// normalised to [0,1] of the rendered image; lesion fields are ignored
/// unless lesion_present.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Side side = Side::left;
  ViewGlyph view_glyph = ViewGlyph::A;
  double tissue_density = 0.5;
  double shape_scale = 0.7;
  bool lesion_present = false;
  double lesion_center_x = 0.5;
  double lesion_center_y = 0.5;
  double lesion_radius = 0.06;
  int calcification_count = 0;
  bool implant_present = false;

  void validate() const;
  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// Width-to-height ratio of raw renders.
inline constexpr double kPhantomAspect = 0.75;

/// Deterministic render of `spec` as a [1, size, round(size*aspect)] image in [0,1].
Tensor render_phantom(const PhantomSpec& spec, int size);

/// Breast-region mask of the raw render (1 inside, 0 outside), same shape.
Tensor phantom_region(const PhantomSpec& spec, int size);

/// Mirrors a [1,H,W] image along its vertical axis.
Tensor mirror_horizontal(const Tensor& image);

/// Bilinear (half-pixel-centre) resize of a [1,H,W] image.
Tensor resize_bilinear(const Tensor& image, Index out_h, Index out_w);

/// Height-normalises to target_h, mirrors right-sided images so every breast
/// sits on the left edge, then pads with zero columns on the right to a square.
Tensor preprocess(const Tensor& image, int target_h, Side side);

struct AttributeDistribution {
  double right_probability = 0.5;
  double glyph_b_probability = 0.5;
  double lesion_prevalence = 0.30;
  double implant_prevalence = 0.10;
  double calcification_probability = 0.35;
  int max_calcifications = 6;
};

PhantomSpec sample_phantom_spec(std::uint64_t seed, const AttributeDistribution& dist = {});

struct CorpusItem {
  std::string path;  // relative to the corpus directory
  PhantomSpec spec;
};

struct CorpusManifest {
  static constexpr int kSchemaVersion = 1;
  std::vector<CorpusItem> train_items;
  std::vector<CorpusItem> test_items;
  int image_size = 64;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  AttributeDistribution distribution;

  std::size_t total() const { return train_items.size() + test_items.size(); }
};

nlohmann::json manifest_to_json(const CorpusManifest& m);
CorpusManifest manifest_from_json(const nlohmann::json& j);

struct CorpusOptions {
  int n = 1000;
  int image_size = 64;
  double test_fraction = 10015.0 / 162988.0;
  std::uint64_t seed = 1;
  AttributeDistribution distribution;
};

/// Samples specs and splits them. When `out_dir` is set, renders every image
/// through preprocess() to PNG and writes manifest.json there.
CorpusManifest build_corpus(const CorpusOptions& options, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

CorpusManifest load_manifest(const std::filesystem::path& dir);

/// The preprocessed square image for one corpus item, rendered from its spec.
Tensor corpus_image(const PhantomSpec& spec, int image_size);

/// Loads the PNGs for one split of a corpus directory.
std::vector<Tensor> load_split(const std::filesystem::path& dir, const CorpusManifest& m, bool test_split);

}  // namespace mgan
