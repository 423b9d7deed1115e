#include "mgan/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mgan/image_io.hpp"
#include "mgan/rng.hpp"

namespace mgan {
namespace {

constexpr double kTissueBase = 0.38;
constexpr double kLesionGain = 0.35;
constexpr double kCalcificationGain = 0.45;
constexpr double kImplantLevel = 0.88;

// 3x5 bitmaps, row-major, top row first.
constexpr std::array<const char*, 5> kGlyphA{"010", "101", "111", "101", "101"};
constexpr std::array<const char*, 5> kGlyphB{"110", "101", "110", "101", "110"};

struct Ellipse {
  double cx, cy, ax, ay;  // normalised coords; ax in width units, ay in height units
  double level(double fx, double fy) const {
    const double dx = (fx - cx) / ax, dy = (fy - cy) / ay;
    return dx * dx + dy * dy;
  }
};

// Breast outline in the unmirrored (left-anchored) frame.
Ellipse breast_outline(const PhantomSpec& s) { return {0.0, 0.5, 0.95 * s.shape_scale, 0.22 + 0.24 * s.shape_scale}; }

double side_x(const PhantomSpec& s, double fx) { return s.side == Side::left ? fx : 1.0 - fx; }

struct Texture {
  std::array<double, 12> fx, fy, phase;
  explicit Texture(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "texture"));
    for (std::size_t i = 0; i < fx.size(); ++i) {
      const double freq = 3.0 + 7.0 * uniform01(rng);
      const double angle = 2.0 * std::numbers::pi * uniform01(rng);
      fx[i] = freq * std::cos(angle);
      fy[i] = freq * std::sin(angle);
      phase[i] = 2.0 * std::numbers::pi * uniform01(rng);
    }
  }
  // Roughly unit-variance band-limited field.
  double operator()(double u, double v) const {
    double s = 0;
    for (std::size_t i = 0; i < fx.size(); ++i) s += std::cos(2.0 * std::numbers::pi * (fx[i] * u + fy[i] * v) + phase[i]);
    return s * std::sqrt(2.0 / static_cast<double>(fx.size()));
  }
};

Index render_width(int size) { return std::max<Index>(1, std::lround(size * kPhantomAspect)); }

}  // namespace

void PhantomSpec::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(tissue_density)) throw ConfigError("tissue_density must lie in [0,1]");
  if (!(shape_scale >= 0.4 && shape_scale <= 1.0)) throw ConfigError("shape_scale must lie in [0.4,1]");
  if (lesion_present && !(unit(lesion_center_x) && unit(lesion_center_y) && unit(lesion_radius)))
    throw ConfigError("lesion coordinates must be normalised to [0,1]");
  if (calcification_count < 0) throw ConfigError("calcification_count must be non-negative");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"seed", s.seed},
       {"side", s.side == Side::left ? "left" : "right"},
       {"view_glyph", s.view_glyph == ViewGlyph::A ? "A" : "B"},
       {"tissue_density", s.tissue_density},
       {"shape_scale", s.shape_scale},
       {"lesion_present", s.lesion_present},
       {"lesion_center", {s.lesion_center_x, s.lesion_center_y}},
       {"lesion_radius", s.lesion_radius},
       {"calcification_count", s.calcification_count},
       {"implant_present", s.implant_present}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  s.seed = j.at("seed").get<std::uint64_t>();
  s.side = j.at("side").get<std::string>() == "right" ? Side::right : Side::left;
  s.view_glyph = j.at("view_glyph").get<std::string>() == "B" ? ViewGlyph::B : ViewGlyph::A;
  s.tissue_density = j.at("tissue_density").get<double>();
  s.shape_scale = j.at("shape_scale").get<double>();
  s.lesion_present = j.at("lesion_present").get<bool>();
  s.lesion_center_x = j.at("lesion_center").at(0).get<double>();
  s.lesion_center_y = j.at("lesion_center").at(1).get<double>();
  s.lesion_radius = j.at("lesion_radius").get<double>();
  s.calcification_count = j.at("calcification_count").get<int>();
  s.implant_present = j.at("implant_present").get<bool>();
}

Tensor phantom_region(const PhantomSpec& spec, int size) {
  const Index h = size, w = render_width(size);
  const Ellipse breast = breast_outline(spec);
  Tensor mask(Shape{1, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double fx = side_x(spec, (x + 0.5) / static_cast<double>(w)), fy = (y + 0.5) / static_cast<double>(h);
      mask[y * w + x] = breast.level(fx, fy) < 1.0 ? 1.0 : 0.0;
    }
  return mask;
}

Tensor render_phantom(const PhantomSpec& spec, int size) {
  if (size < 16) throw ConfigError("render_phantom: size must be >= 16");
  spec.validate();
  const Index h = size, w = render_width(size);
  const double aspect = static_cast<double>(w) / static_cast<double>(h);
  const Ellipse breast = breast_outline(spec);
  const Ellipse implant{0.0, 0.5, 0.45 * breast.ax, 0.55 * breast.ay};
  const Texture texture(spec.seed);
  Tensor img(Shape{1, h, w});
  const Tensor region = phantom_region(spec, size);

  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (region[y * w + x] == 0.0) continue;
      const double fx = side_x(spec, (x + 0.5) / static_cast<double>(w)), fy = (y + 0.5) / static_cast<double>(h);
      double v = kTissueBase + 0.15 * spec.tissue_density + 0.22 * spec.tissue_density * texture(fx * aspect, fy);
      if (spec.implant_present) {
        const double l = implant.level(fx, fy);
        if (l < 1.0) v = std::max(v, kImplantLevel * (1.0 - 0.15 * l));
      }
      if (spec.lesion_present) {
        // Isotropic bump in pixel-proportional units with compact support.
        const double dx = ((x + 0.5) / static_cast<double>(w) - spec.lesion_center_x) * aspect;
        const double dy = fy - spec.lesion_center_y;
        const double r2 = (dx * dx + dy * dy) / (spec.lesion_radius * spec.lesion_radius);
        if (r2 < 1.0) v += kLesionGain * (1.0 - r2) * (1.0 - r2);
      }
      img[y * w + x] = v;
    }

  if (spec.calcification_count > 0) {
    Rng rng(derive_seed(spec.seed, "calcification"));
    const Index dot = size >= 64 ? 2 : 1;
    for (int i = 0; i < spec.calcification_count; ++i) {
      // Rejection-sample a position inside the breast.
      for (int attempt = 0; attempt < 64; ++attempt) {
        const Index x = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(w)));
        const Index y = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(h)));
        if (region[y * w + x] == 0.0) continue;
        for (Index dy = 0; dy < dot; ++dy)
          for (Index dx = 0; dx < dot; ++dx)
            if (y + dy < h && x + dx < w && region[(y + dy) * w + x + dx] != 0.0) img[(y + dy) * w + x + dx] += kCalcificationGain;
        break;
      }
    }
  }

  const auto& glyph = spec.view_glyph == ViewGlyph::A ? kGlyphA : kGlyphB;
  const Index cell = std::max<Index>(1, h / 32);
  const Index gx0 = spec.side == Side::left ? w - 4 * cell : cell;
  const Index gy0 = cell;
  for (Index gy = 0; gy < 5; ++gy)
    for (Index gx = 0; gx < 3; ++gx) {
      if (glyph[static_cast<std::size_t>(gy)][gx] != '1') continue;
      for (Index cy = 0; cy < cell; ++cy)
        for (Index cx = 0; cx < cell; ++cx) {
          const Index px = gx0 + gx * cell + cx, py = gy0 + gy * cell + cy;
          if (px >= 0 && px < w && py < h) img[py * w + px] = 1.0;
        }
    }

  for (double& v : img.values()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

Tensor mirror_horizontal(const Tensor& image) {
  const Index h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) out[y * w + x] = image[y * w + (w - 1 - x)];
  return out;
}

Tensor resize_bilinear(const Tensor& image, Index out_h, Index out_w) {
  if (image.rank() != 3 || image.dim(0) != 1) throw DimensionError("resize expects [1,H,W], got " + shape_string(image.shape()));
  const Index in_h = image.dim(1), in_w = image.dim(2);
  if (in_h == out_h && in_w == out_w) return image.reshaped(image.shape());
  Tensor out(Shape{1, out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (Index y = 0; y < out_h; ++y) {
    const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const Index y0 = static_cast<Index>(std::floor(src_y));
    const Index y1 = std::min(y0 + 1, in_h - 1);
    const double wy = src_y - static_cast<double>(y0);
    for (Index x = 0; x < out_w; ++x) {
      const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const Index x0 = static_cast<Index>(std::floor(src_x));
      const Index x1 = std::min(x0 + 1, in_w - 1);
      const double wx = src_x - static_cast<double>(x0);
      const double top = image[y0 * in_w + x0] * (1 - wx) + image[y0 * in_w + x1] * wx;
      const double bottom = image[y1 * in_w + x0] * (1 - wx) + image[y1 * in_w + x1] * wx;
      out[y * out_w + x] = top * (1 - wy) + bottom * wy;
    }
  }
  return out;
}

Tensor preprocess(const Tensor& image, int target_h, Side side) {
  if (target_h < 8) throw ConfigError("preprocess: target height must be >= 8, got " + std::to_string(target_h));
  if (image.rank() != 3 || image.dim(0) != 1) throw DimensionError("preprocess expects [1,H,W], got " + shape_string(image.shape()));
  const Index in_h = image.dim(1), in_w = image.dim(2);
  const Index new_w = std::max<Index>(1, std::lround(static_cast<double>(in_w) * target_h / static_cast<double>(in_h)));
  if (new_w > target_h)
    throw DimensionError("preprocess: image is wider than tall after resizing (axis 2: " + std::to_string(new_w) + ")");
  Tensor resized = resize_bilinear(image, target_h, new_w);
  if (side == Side::right) resized = mirror_horizontal(resized);
  Tensor out(Shape{1, target_h, target_h});
  for (Index y = 0; y < target_h; ++y)
    for (Index x = 0; x < new_w; ++x) out[y * target_h + x] = std::clamp(resized[y * new_w + x], 0.0, 1.0);
  return out;
}

PhantomSpec sample_phantom_spec(std::uint64_t seed, const AttributeDistribution& dist) {
  Rng rng(derive_seed(seed, "attributes"));
  PhantomSpec s;
  s.seed = seed;
  s.side = uniform01(rng) < dist.right_probability ? Side::right : Side::left;
  s.view_glyph = uniform01(rng) < dist.glyph_b_probability ? ViewGlyph::B : ViewGlyph::A;
  s.tissue_density = uniform01(rng);
  s.shape_scale = 0.4 + 0.6 * uniform01(rng);
  s.lesion_present = uniform01(rng) < dist.lesion_prevalence;
  // Lesion drawn inside the breast outline regardless of presence so that
  // toggling lesion_present leaves every other attribute unchanged.
  const Ellipse breast = breast_outline(s);
  const double u = 0.15 + 0.5 * uniform01(rng), v = -0.55 + 1.1 * uniform01(rng);
  const double fx = u * breast.ax, fy = 0.5 + v * breast.ay * std::sqrt(std::max(0.0, 1.0 - u * u));
  s.lesion_center_x = std::clamp(s.side == Side::left ? fx : 1.0 - fx, 0.0, 1.0);
  s.lesion_center_y = std::clamp(fy, 0.0, 1.0);
  s.lesion_radius = 0.05 + 0.05 * uniform01(rng);
  s.calcification_count = uniform01(rng) < dist.calcification_probability
                              ? 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(dist.max_calcifications)))
                              : 0;
  s.implant_present = uniform01(rng) < dist.implant_prevalence;
  return s;
}

nlohmann::json manifest_to_json(const CorpusManifest& m) {
  auto items = [](const std::vector<CorpusItem>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& it : v) a.push_back({{"path", it.path}, {"spec", it.spec}});
    return a;
  };
  const auto& d = m.distribution;
  return {{"schema_version", CorpusManifest::kSchemaVersion},
          {"image_size", m.image_size},
          {"seed", m.seed},
          {"split_seed", m.split_seed},
          {"distribution",
           {{"right_probability", d.right_probability},
            {"glyph_b_probability", d.glyph_b_probability},
            {"lesion_prevalence", d.lesion_prevalence},
            {"implant_prevalence", d.implant_prevalence},
            {"calcification_probability", d.calcification_probability},
            {"max_calcifications", d.max_calcifications}}},
          {"train", items(m.train_items)},
          {"test", items(m.test_items)}};
}

CorpusManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != CorpusManifest::kSchemaVersion) throw FormatError("unsupported corpus manifest schema version");
  CorpusManifest m;
  m.image_size = j.at("image_size").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.split_seed = j.at("split_seed").get<std::uint64_t>();
  const auto& d = j.at("distribution");
  m.distribution = {d.at("right_probability"), d.at("glyph_b_probability"), d.at("lesion_prevalence"),
                    d.at("implant_prevalence"), d.at("calcification_probability"), d.at("max_calcifications")};
  for (const auto& it : j.at("train")) m.train_items.push_back({it.at("path"), it.at("spec").get<PhantomSpec>()});
  for (const auto& it : j.at("test")) m.test_items.push_back({it.at("path"), it.at("spec").get<PhantomSpec>()});
  return m;
}

Tensor corpus_image(const PhantomSpec& spec, int image_size) {
  return preprocess(render_phantom(spec, 2 * image_size), image_size, spec.side);
}

CorpusManifest build_corpus(const CorpusOptions& opt, const std::optional<std::filesystem::path>& out_dir) {
  if (opt.n < 10) throw ConfigError("build_corpus: n must be >= 10");
  if (!(opt.test_fraction > 0.0 && opt.test_fraction < 1.0)) throw ConfigError("build_corpus: test_fraction must lie in (0,1)");
  if (opt.image_size < 8) throw ConfigError("build_corpus: image_size must be >= 8");

  CorpusManifest m;
  m.image_size = opt.image_size;
  m.seed = opt.seed;
  m.split_seed = derive_seed(opt.seed, "split");
  m.distribution = opt.distribution;

  std::vector<PhantomSpec> specs;
  specs.reserve(static_cast<std::size_t>(opt.n));
  for (int i = 0; i < opt.n; ++i) specs.push_back(sample_phantom_spec(derive_seed(opt.seed, "phantom", static_cast<std::uint64_t>(i)), opt.distribution));

  std::vector<std::size_t> order(specs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(m.split_seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(split_rng, i)]);
  const auto n_test = static_cast<std::size_t>(std::lround(opt.n * opt.test_fraction));
  std::vector<bool> is_test(specs.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  char name[32];
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::snprintf(name, sizeof name, "%06zu.png", i);
    if (is_test[i])
      m.test_items.push_back({std::string("test/") + name, specs[i]});
    else
      m.train_items.push_back({std::string("train/") + name, specs[i]});
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir / "train");
    std::filesystem::create_directories(*out_dir / "test");
    for (const auto* split : {&m.train_items, &m.test_items})
      for (const auto& item : *split) write_png(*out_dir / item.path, corpus_image(item.spec, opt.image_size));
    std::ofstream os(*out_dir / "manifest.json");
    os << manifest_to_json(m).dump(1) << "\n";
  }
  return m;
}

CorpusManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw NotFoundError("no manifest.json in " + dir.string());
  return manifest_from_json(nlohmann::json::parse(is));
}

std::vector<Tensor> load_split(const std::filesystem::path& dir, const CorpusManifest& m, bool test_split) {
  std::vector<Tensor> out;
  for (const auto& item : test_split ? m.test_items : m.train_items) out.push_back(read_png(dir / item.path));
  return out;
}

}  // namespace mgan
