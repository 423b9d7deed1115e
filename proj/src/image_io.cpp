#include "mgan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mgan {
namespace {

std::pair<Index, Index> image_dims(const Tensor& image) {
  if (image.rank() == 3 && image.dim(0) == 1) return {image.dim(1), image.dim(2)};
  if (image.rank() == 2) return {image.dim(0), image.dim(1)};
  throw DimensionError("PNG encoding expects a [1,H,W] or [H,W] tensor, got " + shape_string(image.shape()));
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct ReadCursor {
  const std::vector<unsigned char>* bytes;
  std::size_t pos;
};

void read_fn(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

void write_fn(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_fn(png_structp) {}

[[noreturn]] void error_fn(png_structp, png_const_charp msg) { throw FormatError(std::string("PNG: ") + msg); }
void warning_fn(png_structp, png_const_charp) {}

}  // namespace

std::vector<unsigned char> encode_png(const Tensor& image) {
  const auto [h, w] = image_dims(image);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(h * w));
  for (Index i = 0; i < h * w; ++i) pixels[static_cast<std::size_t>(i)] = to_byte(image[i]);

  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, write_fn, flush_fn);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (Index y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Tensor decode_png(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_fn, warning_fn);
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{&bytes, 0};
  Tensor image;
  try {
    png_set_read_fn(png, &cursor, read_fn);
    png_read_info(png, info);
    const auto w = static_cast<Index>(png_get_image_width(png, info));
    const auto h = static_cast<Index>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w)) throw FormatError("PNG: unsupported pixel layout");
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    image = Tensor(Shape{1, h, w});
    for (Index y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (Index x = 0; x < w; ++x) image[y * w + x] = row[static_cast<std::size_t>(x)] / 255.0;
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_png(image);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NotFoundError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

Tensor quantize8(const Tensor& image) {
  Tensor out(image.shape());
  for (Index i = 0; i < image.size(); ++i) out[i] = to_byte(image[i]) / 255.0;
  return out;
}

}  // namespace mgan
