#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgan/tensor.hpp"

namespace mgan {

/// 8-bit grayscale PNG encoding of a [1,H,W] (or [H,W]) tensor with values in [0,1].
std::vector<unsigned char> encode_png(const Tensor& image);
Tensor decode_png(const std::vector<unsigned char>& bytes);

void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

/// Values the 8-bit encoding maps `image` to; idempotent.
Tensor quantize8(const Tensor& image);

}  // namespace mgan
