#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "shapegan/tensor.hpp"

// Binary PPM (P6) for 3-channel images and PGM (P5) for 1-channel masks,
// maxval 255. Values in [0, 1] are quantized by rounding to the nearest level.
namespace shapegan::netpbm {

std::string encode(const Tensor& image);  // 1 x H x W -> P5, 3 x H x W -> P6
Tensor decode(std::string_view bytes);

void write_image(const std::filesystem::path& path, const Tensor& image);
Tensor read_image(const std::filesystem::path& path);

// Rounds every value to the nearest multiple of 1/255 (the stored form).
Tensor quantize(const Tensor& image);

}  // namespace shapegan::netpbm
