#pragma once

#include <filesystem>

#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Images are Tensors: RGB (3, H, W) or grayscale (H, W), values in [0, 1].
// PNG files are 8-bit; quantization on write is round(v * 255).

void write_png_rgb(const std::filesystem::path& path, const Tensor& image);
void write_png_gray(const std::filesystem::path& path, const Tensor& image);

Tensor read_png_rgb(const std::filesystem::path& path);
Tensor read_png_gray(const std::filesystem::path& path);

}  // namespace motiondiff
