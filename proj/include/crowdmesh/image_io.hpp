#pragma once

// PNG read/write and a few drawing helpers for overlays.
// Images are H x W x 3 float32 tensors with values in [0, 1].

#include <array>
#include <filesystem>

#include <torch/torch.h>

namespace crowdmesh {

using Rgb = std::array<float, 3>;

void write_png(const std::filesystem::path& path, const torch::Tensor& image);
/// Reads 8-bit gray/RGB/RGBA PNGs; alpha is dropped. Throws IoError.
torch::Tensor read_png(const std::filesystem::path& path);

void draw_disc(torch::Tensor& image, double x, double y, double radius, const Rgb& color);
void draw_line(torch::Tensor& image, double x0, double y0, double x1, double y1,
               const Rgb& color, double width = 1.0);
/// Alpha-blends `color` wherever mask (H x W, nonzero) is set.
void tint_mask(torch::Tensor& image, const torch::Tensor& mask, const Rgb& color, float alpha);

}  // namespace crowdmesh
