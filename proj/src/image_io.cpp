#include "crowdmesh/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

#include "crowdmesh/errors.hpp"

namespace crowdmesh {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void check_image(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(2) != 3 || image.scalar_type() != torch::kFloat32) {
    throw ShapeError("expected an H x W x 3 float32 image");
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  check_image(image);
  const auto img = image.contiguous();
  const auto H = static_cast<std::uint32_t>(img.size(0));
  const auto W = static_cast<std::uint32_t>(img.size(1));
  std::vector<png_byte> rows(static_cast<size_t>(H) * W * 3);
  const float* src = img.data_ptr<float>();
  for (size_t i = 0; i < rows.size(); ++i) {
    rows[i] = static_cast<png_byte>(std::lround(std::clamp(src[i], 0.0f, 1.0f) * 255.0f));
  }

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t r = 0; r < H; ++r) png_write_row(png, rows.data() + static_cast<size_t>(r) * W * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

torch::Tensor read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto W = png_get_image_width(png, info);
  const auto H = png_get_image_height(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<size_t>(W) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG layout in " + path.string());
  }
  pixels.resize(static_cast<size_t>(H) * rowbytes);
  rows.resize(H);
  for (png_uint_32 r = 0; r < H; ++r) rows[r] = pixels.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  auto out = torch::empty({static_cast<std::int64_t>(H), static_cast<std::int64_t>(W), 3},
                          torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (size_t i = 0; i < pixels.size(); ++i) dst[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

void draw_disc(torch::Tensor& image, double x, double y, double radius, const Rgb& color) {
  check_image(image);
  auto acc = image.accessor<float, 3>();
  const auto H = image.size(0), W = image.size(1);
  const auto r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(y - radius)));
  const auto r1 = std::min<std::int64_t>(H - 1, static_cast<std::int64_t>(std::ceil(y + radius)));
  const auto c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(x - radius)));
  const auto c1 = std::min<std::int64_t>(W - 1, static_cast<std::int64_t>(std::ceil(x + radius)));
  for (auto r = r0; r <= r1; ++r) {
    for (auto c = c0; c <= c1; ++c) {
      const double dx = c + 0.5 - x, dy = r + 0.5 - y;
      if (dx * dx + dy * dy <= radius * radius) {
        for (int k = 0; k < 3; ++k) acc[r][c][k] = color[static_cast<size_t>(k)];
      }
    }
  }
}

void draw_line(torch::Tensor& image, double x0, double y0, double x1, double y1,
               const Rgb& color, double width) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    draw_disc(image, x0 + t * (x1 - x0), y0 + t * (y1 - y0), std::max(0.5 * width, 0.75), color);
  }
}

void tint_mask(torch::Tensor& image, const torch::Tensor& mask, const Rgb& color, float alpha) {
  check_image(image);
  if (mask.dim() != 2 || mask.size(0) != image.size(0) || mask.size(1) != image.size(1)) {
    throw ShapeError("mask does not match the image");
  }
  const auto m = mask.to(torch::kUInt8).contiguous();
  auto acc = image.accessor<float, 3>();
  auto mk = m.accessor<std::uint8_t, 2>();
  for (std::int64_t r = 0; r < image.size(0); ++r) {
    for (std::int64_t c = 0; c < image.size(1); ++c) {
      if (!mk[r][c]) continue;
      for (int k = 0; k < 3; ++k) {
        acc[r][c][k] = (1.0f - alpha) * acc[r][c][k] + alpha * color[static_cast<size_t>(k)];
      }
    }
  }
}

}  // namespace crowdmesh
