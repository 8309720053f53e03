#include "lap/io/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "lap/errors.hpp"

namespace lap::io {
namespace {

static_assert(std::endian::native == std::endian::little, "raster files assume a little-endian host");

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr char kDepthMagic[4] = {'L', 'A', 'P', 'D'};

void check_image(const char* what, const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw ShapeError(std::string(what) + ": expected [1|3,H,W], got " + shape_str(t.shape()));
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor& image) {
  check_image("write_png", image);
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  std::vector<png_byte> row(static_cast<std::size_t>(w * c));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image.at(ch, y, x), 0.0, 1.0);
        row[static_cast<std::size_t>(x * c + ch)] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png_levels(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  Tensor out;
  std::vector<png_byte> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  const int keep = (channels >= 3) ? 3 : 1;
  buf.resize(static_cast<std::size_t>(w) * channels);
  out = Tensor({keep, h, w});
  for (int y = 0; y < h; ++y) {
    png_read_row(png, buf.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < keep; ++ch) out.at(ch, y, x) = buf[static_cast<std::size_t>(x * channels + ch)];
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

Tensor read_png(const std::filesystem::path& path) {
  Tensor t = read_png_levels(path);
  for (double& v : t.data()) v /= 255.0;
  return t;
}

void write_normals_png(const std::filesystem::path& path, const Tensor& normals) {
  if (normals.rank() != 3 || normals.dim(0) != 3) throw ShapeError("write_normals_png: expected [3,H,W]");
  Tensor mapped = normals;
  for (double& v : mapped.data()) v = (v + 1.0) * 0.5;
  write_png(path, mapped);
}

void write_depth(const std::filesystem::path& path, const Tensor& depth) {
  if (depth.rank() < 2 || (depth.rank() == 3 && depth.dim(0) != 1)) {
    throw ShapeError("write_depth: expected [H,W] or [1,H,W], got " + shape_str(depth.shape()));
  }
  const auto h = static_cast<std::uint32_t>(depth.dim(-2));
  const auto w = static_cast<std::uint32_t>(depth.dim(-1));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  const std::uint32_t header[3] = {h, w, 0};
  os.write(kDepthMagic, 4);
  os.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> values(depth.numel());
  std::transform(depth.data().begin(), depth.data().end(), values.begin(), [](double v) { return static_cast<float>(v); });
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!os) throw IoError("short write to " + path.string());
}

Tensor read_depth(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  std::uint32_t header[3];
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!is || std::memcmp(magic, kDepthMagic, 4) != 0) throw IoError(path.string() + ": not a LAPD depth raster");
  if (header[0] == 0 || header[1] == 0) throw IoError(path.string() + ": empty depth raster");
  std::vector<float> values(static_cast<std::size_t>(header[0]) * header[1]);
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(values.size() * sizeof(float))) {
    throw IoError(path.string() + ": truncated depth raster");
  }
  Tensor out({1, static_cast<int>(header[0]), static_cast<int>(header[1])});
  std::copy(values.begin(), values.end(), out.data().begin());
  return out;
}

}  // namespace lap::io
