// SPDX-License-Identifier: Apache-2.0

#include "nca/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include <jpeglib.h>
#include <png.h>
#include <tiffio.h>

#include "nca/error.hpp"

namespace nca {

namespace {

enum class Format { kPng, kJpeg, kTiff, kUnknown };

Format sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open image " + path.string());
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto got = in.gcount();
  if (got >= 8 && png_sig_cmp(head.data(), 0, 8) == 0) return Format::kPng;
  if (got >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return Format::kJpeg;
  if (got >= 4 && ((head[0] == 'I' && head[1] == 'I' && head[2] == 42 && head[3] == 0) ||
                   (head[0] == 'M' && head[1] == 'M' && head[2] == 0 && head[3] == 42)))
    return Format::kTiff;
  return Format::kUnknown;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

Image decode_png(const std::filesystem::path& path) {
  File file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kDecode, "libpng initialisation failed for " + path.string());
  }
  Image image;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kDecode, "corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + stride * r;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  image = Image(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int k = 0; k < 3; ++k)
        image.at(r, c, k) = static_cast<float>(buffer[stride * r + static_cast<std::size_t>(c) * 3 + k]) / 255.0f;
  return image;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr info) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(info->err);
  std::longjmp(mgr->jump, 1);
}

Image decode_jpeg(const std::filesystem::path& path) {
  File file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> buffer;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::kDecode, "corrupt JPEG: " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int width = static_cast<int>(cinfo.output_width);
  const int height = static_cast<int>(cinfo.output_height);
  const std::size_t stride = static_cast<std::size_t>(width) * 3;
  buffer.resize(stride * static_cast<std::size_t>(height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buffer.data() + stride * cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);

  Image image(height, width);
  for (std::size_t k = 0; k < buffer.size(); ++k) image.rgb[k] = static_cast<float>(buffer[k]) / 255.0f;
  return image;
}

Image decode_tiff(const std::filesystem::path& path) {
  TIFFSetWarningHandler(nullptr);
  TIFFSetErrorHandler(nullptr);
  std::unique_ptr<TIFF, void (*)(TIFF*)> tif(TIFFOpen(path.c_str(), "r"), TIFFClose);
  if (!tif) throw Error(ErrorCode::kDecode, "corrupt TIFF: " + path.string());
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &width);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &height);
  if (width == 0 || height == 0) throw Error(ErrorCode::kDecode, "empty TIFF: " + path.string());
  std::vector<std::uint32_t> raster(static_cast<std::size_t>(width) * height);
  if (!TIFFReadRGBAImageOriented(tif.get(), width, height, raster.data(), ORIENTATION_TOPLEFT, 0))
    throw Error(ErrorCode::kDecode, "corrupt TIFF: " + path.string());
  Image image(static_cast<int>(height), static_cast<int>(width));
  for (std::size_t p = 0; p < raster.size(); ++p) {
    image.rgb[p * 3 + 0] = static_cast<float>(TIFFGetR(raster[p])) / 255.0f;
    image.rgb[p * 3 + 1] = static_cast<float>(TIFFGetG(raster[p])) / 255.0f;
    image.rgb[p * 3 + 2] = static_cast<float>(TIFFGetB(raster[p])) / 255.0f;
  }
  return image;
}

void write_png(const std::filesystem::path& path, int height, int width, int color_type, int channels,
               const std::uint8_t* pixels) {
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng initialisation failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(r) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image decode_image(const std::filesystem::path& path) {
  switch (sniff(path)) {
    case Format::kPng: return decode_png(path);
    case Format::kJpeg: return decode_jpeg(path);
    case Format::kTiff: return decode_tiff(path);
    case Format::kUnknown: break;
  }
  throw Error(ErrorCode::kUnsupportedFormat, "not a PNG, JPEG or TIFF raster: " + path.string());
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.height < 1 || image.width < 1 || height < 1 || width < 1)
    throw Error(ErrorCode::kInvalidArgument, "resize_bilinear: empty image or target");
  if (image.height == height && image.width == width) return image;

  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
      double src = (d + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      const int hi = std::min(lo + 1, in - 1);
      t[static_cast<std::size_t>(d)] = Tap{lo, hi, src - lo};
    }
    return t;
  };
  const auto ty = taps(image.height, height);
  const auto tx = taps(image.width, width);

  Image out(height, width);
  for (int r = 0; r < height; ++r) {
    const Tap& y = ty[static_cast<std::size_t>(r)];
    for (int c = 0; c < width; ++c) {
      const Tap& x = tx[static_cast<std::size_t>(c)];
      for (int k = 0; k < 3; ++k) {
        // Difference form: equal corners reproduce their value exactly.
        const double a = image.at(y.lo, x.lo, k);
        const double b = image.at(y.lo, x.hi, k);
        const double cc = image.at(y.hi, x.lo, k);
        const double d = image.at(y.hi, x.hi, k);
        const double top = a + x.frac * (b - a);
        const double bottom = cc + x.frac * (d - cc);
        out.at(r, c, k) = static_cast<float>(top + y.frac * (bottom - top));
      }
    }
  }
  return out;
}

Image load_image_64(const std::filesystem::path& path) {
  return resize_bilinear(decode_image(path), kDomainSize, kDomainSize);
}

void write_png_rgb(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.rgb.size());
  for (std::size_t k = 0; k < bytes.size(); ++k)
    bytes[k] = static_cast<std::uint8_t>(std::lround(std::clamp(image.rgb[k], 0.0f, 1.0f) * 255.0f));
  write_png(path, image.height, image.width, PNG_COLOR_TYPE_RGB, 3, bytes.data());
}

void write_png_gray(const std::filesystem::path& path, int height, int width,
                    const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width)
    throw Error(ErrorCode::kInvalidArgument, "write_png_gray: pixel count does not match size");
  write_png(path, height, width, PNG_COLOR_TYPE_GRAY, 1, pixels.data());
}

}  // namespace nca
