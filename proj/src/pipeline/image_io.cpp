#include "pictraits/pipeline/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace pictraits::pipeline {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

imagefeat::RgbImage from_rgb8(const std::vector<unsigned char>& data, Eigen::Index width,
                              Eigen::Index height) {
  imagefeat::RgbImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(width * height, 3);
  for (Eigen::Index i = 0; i < width * height; ++i) {
    for (int c = 0; c < 3; ++c) {
      img.pixels(i, c) = static_cast<Scalar>(data[static_cast<std::size_t>(i) * 3 + c]) / 255.0;
    }
  }
  return img;
}

imagefeat::RgbImage read_png_file(std::FILE* fp, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ValidationError("png: allocation failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ValidationError("png: allocation failed for " + path);
  }
  std::vector<unsigned char> data;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("png: decode failed for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<std::size_t>(width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("png: unexpected row layout in " + path);
  }
  data.resize(static_cast<std::size_t>(width) * height * 3);
  row_ptrs.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    row_ptrs[y] = data.data() + static_cast<std::size_t>(y) * rowbytes;
  }
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_rgb8(data, static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(height));
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

imagefeat::RgbImage read_jpeg_file(std::FILE* fp, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ValidationError("jpeg: decode failed for " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const Eigen::Index width = cinfo.output_width;
  const Eigen::Index height = cinfo.output_height;
  std::vector<unsigned char> data(static_cast<std::size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = data.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(data, width, height);
}

}  // namespace

imagefeat::RgbImage read_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ValidationError("image: cannot open " + path);
  unsigned char magic[8] = {};
  const std::size_t got = std::fread(magic, 1, sizeof magic, fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return read_png_file(fp.get(), path);
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) {
    return read_jpeg_file(fp.get(), path);
  }
  throw ValidationError("image: " + path + " is neither PNG nor JPEG");
}

void write_png(const std::string& path, const imagefeat::RgbImage& img) {
  if (img.width < 1 || img.height < 1 || img.pixels.rows() != img.width * img.height) {
    throw ValidationError("write_png: malformed image for " + path);
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ValidationError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ValidationError("write_png: allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ValidationError("write_png: allocation failed");
  }
  std::vector<unsigned char> data(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("write_png: encode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (Eigen::Index i = 0; i < img.pixels.rows(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const Scalar v = std::min(1.0, std::max(0.0, img.pixels(i, c)));
      data[static_cast<std::size_t>(i) * 3 + c] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  for (Eigen::Index y = 0; y < img.height; ++y) {
    row_ptrs[static_cast<std::size_t>(y)] =
        data.data() + static_cast<std::size_t>(y) * img.width * 3;
  }
  png_set_rows(png, info, row_ptrs.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace pictraits::pipeline
