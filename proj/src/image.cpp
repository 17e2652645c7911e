#include "bright/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

#include "bright/error.hpp"
#include "bright/snapshot.hpp"

namespace bright {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) fail(ErrorKind::io, "cannot open '" + path + "'");
  return f;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

Tensor3<float> decode_ppm(const Bytes& bytes, const std::string& path) {
  std::size_t pos = 2;
  auto next_token = [&]() -> std::uint32_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::uint64_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && digits < 10) {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    require(digits > 0 && v <= 0xffffffffULL, ErrorKind::format, path + ": malformed PPM header");
    return static_cast<std::uint32_t>(v);
  };
  const std::uint32_t w = next_token(), h = next_token(), maxval = next_token();
  require(maxval == 255, ErrorKind::format, path + ": only 8-bit PPM is supported");
  require(w > 0 && h > 0, ErrorKind::format, path + ": empty PPM");
  require(pos < bytes.size() && std::isspace(bytes[pos]), ErrorKind::format,
          path + ": malformed PPM header");
  ++pos;
  const std::size_t n = std::size_t(w) * h * 3;
  require(bytes.size() - pos >= n, ErrorKind::format, path + ": truncated PPM payload");
  Tensor3<float> img(h, w, 3);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = float(bytes[pos + i]) / 255.0f;
  return img;
}

struct PngRead {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWrite {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

Tensor3<float> decode_png(const std::string& path) {
  auto file = open_file(path, "rb");
  PngRead r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(r.png != nullptr, ErrorKind::io, "libpng: out of memory");
  r.info = png_create_info_struct(r.png);
  require(r.info != nullptr, ErrorKind::io, "libpng: out of memory");
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> pixels;
  png_uint_32 w = 0, h = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(r.png))) fail(ErrorKind::format, path + ": malformed PNG");
  png_init_io(r.png, file.get());
  png_read_info(r.png, r.info);
  png_set_expand(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);
  w = png_get_image_width(r.png, r.info);
  h = png_get_image_height(r.png, r.info);
  channels = png_get_channels(r.png, r.info);
  pixels.resize(std::size_t(w) * h * channels);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + std::size_t(y) * w * channels;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  Tensor3<float> img(h, w, static_cast<std::uint32_t>(channels));
  for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = float(pixels[i]) / 255.0f;
  return img;
}

void encode_png(const std::string& path, const Tensor3<float>& image) {
  require(image.c == 1 || image.c == 3, ErrorKind::shape, "PNG output needs 1 or 3 channels");
  std::vector<std::uint8_t> pixels(image.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(image.data[i]);
  std::vector<png_bytep> rows(image.h);
  for (std::uint32_t y = 0; y < image.h; ++y)
    rows[y] = pixels.data() + std::size_t(y) * image.w * image.c;

  auto file = open_file(path, "wb");
  PngWrite wr;
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(wr.png != nullptr, ErrorKind::io, "libpng: out of memory");
  wr.info = png_create_info_struct(wr.png);
  require(wr.info != nullptr, ErrorKind::io, "libpng: out of memory");
  if (setjmp(png_jmpbuf(wr.png))) fail(ErrorKind::io, path + ": PNG write failed");
  png_init_io(wr.png, file.get());
  png_set_IHDR(wr.png, wr.info, image.w, image.h, 8,
               image.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  png_write_image(wr.png, rows.data());
  png_write_end(wr.png, nullptr);
}

bool has_extension(const std::string& path, const char* ext) {
  std::string e = std::filesystem::path(path).extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

}  // namespace

Tensor3<float> read_image(const std::string& path) {
  const Bytes bytes = read_file(path);
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
  fail(ErrorKind::format, path + ": not a PPM (P6) or PNG image");
}

void write_image(const std::string& path, const Tensor3<float>& image) {
  if (has_extension(path, ".png")) return encode_png(path, image);
  require(image.c == 3, ErrorKind::shape, "PPM output needs 3 channels");
  const std::string header =
      "P6\n" + std::to_string(image.w) + " " + std::to_string(image.h) + "\n255\n";
  Bytes bytes(header.begin(), header.end());
  for (float v : image.data) bytes.push_back(to_byte(v));
  write_file(path, bytes);
}

Dataset load_image_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  require(fs::is_directory(dir, ec), ErrorKind::data, "'" + dir + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string p = entry.path().string();
    if (entry.is_regular_file() && (has_extension(p, ".ppm") || has_extension(p, ".png")))
      files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::data, "'" + dir + "' contains no .ppm or .png images");
  Dataset out;
  for (const auto& f : files) {
    try {
      out.push_back(read_image(f));
    } catch (const Error& e) {
      fail(ErrorKind::data, e.what());
    }
  }
  return out;
}

}  // namespace bright
