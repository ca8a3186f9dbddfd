#include "cmsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace cmsr {

namespace {

struct FileCloser {
  void operator()(std::FILE *f) const {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string &path, const std::string &reason) {
  throw std::runtime_error(path + ": " + reason);
}

ImageBuffer load_png(const std::string &path, std::FILE *f) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png)
    fail(path, "png init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png init failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "png decode error");
  }
  png_init_io(png, f);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA)
    png_set_strip_alpha(png);
  if (depth == 16)
    png_set_swap(png); // stored big-endian; read as host little-endian
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  depth = png_get_bit_depth(png, info);
  const int ch = static_cast<int>(png_get_channels(png, info));
  if (ch != 1 && ch != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "unsupported channel count " + std::to_string(ch));
  }

  const size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * h);
  row_ptrs.resize(h);
  for (int y = 0; y < h; ++y)
    row_ptrs[y] = raw.data() + stride * y;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageBuffer img;
  img.height = h;
  img.width = w;
  img.channels = ch;
  img.source_bit_depth = depth;
  img.data.resize(static_cast<size_t>(ch) * h * w);
  const float maxcode = static_cast<float>((1u << depth) - 1u);
  for (int y = 0; y < h; ++y) {
    if (depth == 8) {
      const png_byte *row = raw.data() + stride * y;
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < ch; ++c)
          img.at(c, y, x) = static_cast<float>(row[x * ch + c]) / maxcode;
    } else {
      const uint16_t *row =
          reinterpret_cast<const uint16_t *>(raw.data() + stride * y);
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < ch; ++c)
          img.at(c, y, x) = static_cast<float>(row[x * ch + c]) / maxcode;
    }
  }
  return img;
}

int read_pnm_token(std::FILE *f, const std::string &path) {
  int c = std::fgetc(f);
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n')
        c = std::fgetc(f);
    } else if (!std::isspace(c)) {
      break;
    }
    c = std::fgetc(f);
  }
  if (c == EOF)
    fail(path, "truncated PNM header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = std::fgetc(f);
  }
  return value;
}

ImageBuffer load_pnm(const std::string &path, std::FILE *f, int channels) {
  const int w = read_pnm_token(f, path);
  const int h = read_pnm_token(f, path);
  const int maxval = read_pnm_token(f, path);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    fail(path, "bad PNM header");
  const int depth = maxval > 255 ? 16 : 8;
  const size_t count = static_cast<size_t>(w) * h * channels;
  std::vector<uint8_t> raw(count * (depth / 8));
  if (std::fread(raw.data(), 1, raw.size(), f) != raw.size())
    fail(path, "truncated PNM data");

  ImageBuffer img;
  img.height = h;
  img.width = w;
  img.channels = channels;
  img.source_bit_depth = depth;
  img.data.resize(count);
  const float maxcode = static_cast<float>(maxval);
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c, ++i) {
        uint32_t v = depth == 8 ? raw[i]
                                : (static_cast<uint32_t>(raw[2 * i]) << 8) |
                                      raw[2 * i + 1]; // big-endian per Netpbm
        img.at(c, y, x) = static_cast<float>(v) / maxcode;
      }
  return img;
}

bool ends_with(const std::string &s, const std::string &suffix) {
  return s.size() >= suffix.size() &&
         std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(b) == a; });
}

void save_png(const ImageBuffer &img, const std::string &path, int bit_depth,
              const std::vector<uint8_t> &raw8,
              const std::vector<uint16_t> &raw16) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f)
    fail(path, "cannot open for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png)
      png_destroy_write_struct(&png, &info);
    fail(path, "png init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "png encode error");
  }
  png_init_io(png, f.get());
  const int color =
      img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, img.width, img.height, bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16)
    png_set_swap(png);
  std::vector<png_bytep> rows(img.height);
  const size_t stride =
      static_cast<size_t>(img.width) * img.channels * (bit_depth / 8);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(
        bit_depth == 8 ? reinterpret_cast<const png_byte *>(raw8.data()) +
                             stride * y
                       : reinterpret_cast<const png_byte *>(raw16.data()) +
                             stride * y);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

} // namespace

ImageBuffer load_image(const std::string &path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f)
    fail(path, "cannot open file");
  unsigned char magic[8] = {};
  const size_t got = std::fread(magic, 1, sizeof(magic), f.get());
  std::rewind(f.get());
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0)
    return load_png(path, f.get());
  if (got >= 2 && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
    std::fseek(f.get(), 2, SEEK_SET);
    return load_pnm(path, f.get(), magic[1] == '5' ? 1 : 3);
  }
  fail(path, "unsupported format (expected PNG or binary PGM/PPM)");
}

void save_image(const ImageBuffer &img, const std::string &path,
                int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw std::invalid_argument("save_image: bit depth must be 8 or 16");
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("save_image: channels must be 1 or 3");

  const float maxcode = static_cast<float>((1u << bit_depth) - 1u);
  const size_t count = img.data.size();
  std::vector<uint8_t> raw8;
  std::vector<uint16_t> raw16;
  if (bit_depth == 8)
    raw8.resize(count);
  else
    raw16.resize(count);
  size_t i = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c, ++i) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        const uint32_t q =
            static_cast<uint32_t>(std::lround(v * maxcode));
        if (bit_depth == 8)
          raw8[i] = static_cast<uint8_t>(q);
        else
          raw16[i] = static_cast<uint16_t>(q);
      }

  if (ends_with(path, ".png")) {
    save_png(img, path, bit_depth, raw8, raw16);
    return;
  }
  if (ends_with(path, ".pgm") || ends_with(path, ".ppm")) {
    const bool gray = ends_with(path, ".pgm");
    if (gray != (img.channels == 1))
      throw std::invalid_argument(path + ": extension does not match " +
                                  std::to_string(img.channels) + " channels");
    std::ofstream out(path, std::ios::binary);
    if (!out)
      fail(path, "cannot open for writing");
    out << (gray ? "P5\n" : "P6\n") << img.width << " " << img.height << "\n"
        << ((1u << bit_depth) - 1u) << "\n";
    if (bit_depth == 8) {
      out.write(reinterpret_cast<const char *>(raw8.data()),
                static_cast<std::streamsize>(raw8.size()));
    } else {
      std::vector<uint8_t> be(raw16.size() * 2);
      for (size_t j = 0; j < raw16.size(); ++j) {
        be[2 * j] = static_cast<uint8_t>(raw16[j] >> 8);
        be[2 * j + 1] = static_cast<uint8_t>(raw16[j] & 0xff);
      }
      out.write(reinterpret_cast<const char *>(be.data()),
                static_cast<std::streamsize>(be.size()));
    }
    if (!out)
      fail(path, "write failed");
    return;
  }
  fail(path, "unsupported output extension (use .png, .pgm or .ppm)");
}

BlurKernel load_kernel(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    fail(path, "cannot open kernel file");
  BlurKernel k;
  if (!(in >> k.kh >> k.kw) || k.kh < 1 || k.kw < 1)
    fail(path, "bad kernel header (expected: rows cols values...)");
  k.values.resize(static_cast<size_t>(k.kh) * k.kw);
  double sum = 0.0;
  for (auto &v : k.values) {
    if (!(in >> v))
      fail(path, "truncated kernel data");
    sum += v;
  }
  if (std::fabs(sum) < 1e-12)
    fail(path, "kernel sums to zero, cannot normalize");
  for (auto &v : k.values)
    v = static_cast<float>(v / sum);
  return k;
}

ImagePair make_pair(const std::string &modality_path,
                    const std::string &guide_path, int r,
                    const std::optional<std::string> &kernel_path) {
  if (r < 2)
    throw std::invalid_argument("make_pair: scale ratio must be >= 2, got " +
                                std::to_string(r));
  ImagePair pair;
  pair.r = r;
  pair.modality_lr = load_image(modality_path);
  pair.guide_rgb_hr = load_image(guide_path);

  ImageBuffer &mod = pair.modality_lr;
  if (mod.channels == 3) {
    for (size_t i = 0; i < static_cast<size_t>(mod.height) * mod.width; ++i) {
      const float a = mod.data[i];
      const float b = mod.data[i + static_cast<size_t>(mod.height) * mod.width];
      const float c =
          mod.data[i + 2 * static_cast<size_t>(mod.height) * mod.width];
      if (std::fabs(a - b) > 1e-6f || std::fabs(a - c) > 1e-6f)
        throw std::runtime_error(modality_path +
                                 ": modality must be single-band (got a "
                                 "true-color image)");
    }
    mod.data.resize(static_cast<size_t>(mod.height) * mod.width);
    mod.channels = 1;
  }

  ImageBuffer &guide = pair.guide_rgb_hr;
  if (guide.channels == 1) {
    const size_t plane = static_cast<size_t>(guide.height) * guide.width;
    guide.data.resize(plane * 3);
    std::copy_n(guide.data.begin(), plane, guide.data.begin() + plane);
    std::copy_n(guide.data.begin(), plane, guide.data.begin() + 2 * plane);
    guide.channels = 3;
  }

  const int want_h = r * mod.height, want_w = r * mod.width;
  if (guide.height < want_h || guide.width < want_w)
    throw std::runtime_error(
        guide_path + ": guide is " + std::to_string(guide.width) + "x" +
        std::to_string(guide.height) + ", needs at least " +
        std::to_string(want_w) + "x" + std::to_string(want_h) + " for r=" +
        std::to_string(r));
  if (guide.height > want_h || guide.width > want_w) {
    const int y0 = (guide.height - want_h) / 2;
    const int x0 = (guide.width - want_w) / 2;
    ImageBuffer cropped;
    cropped.height = want_h;
    cropped.width = want_w;
    cropped.channels = 3;
    cropped.source_bit_depth = guide.source_bit_depth;
    cropped.data.resize(static_cast<size_t>(3) * want_h * want_w);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < want_h; ++y)
        for (int x = 0; x < want_w; ++x)
          cropped.at(c, y, x) = guide.at(c, y0 + y, x0 + x);
    guide = std::move(cropped);
  }

  if (kernel_path)
    pair.blur_kernel = load_kernel(*kernel_path);
  return pair;
}

Tensor image_to_tensor(const ImageBuffer &img) {
  return Tensor::from_data(Shape{1, img.channels, img.height, img.width},
                           img.data);
}

ImageBuffer tensor_to_image(const Tensor &t, bool clamp01) {
  const Shape s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    throw std::invalid_argument("tensor_to_image: need (1,{1|3},H,W), got " +
                                s.str());
  ImageBuffer img;
  img.height = s.h;
  img.width = s.w;
  img.channels = s.c;
  img.data.assign(t.data(), t.data() + t.numel());
  if (clamp01)
    for (auto &v : img.data)
      v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

PairTensors pair_to_tensors(const ImagePair &pair) {
  PairTensors t;
  t.modality = image_to_tensor(pair.modality_lr);
  t.guide = image_to_tensor(pair.guide_rgb_hr);
  t.r = pair.r;
  t.blur_kernel = pair.blur_kernel;
  return t;
}

} // namespace cmsr
