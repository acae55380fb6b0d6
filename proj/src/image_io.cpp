#include <png.h>

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "smoothlab/fileutil.hpp"
#include "smoothlab/image.hpp"

namespace smoothlab {

unsigned char quantize(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 1.0) return 255;
  return static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
}

namespace {

constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

bool is_png(std::span<const unsigned char> bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0;
}

Image from_interleaved(const unsigned char* px, int height, int width, int channels) {
  Image img(height, width, channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * width + x) * channels;
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = px[base + c] / 255.0;
    }
  }
  return img;
}

std::vector<unsigned char> to_interleaved(const Image& img) {
  std::vector<unsigned char> px(img.size());
  const int ch = img.channels();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * img.width() + x) * ch;
      for (int c = 0; c < ch; ++c) px[base + c] = quantize(img.at(c, y, x));
    }
  }
  return px;
}

Image decode_png(std::span<const unsigned char> bytes) {
  // IHDR sits at a fixed offset: signature(8) length(4) type(4) w(4) h(4) depth(1) colour(1)
  if (bytes.size() < 33 || std::memcmp(bytes.data() + 12, "IHDR", 4) != 0) {
    throw Error(Errc::format, "png: missing or truncated IHDR chunk");
  }
  const int bit_depth = bytes[24];
  const int colour_type = bytes[25];
  if (bit_depth == 16) {
    throw Error(Errc::unsupported, "png: 16-bit images are not supported");
  }
  const bool gray = colour_type == 0 || colour_type == 4;

  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::format, "png: " + msg);
  }
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::format, "png: " + msg);
  }
  return from_interleaved(px.data(), static_cast<int>(image.height),
                          static_cast<int>(image.width), gray ? 1 : 3);
}

std::vector<unsigned char> encode_png(const Image& img) {
  const auto px = to_interleaved(img);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, px.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("png encode: ") + image.message);
  }
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, px.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

class PnmReader {
 public:
  explicit PnmReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const unsigned char ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(ch)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_uint(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw Error(Errc::format, std::string("pnm: truncated or malformed header at ") + field);
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1L << 30)) throw Error(Errc::format, std::string("pnm: ") + field + " too large");
      ++pos_;
    }
    return v;
  }

  std::size_t pos_ = 0;
  std::span<const unsigned char> bytes_;
};

}  // namespace

Image decode_pnm(std::span<const unsigned char> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw Error(Errc::format, "pnm: expected P5 or P6 magic");
  }
  const int channels = bytes[1] == '6' ? 3 : 1;
  PnmReader r(bytes);
  r.pos_ = 2;
  const long width = r.read_uint("width");
  const long height = r.read_uint("height");
  const long maxval = r.read_uint("maxval");
  if (width <= 0 || height <= 0) throw Error(Errc::format, "pnm: zero image dimension");
  if (maxval != 255) {
    throw Error(Errc::unsupported,
                "pnm: only 8-bit (maxval 255) files are supported, got maxval " +
                    std::to_string(maxval));
  }
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_])) {
    throw Error(Errc::format, "pnm: truncated header");
  }
  ++r.pos_;
  const std::size_t need = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() - r.pos_ < need) {
    throw Error(Errc::format, "pnm: truncated pixel data (" +
                                  std::to_string(bytes.size() - r.pos_) + " of " +
                                  std::to_string(need) + " bytes)");
  }
  return from_interleaved(bytes.data() + r.pos_, static_cast<int>(height),
                          static_cast<int>(width), channels);
}

std::vector<unsigned char> encode_pnm(const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw Error(Errc::shape, "pnm: channels must be 1 or 3");
  }
  const std::string header = std::string(img.channels() == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(img.width()) + " " + std::to_string(img.height()) +
                             "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  const auto px = to_interleaved(img);
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (is_png(bytes)) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  throw Error(Errc::unsupported, "load_image: " + path.string() + " is neither PNG nor P5/P6");
}

void save_image(const Image& img, const std::filesystem::path& path) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw Error(Errc::shape, "save_image: channels must be 1 or 3");
  }
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  const auto bytes = ext == ".png" ? encode_png(img) : encode_pnm(img);
  write_file_atomic(path, bytes);
}

}  // namespace smoothlab
