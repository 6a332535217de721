#include "kgt/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace kgt {

namespace {

class HeaderScanner {
 public:
  explicit HeaderScanner(std::string_view in) : in_(in) {}

  // Skips whitespace and comments, then reads a decimal field.
  std::size_t number(const char* field) {
    skip();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < in_.size() && std::isdigit(static_cast<unsigned char>(in_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(in_[pos_] - '0');
      if (v > (std::size_t{1} << 31)) throw PgmError(PgmError::Kind::BadHeader, start, std::string(field) + " too large");
      ++pos_;
    }
    if (pos_ == start) {
      if (pos_ >= in_.size()) throw PgmError(PgmError::Kind::Truncated, pos_, std::string("header ends before ") + field);
      throw PgmError(PgmError::Kind::BadHeader, pos_, std::string("expected ") + field);
    }
    return v;
  }
  // Exactly one whitespace byte separates maxval from the raster.
  void single_space() {
    if (pos_ >= in_.size()) throw PgmError(PgmError::Kind::Truncated, pos_, "header ends before raster");
    if (!std::isspace(static_cast<unsigned char>(in_[pos_]))) {
      throw PgmError(PgmError::Kind::BadHeader, pos_, "expected whitespace after maxval");
    }
    ++pos_;
  }
  std::size_t pos() const { return pos_; }

 private:
  void skip() {
    while (pos_ < in_.size()) {
      const char c = in_[pos_];
      if (c == '#') {
        while (pos_ < in_.size() && in_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  std::string_view in_;
  std::size_t pos_ = 2;
};

}  // namespace

GrayImage parse_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw PgmError(PgmError::Kind::BadMagic, 0, "bad magic (expected P5)");
  }
  HeaderScanner h(bytes);
  GrayImage img;
  img.width = h.number("width");
  img.height = h.number("height");
  const std::size_t maxval_at = h.pos();
  const std::size_t maxval = h.number("maxval");
  if (maxval != 255) {
    throw PgmError(PgmError::Kind::BadMaxval, maxval_at, "maxval " + std::to_string(maxval) + " (only 255 supported)");
  }
  if (img.width == 0 || img.height == 0) throw PgmError(PgmError::Kind::BadHeader, maxval_at, "empty image");
  h.single_space();
  const std::size_t n = img.width * img.height;
  const std::size_t avail = bytes.size() - h.pos();
  if (avail < n) {
    throw PgmError(PgmError::Kind::Truncated, bytes.size(),
                   "payload truncated: " + std::to_string(avail) + " of " + std::to_string(n) + " bytes");
  }
  img.samples.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.pos()),
                     bytes.begin() + static_cast<std::ptrdiff_t>(h.pos() + n));
  return img;
}

std::string encode_pgm(const GrayImage& img) {
  if (img.samples.size() != img.width * img.height) {
    throw DimensionError("encode_pgm: " + std::to_string(img.samples.size()) + " samples for " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.samples.begin(), img.samples.end());
  return out;
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pgm(ss.str());
}

void write_pgm(const GrayImage& img, const std::string& path) {
  const std::string bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Tensor<float> to_tensor(const GrayImage& img) {
  Tensor<float> t({1, img.height, img.width});
  for (std::size_t i = 0; i < img.samples.size(); ++i) t[i] = static_cast<float>(img.samples[i]) / 255.0f;
  return t;
}

GrayImage from_tensor(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 1) throw DimensionError("from_tensor: expected [1×H×W], got " + to_string(t.shape()));
  GrayImage img{t.dim(2), t.dim(1), std::vector<std::uint8_t>(t.numel())};
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const float v = std::clamp(t[i], 0.0f, 1.0f);
    img.samples[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return img;
}

}  // namespace kgt
