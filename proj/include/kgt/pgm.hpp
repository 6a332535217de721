#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kgt/error.hpp"
#include "kgt/tensor.hpp"

namespace kgt {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> samples;  // row-major

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

class PgmError : public IoError {
 public:
  enum class Kind { BadMagic, BadHeader, BadMaxval, Truncated };
  PgmError(Kind kind, std::size_t offset, const std::string& what)
      : IoError("PGM byte " + std::to_string(offset) + ": " + what), kind_(kind), offset_(offset) {}
  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

/// Binary "P5" with maxval 255; `#` comments allowed between header fields.
GrayImage parse_pgm(std::string_view bytes);
std::string encode_pgm(const GrayImage& img);

GrayImage read_pgm(const std::string& path);
void write_pgm(const GrayImage& img, const std::string& path);

/// [1×H×W] with samples s/255.
Tensor<float> to_tensor(const GrayImage& img);
/// Clamps to [0,1] and rounds to the nearest 8-bit level.
GrayImage from_tensor(const Tensor<float>& t);

}  // namespace kgt
