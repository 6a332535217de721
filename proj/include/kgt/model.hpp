#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kgt/config.hpp"
#include "kgt/kgtblock.hpp"
#include "kgt/schedule.hpp"

namespace kgt {

/// Shape of the toy denoising network.
struct KGTNetConfig {
  std::size_t channels = 32;
  std::size_t n_stages = 2;
  std::size_t n_layers = 2;
  std::size_t heads = 2;
  std::size_t window = 8;
  std::size_t ffn_ratio = 2;
  TopkSchedule schedule = TopkSchedule::random({4, 8, 16, 32});
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const;
  /// ConfigError listing every violation.
  void validate() const;
  /// `key = value` lines accepted by parse_config.
  std::string to_text() const;
  static KGTNetConfig from_config(const Config& cfg);

  friend bool operator==(const KGTNetConfig&, const KGTNetConfig&) = default;
};

/// Conv extractor -> KGT stages -> conv reconstructor, plus the input.
///
/// Copies share parameters; the network is immutable during inference, so
/// concurrent forward calls on one instance are safe.
class KGTNet {
 public:
  static KGTNet init(const KGTNetConfig& cfg, std::uint64_t seed);

  const KGTNetConfig& config() const { return cfg_; }

  /// Every trainable tensor in a stable order.
  std::vector<Var<float>> parameters() const;
  std::size_t parameter_count() const;

  /// image is [1×H×W] or [N×1×H×W]. No clamping is applied.
  Var<float> forward(const Var<float>& image, std::size_t k, const Backend& backend) const;

  /// Inference on a plain tensor without recording a graph.
  Tensor<float> run(const Tensor<float>& image, std::size_t k, const Backend& backend) const;

 private:
  KGTNetConfig cfg_;
  Var<float> extract_w_, extract_b_;
  std::vector<KGTStageParams<float>> stages_;
  Var<float> recon_w_, recon_b_;
};

class LoadError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Malformed };
  LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian checkpoint: "KGT1", u32 version, u32 length + config text,
/// u32 tensor count, then per tensor u16 name length, name, u8 dtype (0 =
/// f32), u8 rank, u32 dims[rank], raw data.
std::string serialize(const KGTNet& net);
KGTNet deserialize(std::string_view bytes);

void save(const KGTNet& net, const std::string& path);
KGTNet load(const std::string& path);

}  // namespace kgt
