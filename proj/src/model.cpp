#include "kgt/model.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "kgt/ops.hpp"

namespace kgt {

std::vector<std::string> KGTNetConfig::violations() const {
  std::vector<std::string> out;
  if (channels == 0) out.push_back("channels must be >= 1");
  if (heads == 0) out.push_back("heads must be >= 1");
  if (heads != 0 && channels % heads != 0) {
    out.push_back("channels (" + std::to_string(channels) + ") not divisible by heads (" +
                  std::to_string(heads) + ")");
  }
  if (window < 2) out.push_back("window must be >= 2 (window² >= 2)");
  if (n_stages == 0) out.push_back("stages must be >= 1");
  if (n_layers == 0) out.push_back("layers must be >= 1");
  if (ffn_ratio == 0) out.push_back("ffn_ratio must be >= 1");
  try {
    schedule.validate();
  } catch (const ConfigError& e) {
    out.push_back(e.what());
  }
  return out;
}

void KGTNetConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid network config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

std::string KGTNetConfig::to_text() const {
  std::ostringstream os;
  os << "channels = " << channels << "\n"
     << "stages = " << n_stages << "\n"
     << "layers = " << n_layers << "\n"
     << "heads = " << heads << "\n"
     << "window = " << window << "\n"
     << "ffn_ratio = " << ffn_ratio << "\n"
     << "seed = " << seed << "\n";
  if (schedule.mode == TopkSchedule::Mode::Fixed) {
    os << "schedule = fixed\nk = " << schedule.values.front() << "\n";
  } else {
    os << "schedule = random\nk_set = ";
    for (std::size_t i = 0; i < schedule.values.size(); ++i) os << (i ? "," : "") << schedule.values[i];
    os << "\n";
  }
  return os.str();
}

KGTNetConfig KGTNetConfig::from_config(const Config& c) {
  KGTNetConfig n;
  n.channels = static_cast<std::size_t>(c.get_int("channels"));
  n.n_stages = static_cast<std::size_t>(c.get_int("stages"));
  n.n_layers = static_cast<std::size_t>(c.get_int("layers"));
  n.heads = static_cast<std::size_t>(c.get_int("heads"));
  n.window = static_cast<std::size_t>(c.get_int("window"));
  n.ffn_ratio = static_cast<std::size_t>(c.get_int("ffn_ratio"));
  n.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const std::string& mode = c.get("schedule");
  if (mode == "fixed") {
    n.schedule = TopkSchedule::fixed(static_cast<std::size_t>(c.get_int("k")));
  } else if (mode == "random") {
    std::vector<std::size_t> set;
    for (auto v : c.get_int_list("k_set")) {
      if (v < 1) throw ConfigError("k_set values must be >= 1");
      set.push_back(static_cast<std::size_t>(v));
    }
    n.schedule = TopkSchedule::random(std::move(set));
  } else {
    throw ConfigError("schedule must be 'fixed' or 'random', got '" + mode + "'");
  }
  return n;
}

KGTNet KGTNet::init(const KGTNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  KGTNet net;
  net.cfg_ = cfg;
  net.cfg_.seed = seed;
  std::mt19937_64 rng(seed);
  const std::size_t C = cfg.channels;
  net.extract_w_ = make_parameter("extract.weight", trunc_normal<float>({C, 1, 3, 3}, 0.02f, rng));
  net.extract_b_ = make_parameter("extract.bias", Tensor<float>({C}));
  for (std::size_t s = 0; s < cfg.n_stages; ++s) {
    net.stages_.push_back(init_stage<float>("stages." + std::to_string(s) + ".", C, cfg.heads,
                                            cfg.ffn_ratio, cfg.n_layers, rng));
  }
  // Zero reconstructor: together with the zero stage tails the network starts as the identity.
  net.recon_w_ = make_parameter("reconstruct.weight", Tensor<float>({1, C, 3, 3}));
  net.recon_b_ = make_parameter("reconstruct.bias", Tensor<float>({1}));
  return net;
}

std::vector<Var<float>> KGTNet::parameters() const {
  std::vector<Var<float>> out{extract_w_, extract_b_};
  for (const auto& s : stages_) {
    auto sp = s.parameters();
    out.insert(out.end(), sp.begin(), sp.end());
  }
  out.push_back(recon_w_);
  out.push_back(recon_b_);
  return out;
}

std::size_t KGTNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value().numel();
  return n;
}

Var<float> KGTNet::forward(const Var<float>& image, std::size_t k, const Backend& backend) const {
  const bool batched = image.rank() == 4;
  if ((image.rank() != 3 && !batched) || image.dim(batched ? 1 : 0) != 1) {
    throw DimensionError("forward: expected [1×H×W] or [N×1×H×W], got " + to_string(image.shape()));
  }
  if (!image.value().all_finite()) throw InputError("forward: input contains NaN or infinity");
  if (k < 1) throw ConfigError("forward: k must be >= 1");
  Var<float> f = conv2d_3x3(image, extract_w_, extract_b_);
  for (const auto& stage : stages_) f = kgt_stage_forward(f, stage, k, cfg_.window, backend);
  return add(image, conv2d_3x3(f, recon_w_, recon_b_));
}

Tensor<float> KGTNet::run(const Tensor<float>& image, std::size_t k, const Backend& backend) const {
  NoGradGuard guard;
  return forward(Var<float>(image), k, backend).value();
}

// ---- checkpoint ----

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw LoadError(LoadError::Kind::Truncated,
                      "checkpoint truncated at byte " + std::to_string(pos_) + " (needed " +
                          std::to_string(n) + " more)");
    }
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "KGT1";

}  // namespace

std::string serialize(const KGTNet& net) {
  Writer w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  const std::string text = net.config().to_text();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  const auto params = net.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name().size()));
    w.bytes(p.name());
    w.u8(0);
    w.u8(static_cast<std::uint8_t>(p.rank()));
    for (std::size_t d : p.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value().data()) w.f32(v);
  }
  return w.take();
}

KGTNet deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw LoadError(LoadError::Kind::BadMagic, "not a KGT checkpoint (bad magic)");
  }
  r.bytes(kMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError(LoadError::Kind::VersionMismatch,
                    "checkpoint version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
  }
  const std::uint32_t text_len = r.u32();
  const std::string_view text = r.bytes(text_len);
  KGTNetConfig cfg;
  try {
    cfg = KGTNetConfig::from_config(parse_config(text));
    cfg.validate();
  } catch (const ConfigError& e) {
    throw LoadError(LoadError::Kind::Malformed, std::string("checkpoint config: ") + e.what());
  }
  KGTNet net = KGTNet::init(cfg, cfg.seed);
  std::map<std::string, Var<float>> by_name;
  for (auto& p : net.parameters()) by_name.emplace(p.name(), p);

  const std::uint32_t count = r.u32();
  if (count != by_name.size()) {
    throw LoadError(LoadError::Kind::Malformed,
                    "checkpoint holds " + std::to_string(count) + " tensors, network needs " +
                        std::to_string(by_name.size()));
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t name_len = r.u16();
    const std::string name(r.bytes(name_len));
    const std::uint8_t dtype = r.u8();
    if (dtype != 0) {
      throw LoadError(LoadError::Kind::Malformed, "tensor '" + name + "': unsupported dtype " +
                                                      std::to_string(dtype));
    }
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second.shape() != shape) {
      throw LoadError(LoadError::Kind::Malformed,
                      "unexpected tensor '" + name + "' " + to_string(shape));
    }
    Tensor<float>& dst = it->second.mutable_value();
    for (auto& v : dst.data()) v = r.f32();
    by_name.erase(it);
  }
  if (!r.done()) {
    throw LoadError(LoadError::Kind::Malformed,
                    "trailing bytes after tensor table at offset " + std::to_string(r.pos()));
  }
  return net;
}

void save(const KGTNet& net, const std::string& path) {
  const std::string bytes = serialize(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

KGTNet load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace kgt
