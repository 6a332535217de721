#include "kgt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "kgt/ops.hpp"

namespace kgt {

// ---- schedule ----

TopkSchedule TopkSchedule::fixed(std::size_t k) {
  TopkSchedule s{Mode::Fixed, {k}};
  s.validate();
  return s;
}

TopkSchedule TopkSchedule::random(std::vector<std::size_t> set) {
  TopkSchedule s{Mode::Random, std::move(set)};
  s.validate();
  return s;
}

void TopkSchedule::validate() const {
  if (values.empty()) throw ConfigError("top-k schedule needs at least one k value");
  if (mode == Mode::Fixed && values.size() != 1) throw ConfigError("fixed schedule holds one k");
  for (auto k : values)
    if (k < 1) throw ConfigError("top-k schedule values must be >= 1");
}

std::string TopkSchedule::to_string() const {
  std::string s = mode == Mode::Fixed ? "fixed:" : "random:";
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

std::size_t sample_k(const TopkSchedule& schedule, std::mt19937_64& rng) {
  if (schedule.mode == TopkSchedule::Mode::Fixed) return schedule.values.front();
  std::uniform_int_distribution<std::size_t> pick(0, schedule.values.size() - 1);
  return schedule.values[pick(rng)];
}

// ---- config ----

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (patch < 8) throw ConfigError("patch must be >= 8");
  if (!(sigma >= 0)) throw ConfigError("sigma must be >= 0");
  if (!(lr >= 0) || !(lr_min >= 0)) throw ConfigError("learning rates must be >= 0");
  schedule.validate();
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.steps = static_cast<std::size_t>(c.get_int("steps"));
  t.batch = static_cast<std::size_t>(c.get_int("batch"));
  t.patch = static_cast<std::size_t>(c.get_int("patch"));
  t.sigma = c.get_real("sigma");
  t.lr = c.get_real("lr");
  t.lr_min = c.get_real("lr_min");
  t.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  t.schedule = KGTNetConfig::from_config(c).schedule;
  t.backend = Backend::parse(c.get("backend"), static_cast<std::size_t>(c.get_int("block_size")));
  t.eval_every = static_cast<std::size_t>(c.get_int("eval_every"));
  t.eval_images = static_cast<std::size_t>(c.get_int("eval_images"));
  t.validate();
  return t;
}

// ---- data ----

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 over a mixed key
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + index +
                    0x94D049BB133111EBULL;
  for (int i = 0; i < 2; ++i) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

Tensor<float> synth_patch(std::uint64_t seed, std::size_t size) {
  if (size < 8) throw ConfigError("synth_patch: size must be >= 8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };
  const double n = static_cast<double>(size);
  std::vector<double> img(size * size);

  const double base = uni(0.25, 0.75);
  const double gx = uni(-0.3, 0.3) / n, gy = uni(-0.3, 0.3) / n;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      img[y * size + x] = base + gx * (static_cast<double>(x) - n / 2) + gy * (static_cast<double>(y) - n / 2);

  // Convex polygons with flat fill.
  const int polys = 1 + static_cast<int>(U(rng) * 3);
  for (int p = 0; p < polys; ++p) {
    const double cx = uni(0, n), cy = uni(0, n), r = uni(n / 8, n / 3);
    const int verts = 3 + static_cast<int>(U(rng) * 4);
    std::vector<double> ang(static_cast<std::size_t>(verts));
    for (auto& a : ang) a = uni(0, 2 * std::numbers::pi);
    std::sort(ang.begin(), ang.end());
    std::vector<std::pair<double, double>> pts;
    for (double a : ang) pts.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
    const double level = uni(0.1, 0.9);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        bool inside = true;
        for (std::size_t i = 0; i < pts.size() && inside; ++i) {
          const auto [ax, ay] = pts[i];
          const auto [bx, by] = pts[(i + 1) % pts.size()];
          inside = (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0;
        }
        if (inside) img[y * size + x] = level;
      }
  }

  // Oriented grating, confined to a disc so flats remain.
  if (U(rng) < 0.7) {
    const double theta = uni(0, std::numbers::pi), lambda = uni(6, 20), phase = uni(0, 2 * std::numbers::pi);
    const double amp = uni(0.05, 0.2);
    const double cx = uni(0, n), cy = uni(0, n), rad = uni(n / 6, n / 2);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        if (dx * dx + dy * dy > rad * rad) continue;
        img[y * size + x] += amp * std::sin(2 * std::numbers::pi *
                                                (static_cast<double>(x) * std::cos(theta) +
                                                 static_cast<double>(y) * std::sin(theta)) / lambda + phase);
      }
  }

  Tensor<float> out({1, size, size});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  return out;
}

template <class T>
Tensor<T> add_noise(const Tensor<T>& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0)) throw ConfigError("add_noise: sigma must be >= 0");
  Tensor<T> out = x;
  if (sigma == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const double s = sigma / 255.0;
  for (auto& v : out.data()) v = static_cast<T>(static_cast<double>(v) + s * g(rng));
  return out;
}

double psnr(const Tensor<float>& pred, const Tensor<float>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("psnr: shape mismatch " + to_string(pred.shape()) + " vs " +
                         to_string(target.shape()));
  }
  double se = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = std::clamp(static_cast<double>(pred[i]), 0.0, 1.0) - target[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(pred.numel());
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

namespace {
Batch make_pairs(std::uint64_t seed, std::uint64_t clean_stream, std::uint64_t noise_stream,
                 std::size_t first, std::size_t count, std::size_t patch, double sigma) {
  Batch b{Tensor<float>({count, 1, patch, patch}), Tensor<float>({count, 1, patch, patch})};
  const std::size_t plane = patch * patch;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(count); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto clean = synth_patch(derive_seed(seed, clean_stream, first + i), patch);
    const auto noisy = add_noise(clean, sigma, derive_seed(seed, noise_stream, first + i));
    std::copy_n(clean.ptr(), plane, b.clean.ptr() + i * plane);
    std::copy_n(noisy.ptr(), plane, b.noisy.ptr() + i * plane);
  }
  return b;
}
}  // namespace

Batch make_batch(std::uint64_t seed, std::size_t step, std::size_t batch, std::size_t patch,
                 double sigma) {
  return make_pairs(seed, 1, 2, step * batch, batch, patch, sigma);
}

Batch make_eval_set(std::uint64_t seed, std::size_t count, std::size_t patch, double sigma) {
  return make_pairs(seed, 3, 4, 0, count, patch, sigma);
}

// ---- optimization ----

double cosine_lr(const TrainConfig& cfg, std::size_t step) {
  if (cfg.steps <= 1) return cfg.lr;
  const double t = static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

double train_step(KGTNet& net, const Batch& batch, AdamState& opt, std::size_t k,
                  const Backend& backend, double lr, std::size_t step) {
  auto params = net.parameters();
  if (opt.m.empty()) {
    for (const auto& p : params) {
      opt.m.emplace_back(p.shape());
      opt.v.emplace_back(p.shape());
    }
  }
  for (auto& p : params) p.zero_grad();

  Var<float> loss;
  try {
    loss = l1_loss(net.forward(Var<float>(batch.noisy), k, backend), batch.clean);
  } catch (const NumericError&) {
    throw DivergenceError(step);
  }
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw DivergenceError(step);
  loss.backward();

  ++opt.t;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& w = params[i].mutable_value();
    const Tensor<float>& g = params[i].grad();
    Tensor<float>& m = opt.m[i];
    Tensor<float>& v = opt.v[i];
    for (std::size_t j = 0; j < w.numel(); ++j) {
      const double gj = g[j];
      const double mj = opt.beta1 * m[j] + (1 - opt.beta1) * gj;
      const double vj = opt.beta2 * v[j] + (1 - opt.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      w[j] = static_cast<float>(w[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + opt.eps));
    }
  }
  return value;
}

EvalResult evaluate(const KGTNet& net, const Batch& eval_set, std::size_t k, const Backend& backend) {
  const std::size_t n = eval_set.clean.dim(0);
  const std::size_t P = eval_set.clean.dim(2), W = eval_set.clean.dim(3);
  EvalResult r;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> clean({1, P, W}), noisy({1, P, W});
    std::copy_n(eval_set.clean.ptr() + i * P * W, P * W, clean.ptr());
    std::copy_n(eval_set.noisy.ptr() + i * P * W, P * W, noisy.ptr());
    r.psnr_noisy += psnr(noisy, clean);
    r.psnr_output += psnr(net.run(noisy, k, backend), clean);
  }
  r.psnr_noisy /= static_cast<double>(n);
  r.psnr_output /= static_cast<double>(n);
  return r;
}

std::size_t eval_k(const TopkSchedule& schedule) {
  return *std::max_element(schedule.values.begin(), schedule.values.end());
}

TrainResult train(KGTNet& net, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  TrainResult result;
  AdamState opt;
  std::mt19937_64 k_rng(derive_seed(cfg.seed, 5, 0));
  const Batch eval_set = make_eval_set(cfg.seed, std::max<std::size_t>(1, cfg.eval_images), cfg.patch, cfg.sigma);
  const std::size_t ek = eval_k(cfg.schedule);
  if (log) *log << "step,k,loss,lr,psnr_val\n";
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const std::size_t k = sample_k(cfg.schedule, k_rng);
    const double lr = cosine_lr(cfg, s);
    const Batch batch = make_batch(cfg.seed, s, cfg.batch, cfg.patch, cfg.sigma);
    const double loss = train_step(net, batch, opt, k, cfg.backend, lr, s + 1);
    result.losses.push_back(loss);
    result.ks.push_back(k);
    const bool last = s + 1 == cfg.steps;
    const bool eval_now = last || (cfg.eval_every > 0 && (s + 1) % cfg.eval_every == 0);
    std::string psnr_col;
    if (eval_now) {
      result.final_eval = evaluate(net, eval_set, ek, cfg.backend);
      psnr_col = std::to_string(result.final_eval.psnr_output);
    }
    if (log) {
      *log << (s + 1) << ',' << k << ',' << loss << ',' << lr << ',' << psnr_col << '\n';
      log->flush();
    }
  }
  return result;
}

template Tensor<float> add_noise(const Tensor<float>&, double, std::uint64_t);
template Tensor<double> add_noise(const Tensor<double>&, double, std::uint64_t);

}  // namespace kgt
