#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "kgt/attention.hpp"
#include "kgt/config.hpp"
#include "kgt/model.hpp"
#include "kgt/schedule.hpp"

namespace kgt {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t patch = 64;
  double sigma = 25.0;  // 0-255 scale
  double lr = 2e-4;
  double lr_min = 2e-5;
  std::uint64_t seed = 0;
  TopkSchedule schedule = TopkSchedule::random({4, 8, 16, 32});
  Backend backend = Backend::gather();
  std::size_t eval_every = 250;
  std::size_t eval_images = 8;

  void validate() const;
  static TrainConfig from_config(const Config& cfg);
};

/// Stateless seed derivation for independent per-item random streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Procedural grayscale patch [1×size×size] in [0,1]: smooth gradient,
/// flat polygons, and an oriented sinusoid grating. Requires size ≥ 8.
Tensor<float> synth_patch(std::uint64_t seed, std::size_t size);

/// x + (sigma/255)·N(0,1), not clamped.
template <class T>
Tensor<T> add_noise(const Tensor<T>& x, double sigma, std::uint64_t seed);

/// 10·log10(1/MSE) with pred clamped to [0,1]; 99 dB when MSE < 1e-10.
double psnr(const Tensor<float>& pred, const Tensor<float>& target);

struct Batch {
  Tensor<float> noisy;  // [N×1×P×P]
  Tensor<float> clean;
};

/// Training batch for a step; items are keyed by (seed, step·batch + i).
Batch make_batch(std::uint64_t seed, std::size_t step, std::size_t batch, std::size_t patch,
                 double sigma);

/// Held-out pairs drawn from streams disjoint from training batches.
Batch make_eval_set(std::uint64_t seed, std::size_t count, std::size_t patch, double sigma);

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor<float>> m, v;
};

/// Cosine decay from cfg.lr at step 0 to cfg.lr_min at the last step.
double cosine_lr(const TrainConfig& cfg, std::size_t step);

/// Forward with k, L1 loss, backward, Adam update. Returns the pre-update
/// loss; DivergenceError (tagged with `step`) if it is not finite.
double train_step(KGTNet& net, const Batch& batch, AdamState& opt, std::size_t k,
                  const Backend& backend, double lr, std::size_t step = 0);

struct EvalResult {
  double psnr_noisy = 0;
  double psnr_output = 0;
};

EvalResult evaluate(const KGTNet& net, const Batch& eval_set, std::size_t k, const Backend& backend);

struct TrainResult {
  std::vector<double> losses;
  std::vector<std::size_t> ks;
  EvalResult final_eval;
};

/// k used for held-out evaluation: the fixed k, or the largest of the set.
std::size_t eval_k(const TopkSchedule& schedule);

/// Runs the full loop. When `log` is set, writes CSV rows
/// step,k,loss,lr,psnr_val (psnr_val only on evaluation steps).
TrainResult train(KGTNet& net, const TrainConfig& cfg, std::ostream* log = nullptr);

}  // namespace kgt
