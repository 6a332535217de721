#include "kgt/instrument.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <string>
#include <utility>

#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

#ifdef KGT_HAVE_OPENMP
#include <omp.h>
#endif

namespace kgt::instrument {
namespace {
std::atomic<std::uint64_t> g_flops{0};
std::atomic<std::uint64_t> g_builds{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

void reset() {
  g_flops = 0;
  g_builds = 0;
  g_peak = 0;
}

Snapshot snapshot() { return {g_flops.load(), g_builds.load(), g_peak.load()}; }

void add_attention_flops(std::uint64_t n) { g_flops.fetch_add(n, std::memory_order_relaxed); }

void note_graph_build() { g_builds.fetch_add(1, std::memory_order_relaxed); }

void note_aux_bytes(std::size_t bytes) {
  std::size_t cur = g_peak.load(std::memory_order_relaxed);
  while (bytes > cur && !g_peak.compare_exchange_weak(cur, bytes)) {
  }
}

}  // namespace kgt::instrument

namespace kgt {
namespace {
std::mutex g_warn_mu;
std::vector<std::string> g_warnings;
}  // namespace

void warn(std::string message) {
  std::lock_guard lock(g_warn_mu);
  g_warnings.push_back(std::move(message));
}

std::vector<std::string> drain_warnings() {
  std::lock_guard lock(g_warn_mu);
  return std::exchange(g_warnings, {});
}

int configure_threads() {
  if (const char* env = std::getenv("KGT_THREADS")) {
    char* end = nullptr;
    long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) set_threads(static_cast<int>(n));
  }
  return thread_count();
}

int configure_runtime() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return configure_threads();
}

int set_threads(int n) {
  int prev = thread_count();
#ifdef KGT_HAVE_OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
  return prev;
}

int thread_count() {
#ifdef KGT_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace kgt
