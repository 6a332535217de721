#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

// Process-wide counters used by tests and the cost benchmark. All updates are
// atomic; reading a snapshot while kernels run is allowed but racy by nature.
namespace kgt::instrument {

struct Snapshot {
  std::uint64_t attention_flops = 0;  // score + aggregate core, 2 per multiply-accumulate
  std::uint64_t graph_builds = 0;     // batched KeyGraph constructions
  std::size_t peak_aux_bytes = 0;     // largest per-window attention scratch
};

void reset();
Snapshot snapshot();

void add_attention_flops(std::uint64_t n);
void note_graph_build();
void note_aux_bytes(std::size_t bytes);

/// Per-window scratch allocator. Everything it hands out is live until the
/// arena dies, at which point its total is offered to the peak tracker.
template <class T>
class ScratchArena {
 public:
  ScratchArena() = default;
  ScratchArena(const ScratchArena&) = delete;
  ScratchArena& operator=(const ScratchArena&) = delete;
  ~ScratchArena() { note_aux_bytes(bytes_); }

  T* alloc(std::size_t n) {
    buffers_.push_back(std::make_unique_for_overwrite<T[]>(n));
    bytes_ += n * sizeof(T);
    return buffers_.back().get();
  }
  std::size_t bytes() const { return bytes_; }

 private:
  std::vector<std::unique_ptr<T[]>> buffers_;
  std::size_t bytes_ = 0;
};

}  // namespace kgt::instrument

namespace kgt {

/// Non-fatal notices (e.g. k clamped to the window). Drained by callers that report them.
void warn(std::string message);
std::vector<std::string> drain_warnings();

/// Applies KGT_THREADS (if set) to the worker pool; returns the effective count.
int configure_threads();
/// configure_threads() plus allocator tuning so large tensors are reused
/// instead of being returned to the kernel after every step.
int configure_runtime();
/// Overrides the worker count; returns the previous one.
int set_threads(int n);
int thread_count();

}  // namespace kgt
