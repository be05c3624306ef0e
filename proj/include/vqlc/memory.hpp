#pragma once

// Allocation accounting used by the scalability benchmark. Every Tensor2 and
// the hierarchical distance matrix allocate through TrackingAllocator, so the
// live/peak byte counts below reflect the dominant buffers of each method.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdio>
#include <memory>
#include <new>
#include <thread>

#include <unistd.h>

namespace vqlc {

class MemoryTracker {
 public:
  static MemoryTracker& instance() {
    static MemoryTracker tracker;
    return tracker;
  }

  void on_alloc(std::size_t bytes) noexcept {
    const std::size_t now = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t prev = peak_.load(std::memory_order_relaxed);
    while (now > prev && !peak_.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
    }
  }

  void on_free(std::size_t bytes) noexcept { live_.fetch_sub(bytes, std::memory_order_relaxed); }

  std::size_t live() const noexcept { return live_.load(std::memory_order_relaxed); }
  std::size_t peak() const noexcept { return peak_.load(std::memory_order_relaxed); }

  /// Restart peak tracking from the current live size.
  void reset_peak() noexcept { peak_.store(live(), std::memory_order_relaxed); }

 private:
  MemoryTracker() = default;
  std::atomic<std::size_t> live_{0};
  std::atomic<std::size_t> peak_{0};
};

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::allocator_traits<std::allocator<T>>::max_size(std::allocator<T>{})) {
      throw std::bad_array_new_length();
    }
    T* p = std::allocator<T>{}.allocate(n);
    MemoryTracker::instance().on_alloc(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    MemoryTracker::instance().on_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

/// Resident set size of this process in bytes, or 0 when /proc is unavailable.
inline std::size_t current_rss_bytes() {
  std::FILE* f = std::fopen("/proc/self/statm", "r");
  if (!f) return 0;
  unsigned long size = 0, resident = 0;
  const int got = std::fscanf(f, "%lu %lu", &size, &resident);
  std::fclose(f);
  if (got != 2) return 0;
  return static_cast<std::size_t>(resident) * static_cast<std::size_t>(sysconf(_SC_PAGESIZE));
}

/// Polls RSS on a background thread while alive and reports the peak increase
/// over the RSS observed at construction.
class RssPoller {
 public:
  explicit RssPoller(std::chrono::milliseconds cadence = std::chrono::milliseconds(10))
      : baseline_(current_rss_bytes()), peak_(baseline_) {
    worker_ = std::thread([this, cadence] {
      while (!stop_.load(std::memory_order_acquire)) {
        sample();
        std::this_thread::sleep_for(cadence);
      }
    });
  }

  RssPoller(const RssPoller&) = delete;
  RssPoller& operator=(const RssPoller&) = delete;

  ~RssPoller() { stop(); }

  void stop() {
    if (worker_.joinable()) {
      stop_.store(true, std::memory_order_release);
      worker_.join();
      sample();
    }
  }

  std::size_t peak_delta() const noexcept {
    const std::size_t p = peak_.load();
    return p > baseline_ ? p - baseline_ : 0;
  }

 private:
  void sample() {
    const std::size_t now = current_rss_bytes();
    std::size_t prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }

  std::size_t baseline_;
  std::atomic<std::size_t> peak_;
  std::atomic<bool> stop_{false};
  std::thread worker_;
};

}  // namespace vqlc
