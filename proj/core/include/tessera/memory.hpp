#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tessera {

/// Where a buffer lives. `device` models accelerator memory and is the only
/// domain subject to the budget; `host` is staging memory (skip caches,
/// full-image patch batches, reassembled outputs).
enum class Domain : std::uint8_t { device, host };

/// Logical element type. Storage is always float; f16 tensors hold values
/// rounded to binary16 and are accounted at two bytes per element.
enum class DType : std::uint8_t { f32, f16 };

std::size_t dtype_size(DType dtype) noexcept;
std::string_view to_string(DType dtype) noexcept;
/// fp32 | fp16
DType dtype_from_string(std::string_view name);
std::string_view to_string(Domain domain) noexcept;

class OutOfMemory : public std::runtime_error {
 public:
  OutOfMemory(std::size_t requested, std::size_t in_use, std::size_t budget);

  std::size_t requested() const noexcept { return requested_; }
  std::size_t in_use() const noexcept { return in_use_; }
  std::size_t budget() const noexcept { return budget_; }

 private:
  std::size_t requested_;
  std::size_t in_use_;
  std::size_t budget_;
};

struct MemoryStats {
  std::size_t current = 0;
  std::size_t peak = 0;
};

/// Process-wide byte accounting for tensor storage, one counter pair per domain.
class MemoryTracker {
 public:
  static MemoryTracker& instance();

  void allocate(Domain domain, std::size_t bytes);
  void release(Domain domain, std::size_t bytes) noexcept;

  MemoryStats stats(Domain domain) const noexcept;
  /// Sets the high-water mark back to the current level.
  void reset_peak(Domain domain) noexcept;

  /// 0 means unlimited.
  void set_device_budget(std::size_t bytes) noexcept { budget_.store(bytes); }
  std::size_t device_budget() const noexcept { return budget_.load(); }

 private:
  MemoryTracker() = default;

  struct Counter {
    std::atomic<std::size_t> current{0};
    std::atomic<std::size_t> peak{0};
  };
  Counter& counter(Domain domain) noexcept;
  const Counter& counter(Domain domain) const noexcept;

  Counter device_;
  Counter host_;
  std::atomic<std::size_t> budget_{0};
};

/// Restores the previous device budget on scope exit.
class ScopedDeviceBudget {
 public:
  explicit ScopedDeviceBudget(std::size_t bytes);
  ~ScopedDeviceBudget();
  ScopedDeviceBudget(const ScopedDeviceBudget&) = delete;
  ScopedDeviceBudget& operator=(const ScopedDeviceBudget&) = delete;

 private:
  std::size_t previous_;
};

}  // namespace tessera
