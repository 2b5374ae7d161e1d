#include "tessera/memory.hpp"

#include <sstream>

namespace tessera {

std::size_t dtype_size(DType dtype) noexcept {
  return dtype == DType::f16 ? 2 : 4;
}

std::string_view to_string(DType dtype) noexcept {
  return dtype == DType::f16 ? "fp16" : "fp32";
}

DType dtype_from_string(std::string_view name) {
  if (name == "fp32") return DType::f32;
  if (name == "fp16") return DType::f16;
  throw std::invalid_argument("unknown precision '" + std::string(name) + "' (fp32, fp16)");
}

std::string_view to_string(Domain domain) noexcept {
  return domain == Domain::host ? "host" : "device";
}

namespace {
std::string oom_message(std::size_t requested, std::size_t in_use, std::size_t budget) {
  std::ostringstream os;
  os << "device allocation of " << requested << " bytes exceeds budget (" << in_use << " of "
     << budget << " bytes in use)";
  return os.str();
}
}  // namespace

OutOfMemory::OutOfMemory(std::size_t requested, std::size_t in_use, std::size_t budget)
    : std::runtime_error(oom_message(requested, in_use, budget)),
      requested_(requested),
      in_use_(in_use),
      budget_(budget) {}

MemoryTracker& MemoryTracker::instance() {
  static MemoryTracker tracker;
  return tracker;
}

MemoryTracker::Counter& MemoryTracker::counter(Domain domain) noexcept {
  return domain == Domain::host ? host_ : device_;
}

const MemoryTracker::Counter& MemoryTracker::counter(Domain domain) const noexcept {
  return domain == Domain::host ? host_ : device_;
}

void MemoryTracker::allocate(Domain domain, std::size_t bytes) {
  Counter& c = counter(domain);
  const std::size_t budget = budget_.load();
  std::size_t now = c.current.fetch_add(bytes) + bytes;
  if (domain == Domain::device && budget != 0 && now > budget) {
    c.current.fetch_sub(bytes);
    throw OutOfMemory(bytes, now - bytes, budget);
  }
  std::size_t peak = c.peak.load();
  while (now > peak && !c.peak.compare_exchange_weak(peak, now)) {
  }
}

void MemoryTracker::release(Domain domain, std::size_t bytes) noexcept {
  counter(domain).current.fetch_sub(bytes);
}

MemoryStats MemoryTracker::stats(Domain domain) const noexcept {
  const Counter& c = counter(domain);
  return {c.current.load(), c.peak.load()};
}

void MemoryTracker::reset_peak(Domain domain) noexcept {
  Counter& c = counter(domain);
  c.peak.store(c.current.load());
}

ScopedDeviceBudget::ScopedDeviceBudget(std::size_t bytes)
    : previous_(MemoryTracker::instance().device_budget()) {
  MemoryTracker::instance().set_device_budget(bytes);
}

ScopedDeviceBudget::~ScopedDeviceBudget() {
  MemoryTracker::instance().set_device_budget(previous_);
}

}  // namespace tessera
