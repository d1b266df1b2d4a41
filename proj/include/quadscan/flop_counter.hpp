#pragma once

#include <cstdint>

namespace quadscan {

/// Thread-local tally of multiply-accumulates performed by forward kernels.
/// Counting is off unless a FlopCounter is alive on the thread.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t macs() const { return macs_; }

  static void add(std::uint64_t macs);

 private:
  std::uint64_t macs_ = 0;
  FlopCounter* previous_;
};

}  // namespace quadscan
