#pragma once

#include <cstdint>

namespace ecp {

enum class MacKind { ConvForward, ConvBackward, DenseForward, DenseBackward };

/// Multiply-accumulate totals, split by layer family and direction.
struct MacTally {
  std::uint64_t conv_forward = 0;
  std::uint64_t conv_backward = 0;
  std::uint64_t dense_forward = 0;
  std::uint64_t dense_backward = 0;

  std::uint64_t total() const noexcept {
    return conv_forward + conv_backward + dense_forward + dense_backward;
  }
  friend bool operator==(const MacTally&, const MacTally&) = default;
};

/// Scoped counter. While alive, every layer kernel on this thread reports the
/// MACs it executes here. Counters nest; the innermost one receives counts.
/// Counting never touches numeric results.
class MacCounter {
 public:
  MacCounter() noexcept;
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  const MacTally& tally() const noexcept { return tally_; }
  void reset() noexcept { tally_ = {}; }

 private:
  friend void record_macs(MacKind, std::uint64_t) noexcept;
  MacTally tally_;
  MacCounter* parent_;
};

/// Called by kernels; a no-op when no counter is active.
void record_macs(MacKind kind, std::uint64_t count) noexcept;

}  // namespace ecp
