#include "ecp/mac_counter.hpp"

namespace ecp {

namespace {
thread_local MacCounter* active_counter = nullptr;
}

MacCounter::MacCounter() noexcept : parent_(active_counter) { active_counter = this; }

MacCounter::~MacCounter() { active_counter = parent_; }

void record_macs(MacKind kind, std::uint64_t count) noexcept {
  MacCounter* c = active_counter;
  if (c == nullptr) return;
  switch (kind) {
    case MacKind::ConvForward: c->tally_.conv_forward += count; break;
    case MacKind::ConvBackward: c->tally_.conv_backward += count; break;
    case MacKind::DenseForward: c->tally_.dense_forward += count; break;
    case MacKind::DenseBackward: c->tally_.dense_backward += count; break;
  }
}

}  // namespace ecp
