#include "mscnet/common.hpp"

#include <atomic>

namespace mscnet {

namespace {
std::atomic<bool> g_finite_checks{false};
}

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

}  // namespace mscnet
