#include "vqdraw/kernels.hpp"

#include <atomic>

namespace vqdraw::kernels {

namespace {
std::atomic<bool> g_parallel{false};
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

}  // namespace vqdraw::kernels
