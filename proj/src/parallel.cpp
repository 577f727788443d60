#include "scribblediff/parallel.hpp"

#include <atomic>
#include <thread>

namespace scribblediff {

namespace {
std::atomic<int> g_jobs{0};
}

int max_jobs() {
    const int j = g_jobs.load(std::memory_order_relaxed);
    if (j > 0) return j;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_max_jobs(int jobs) { g_jobs.store(jobs < 0 ? 0 : jobs, std::memory_order_relaxed); }

}  // namespace scribblediff
