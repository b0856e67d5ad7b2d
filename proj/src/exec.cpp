#include "disagg/exec.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace disagg {

namespace {
std::atomic<Exec> g_policy{Exec::parallel};
}

Exec execution_policy() { return g_policy.load(std::memory_order_relaxed); }

void set_execution_policy(Exec e) { g_policy.store(e, std::memory_order_relaxed); }

bool run_parallel() { return execution_policy() == Exec::parallel; }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace disagg
