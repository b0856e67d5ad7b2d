#pragma once

namespace disagg {

/// Kernel execution policy. Parallel kernels distribute independent output
/// elements across OpenMP threads; every per-element reduction keeps a fixed
/// summation order, so serial and parallel runs are bit-identical.
enum class Exec { serial, parallel };

Exec execution_policy();
void set_execution_policy(Exec e);

/// True when kernels should spread work across OpenMP threads.
bool run_parallel();

int max_threads();

}  // namespace disagg
