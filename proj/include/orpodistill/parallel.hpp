#pragma once

namespace orpod::par {

// Number of worker threads used by the OpenMP kernels and the coarse
// parallel loops (batch gradients, trace generation). Resolved once from
// ORPO_DISTILL_THREADS, clamped to [1, omp_get_max_threads()].
int max_threads();

// Override for tests (pass 0 to re-resolve from the environment).
void set_max_threads(int n);

}  // namespace orpod::par
