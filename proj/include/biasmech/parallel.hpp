#pragma once

// Thin wrappers so the kernels compile with and without OpenMP.

#ifdef _OPENMP
#include <omp.h>
#endif

namespace biasmech {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

// Selects the serial reference path or the OpenMP path of a kernel.
enum class Execution { Serial, Parallel };

}  // namespace biasmech
