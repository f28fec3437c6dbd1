#pragma once

// Process-wide settings for the training binaries. No-ops where unsupported.

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace divo {

// glibc returns large freed blocks to the OS by default, so every batch-sized
// temporary in the training loop page-faults on reuse. Raising the thresholds
// keeps them on the heap.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // the largest value glibc accepts
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

// Flush denormals to zero (FTZ + DAZ). Late in training some float32
// activations and gradients drift into the denormal range, where every
// multiply takes a slow microcode path.
inline void flush_denormals() {
#if defined(__SSE__)
  _mm_setcsr(_mm_getcsr() | 0x8040);
#endif
}

inline void configure_runtime() {
  configure_allocator();
  flush_denormals();
}

}  // namespace divo
