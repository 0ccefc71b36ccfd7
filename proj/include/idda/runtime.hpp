#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace idda {

/// Keeps large per-step buffers (im2col columns, activations) on the heap
/// instead of fresh mmap regions. Every training step rebuilds its graph, and
/// faulting in new pages each time costs more than the convolutions. Call once
/// at program start; a no-op outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace idda
