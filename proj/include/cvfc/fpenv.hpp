#pragma once

#if defined(__SSE__) || defined(__x86_64__)
#include <xmmintrin.h>
#define CVFC_HAVE_MXCSR 1
#endif

namespace cvfc {

/// Flushes subnormal floats to zero for the current thread while alive.
/// Saturated softmax gradients otherwise produce subnormals that slow the
/// attention backward pass by an order of magnitude.
class FlushDenormals {
 public:
#ifdef CVFC_HAVE_MXCSR
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }
#else
  FlushDenormals() = default;
#endif
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
#ifdef CVFC_HAVE_MXCSR
  unsigned saved_;
#endif
};

}  // namespace cvfc
