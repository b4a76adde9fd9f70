// Vectorized elementwise sin/cos via glibc's libmvec when available,
// scalar libm otherwise. Element i always takes the same code path for a
// fixed length, so results are reproducible run to run.
#pragma once

#include <cmath>

#if defined(__x86_64__) && defined(__GLIBC__) && defined(__AVX512F__)
#define T2FORGE_HAVE_MVEC512 1
#include <immintrin.h>
extern "C" {
__m512d _ZGVeN8v_sin(__m512d);
__m512d _ZGVeN8v_cos(__m512d);
}
#elif defined(__x86_64__) && defined(__GLIBC__) && defined(__AVX2__)
#define T2FORGE_HAVE_MVEC256 1
#include <immintrin.h>
extern "C" {
__m256d _ZGVdN4v_sin(__m256d);
__m256d _ZGVdN4v_cos(__m256d);
}
#endif

namespace t2forge {

inline void vsin(const double* x, double* out, int n) {
    int i = 0;
#if defined(T2FORGE_HAVE_MVEC512)
    for (; i + 8 <= n; i += 8)
        _mm512_storeu_pd(out + i, _ZGVeN8v_sin(_mm512_loadu_pd(x + i)));
#elif defined(T2FORGE_HAVE_MVEC256)
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _ZGVdN4v_sin(_mm256_loadu_pd(x + i)));
#endif
    for (; i < n; ++i) out[i] = std::sin(x[i]);
}

inline void vcos(const double* x, double* out, int n) {
    int i = 0;
#if defined(T2FORGE_HAVE_MVEC512)
    for (; i + 8 <= n; i += 8)
        _mm512_storeu_pd(out + i, _ZGVeN8v_cos(_mm512_loadu_pd(x + i)));
#elif defined(T2FORGE_HAVE_MVEC256)
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _ZGVdN4v_cos(_mm256_loadu_pd(x + i)));
#endif
    for (; i < n; ++i) out[i] = std::cos(x[i]);
}

} // namespace t2forge
