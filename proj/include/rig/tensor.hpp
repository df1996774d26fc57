#pragma once

#include <cstddef>
#include <cstring>

namespace rig {

// c[M,N] (+)= a[M,K] x b[K,N], row-major.
//
// The inner accumulation for every output element visits k in ascending
// order.  Every matrix product in the model — batched training forward,
// backward, and the incremental KV-cache decoder — reduces in exactly this
// per-element order, which is what makes cached decoding bit-identical to
// full recomputation (no FP reassociation anywhere; contraction is compiled
// off).
inline void matmul(const double* a, const double* b, double* c, int M, int K, int N,
                   bool accumulate = false) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(M) * N);
    for (int i = 0; i < M; ++i) {
        const double* ar = a + static_cast<size_t>(i) * K;
        double* cr = c + static_cast<size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const double av = ar[k];
            const double* br = b + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) cr[j] += av * br[j];
        }
    }
}

// at[N,M] = transpose of a[M,N].
inline void transpose(const double* a, double* at, int M, int N) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) at[static_cast<size_t>(j) * M + i] = a[static_cast<size_t>(i) * N + j];
}

}  // namespace rig
