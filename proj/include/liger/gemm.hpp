// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

namespace liger::gemm {

// Row-major, accumulate-into-C kernels. Loop orders keep the innermost loop
// contiguous so the compiler can vectorize without reassociating sums.

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) {
                continue;
            }
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) {
                continue;
            }
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < k; ++p) {
            bt[p * n + j] = b[j * k + p];
        }
    }
    nn(m, n, k, a, bt.data(), c);
}

} // namespace liger::gemm
