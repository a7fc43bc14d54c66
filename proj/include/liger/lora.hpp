// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>

#include "liger/ops.hpp"

namespace liger {

/// Low-rank update for a [D_in, D_out] weight: delta = (alpha / r) B A with
/// B [D_in, r] and A [r, D_out]. B starts at zero.
template <typename T>
struct LoraAdapter {
    Tensor<T> B;
    Tensor<T> A;
    double alpha = 8.0;

    std::size_t rank() const { return B.dim(1); }
    T scaling() const { return static_cast<T>(alpha / static_cast<double>(rank())); }

    static LoraAdapter init(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, Rng& rng) {
        if (rank == 0) {
            throw ConfigError("LoRA rank must be >= 1");
        }
        LoraAdapter a;
        a.B = Tensor<T>::zeros({d_in, rank});
        const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
        a.A = Tensor<T>::uniform({rank, d_out}, rng, -bound, bound);
        a.alpha = alpha;
        return a;
    }

    std::size_t parameter_count() const { return B.numel() + A.numel(); }
};

/// x W + (alpha / r) (x B) A, without forming W + delta.
template <typename T>
Tensor<T> lora_apply(const Tensor<T>& x, const Tensor<T>& w, const std::optional<LoraAdapter<T>>& adapter) {
    Tensor<T> y = matmul(x, w);
    if (!adapter) {
        return y;
    }
    const LoraAdapter<T>& a = *adapter;
    if (a.B.rank() != 2 || a.A.rank() != 2 || a.B.dim(1) != a.A.dim(0) || a.B.dim(0) != w.dim(0) ||
        a.A.dim(1) != w.dim(1)) {
        throw ContractError("LoRA factors " + shape_str(a.B.shape()) + " x " + shape_str(a.A.shape()) +
                            " do not fit weight " + shape_str(w.shape()));
    }
    return y + scale(matmul(matmul(x, a.B), a.A), a.scaling());
}

/// Trainable values added by rank-r adapters on three D x D projections in
/// each of L layers.
inline std::size_t lora_parameter_count(std::size_t layers, std::size_t dim, std::size_t rank) {
    return 3 * layers * 2 * rank * dim;
}

} // namespace liger
