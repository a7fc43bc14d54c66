// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>

#include "liger/gated.hpp"
#include "liger/gating.hpp"

namespace liger {

/// Gated kernel inputs with log gates built from the keys.
template <typename T>
struct KernelInputs {
    Tensor<T> q, k, v, log_gates;

    template <typename U>
    KernelInputs<U> cast() const {
        return {q.template cast<U>(), k.template cast<U>(), v.template cast<U>(), log_gates.template cast<U>()};
    }
};

/// q, k: [B, T, dk]; v: [B, T, dv]; standard normal.
template <typename T>
KernelInputs<T> random_kernel_inputs(GateVariant var, std::size_t batch, std::size_t steps, std::size_t dk,
                                     std::size_t dv, Rng& rng, const GateParams& p = {}) {
    KernelInputs<T> in;
    in.q = Tensor<T>::randn({batch, steps, dk}, rng, 1.0);
    in.k = Tensor<T>::randn({batch, steps, dk}, rng, 1.0);
    in.v = Tensor<T>::randn({batch, steps, dv}, rng, 1.0);
    in.log_gates = construct_log_gate(var, in.k, p);
    return in;
}

/// Runs a variant's token mixer in one form, with the model's feature maps.
template <typename T>
Tensor<T> run_kernel(GateVariant var, KernelForm form, const KernelInputs<T>& in, std::size_t chunk = 16) {
    switch (var) {
    case GateVariant::HGRN2:
        return hgrn2_form(form, feature_map(in.q, FeatureMap::Softmax), in.v, in.log_gates, chunk);
    case GateVariant::GSA:
        return gsa_form(form, in.q, in.k, in.v, in.log_gates, chunk);
    default:
        return gated_form(form, in.q, in.k, in.v, in.log_gates, FeatureMap::Softmax, chunk);
    }
}

/// Largest deviation over the three form pairs.
template <typename T>
double form_deviation(GateVariant var, const KernelInputs<T>& in, std::size_t chunk = 16) {
    const Tensor<T> rec = run_kernel(var, KernelForm::Recurrent, in, chunk);
    const Tensor<T> par = run_kernel(var, KernelForm::Parallel, in, chunk);
    const Tensor<T> chk = run_kernel(var, KernelForm::Chunkwise, in, chunk);
    return static_cast<double>(
        std::max({max_abs_diff(rec, par), max_abs_diff(rec, chk), max_abs_diff(par, chk)}));
}

} // namespace liger
