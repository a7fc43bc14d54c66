// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "liger/ops.hpp"

namespace liger {

enum class GateVariant { GLA, Mamba2, MLSTM, GatedRetention, HGRN2, RWKV6, GSA };

/// How a gate value spreads over the state: one value per head, one per key
/// channel, or one per GSA slot.
enum class GateForm { Scalar, Vector, Slot };

struct GateParams {
    double hgrn2_gamma = 0.5;
    std::size_t gsa_slots = 4;
};

inline constexpr std::array<GateVariant, 7> kAllGateVariants = {
    GateVariant::GLA,   GateVariant::Mamba2, GateVariant::MLSTM, GateVariant::GatedRetention,
    GateVariant::HGRN2, GateVariant::RWKV6,  GateVariant::GSA};

inline std::string to_string(GateVariant v) {
    switch (v) {
    case GateVariant::GLA:
        return "gla";
    case GateVariant::Mamba2:
        return "mamba2";
    case GateVariant::MLSTM:
        return "mlstm";
    case GateVariant::GatedRetention:
        return "gret";
    case GateVariant::HGRN2:
        return "hgrn2";
    case GateVariant::RWKV6:
        return "rwkv6";
    case GateVariant::GSA:
        return "gsa";
    }
    return "?";
}

inline GateVariant parse_gate_variant(const std::string& s) {
    for (GateVariant v : kAllGateVariants) {
        if (to_string(v) == s) {
            return v;
        }
    }
    throw ConfigError("unknown gate variant '" + s + "' (expected gla|hgrn2|gsa|mamba2|mlstm|gret|rwkv6)");
}

inline GateForm gate_form(GateVariant v) {
    switch (v) {
    case GateVariant::Mamba2:
    case GateVariant::MLSTM:
    case GateVariant::GatedRetention:
        return GateForm::Scalar;
    case GateVariant::GSA:
        return GateForm::Slot;
    default:
        return GateForm::Vector;
    }
}

/// Pooled width m for a head of key width dk.
inline std::size_t pooled_dim(GateVariant v, std::size_t key_dim, const GateParams& p) {
    switch (gate_form(v)) {
    case GateForm::Scalar:
        return 1;
    case GateForm::Slot:
        return p.gsa_slots;
    case GateForm::Vector:
        break;
    }
    return key_dim;
}

/// Open interval every gate value of the variant lies in.
inline std::pair<double, double> gate_range(GateVariant v, const GateParams& p) {
    if (v == GateVariant::HGRN2) {
        return {p.hgrn2_gamma, 1.0};
    }
    return {0.0, 1.0};
}

inline void validate_gate_params(GateVariant v, std::size_t key_dim, const GateParams& p) {
    if (v == GateVariant::HGRN2 && !(p.hgrn2_gamma >= 0.0 && p.hgrn2_gamma < 1.0)) {
        throw ConfigError("hgrn2_gamma must lie in [0, 1)");
    }
    const std::size_t m = pooled_dim(v, key_dim, p);
    if (m == 0 || key_dim % m != 0) {
        throw ConfigError("pooled width " + std::to_string(m) + " does not divide key dim " + std::to_string(key_dim));
    }
}

/// Mean over m contiguous equal groups of the last axis.
template <typename T>
Tensor<T> pool_key(const Tensor<T>& k, std::size_t m) {
    const std::size_t d = k.dim(-1);
    if (m == 0 || d % m != 0) {
        throw ConfigError("pool width " + std::to_string(m) + " does not divide key dim " + std::to_string(d));
    }
    if (m == d) {
        return k;
    }
    Shape grouped = k.shape();
    grouped.back() = m;
    grouped.push_back(d / m);
    return mean(reshape(k, grouped), -1);
}

/// Log of the gate built from pooled keys: log sigma, -softplus, -exp, or
/// log(gamma + (1 - gamma) sigma). Finite for every finite input.
template <typename T>
Tensor<T> construct_log_gate(GateVariant v, const Tensor<T>& k, const GateParams& p = {}) {
    const Tensor<T> x = pool_key(k, pooled_dim(v, k.dim(-1), p));
    switch (v) {
    case GateVariant::GLA:
    case GateVariant::MLSTM:
    case GateVariant::GatedRetention:
    case GateVariant::GSA:
        return log_sigmoid(x);
    case GateVariant::Mamba2:
        return -softplus(x);
    case GateVariant::RWKV6:
        return -exp(x);
    case GateVariant::HGRN2: {
        const T gamma = static_cast<T>(p.hgrn2_gamma);
        return log(add_scalar(scale(sigmoid(x), T(1) - gamma), gamma));
    }
    }
    throw ContractError("unknown gate variant");
}

template <typename T>
struct GateValue {
    Tensor<T> values; // [..., m]
    GateForm form = GateForm::Vector;
};

template <typename T>
GateValue<T> construct_gate(GateVariant v, const Tensor<T>& k, const GateParams& p = {}) {
    return {exp(construct_log_gate(v, k, p)), gate_form(v)};
}

/// Expands per-head gate values [H, m] to the decay matrix of a state
/// [H, rows, cols]: scalar gates fill the matrix, vector and slot gates
/// repeat along the columns.
template <typename T>
Tensor<T> gate_broadcast(const GateValue<T>& g, const Shape& state_shape) {
    if (state_shape.size() != 3) {
        throw ContractError("state shape must be [H, rows, cols], got " + shape_str(state_shape));
    }
    const std::size_t heads = state_shape[0];
    const std::size_t rows = state_shape[1];
    const std::size_t m = g.values.numel() / std::max<std::size_t>(heads, 1);
    const bool ok = g.values.numel() == heads * m && (g.form == GateForm::Scalar ? m == 1 : m == rows);
    if (!ok) {
        throw ContractError("gate of shape " + shape_str(g.values.shape()) + " incompatible with state " +
                            shape_str(state_shape));
    }
    return expand(reshape(g.values, Shape{heads, m, 1}), state_shape);
}

} // namespace liger
