// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "liger/attention.hpp"

namespace liger {

/// Per-head decode state. Only the fields a given kernel needs are sized.
template <typename T>
struct RecurrentState {
    Tensor<T> S;       // [H, dk, dv]
    Tensor<T> z;       // [H, dk], normalized linear attention only
    Tensor<T> k_tilde; // [H, M, dk], GSA only
    Tensor<T> v_tilde; // [H, M, dv], GSA only

    static RecurrentState gated(std::size_t heads, std::size_t dk, std::size_t dv) {
        RecurrentState s;
        s.S = Tensor<T>::zeros({heads, dk, dv});
        return s;
    }

    static RecurrentState slots(std::size_t heads, std::size_t m, std::size_t dk, std::size_t dv) {
        RecurrentState s;
        s.k_tilde = Tensor<T>::zeros({heads, m, dk});
        s.v_tilde = Tensor<T>::zeros({heads, m, dv});
        return s;
    }

    std::size_t bytes() const {
        std::size_t total = 0;
        for (const Tensor<T>* t : {&S, &z, &k_tilde, &v_tilde}) {
            total += t->defined() ? t->bytes() : 0;
        }
        return total;
    }

    bool finite() const {
        for (const Tensor<T>* t : {&S, &z, &k_tilde, &v_tilde}) {
            if (t->defined() && !all_finite(*t)) {
                return false;
            }
        }
        return true;
    }
};

enum class KernelForm { Recurrent, Parallel, Chunkwise };

inline std::string to_string(KernelForm f) {
    switch (f) {
    case KernelForm::Recurrent:
        return "recurrent";
    case KernelForm::Parallel:
        return "parallel";
    case KernelForm::Chunkwise:
        return "chunkwise";
    }
    return "?";
}

template <typename T>
struct GatedOutput {
    Tensor<T> output; // same rank as the query input
    Tensor<T> state;  // final S [B, dk, dv]
};

namespace detail {

template <typename T>
void check_gate_range(std::span<const T> g, T lo, T hi, const char* what) {
    for (T v : g) {
        if (!(v >= lo && v <= hi)) {
            throw ContractError(std::string(what) + " gate value " + std::to_string(static_cast<double>(v)) +
                                " outside [" + std::to_string(static_cast<double>(lo)) + ", " +
                                std::to_string(static_cast<double>(hi)) + "]");
        }
    }
}

// Gate given per head as [B, m] with m in {1, dk}; returns [B, dk, 1] for
// broadcasting against S [B, dk, dv].
template <typename T>
Tensor<T> gate_column(const Tensor<T>& g, std::size_t batch, std::size_t dk) {
    const std::size_t m = g.numel() / std::max<std::size_t>(batch, 1);
    if (g.numel() != batch * m || (m != 1 && m != dk)) {
        throw DimensionError("gate of shape " + shape_str(g.shape()) + " cannot broadcast over key dim " +
                             std::to_string(dk));
    }
    return reshape(g, Shape{batch, m, 1});
}

template <typename T>
Tensor<T> expand_log_gate(const Tensor<T>& lg, const Shape& key_shape) {
    if (lg.shape() == key_shape) {
        return lg;
    }
    if (lg.rank() == key_shape.size() && lg.dim(-1) == 1) {
        return expand(lg, key_shape);
    }
    throw DimensionError("log gates " + shape_str(lg.shape()) + " do not match keys " + shape_str(key_shape));
}

} // namespace detail

/// Decay-weighted causal scores for one chunk: for q, k, lg of shape
/// [B, C, d], A[b, t, i] = sum_d q[t,d] k[i,d] exp(sum_{i<j<=t} lg[j,d]) for
/// i <= t and 0 above the diagonal. Exponents are running sums of log gates,
/// so a -inf gate zeroes every older contribution exactly.
template <typename T>
Tensor<T> decayed_scores(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& lg) {
    if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != lg.shape()) {
        throw DimensionError("decayed_scores expects matching [B, C, d] inputs");
    }
    const std::size_t batch = q.dim(0);
    const std::size_t steps = q.dim(1);
    const std::size_t d = q.dim(2);
    std::vector<T> out(batch * steps * steps, T(0));
    const T* qv = q.data().data();
    const T* kv = k.data().data();
    const T* lv = lg.data().data();
    std::vector<T> run(d);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * steps * d;
        for (std::size_t i = 0; i < steps; ++i) {
            std::fill(run.begin(), run.end(), T(0));
            const T* ki = kv + base + i * d;
            for (std::size_t t = i; t < steps; ++t) {
                const T* qt = qv + base + t * d;
                const T* lt = lv + base + t * d;
                T acc = T(0);
                for (std::size_t j = 0; j < d; ++j) {
                    if (t > i) {
                        run[j] += lt[j];
                    }
                    acc += qt[j] * ki[j] * std::exp(run[j]);
                }
                out[(b * steps + t) * steps + i] = acc;
            }
        }
    }
    return detail::make_result(Shape{batch, steps, steps}, std::move(out), {q, k, lg},
                               [batch, steps, d](Node<T>& self) {
        T* gq = detail::parent_grad(self, 0);
        T* gk = detail::parent_grad(self, 1);
        T* gl = detail::parent_grad(self, 2);
        const T* qv = self.parents[0]->data.data();
        const T* kv = self.parents[1]->data.data();
        const T* lv = self.parents[2]->data.data();
        std::vector<T> run(d);
        std::vector<T> contrib(steps * d);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = b * steps * d;
            for (std::size_t i = 0; i < steps; ++i) {
                std::fill(run.begin(), run.end(), T(0));
                const T* ki = kv + base + i * d;
                for (std::size_t t = i; t < steps; ++t) {
                    const T g = self.grad[(b * steps + t) * steps + i];
                    const T* qt = qv + base + t * d;
                    const T* lt = lv + base + t * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        if (t > i) {
                            run[j] += lt[j];
                        }
                        const T e = std::exp(run[j]);
                        if (gq) {
                            gq[base + t * d + j] += g * ki[j] * e;
                        }
                        if (gk) {
                            gk[base + i * d + j] += g * qt[j] * e;
                        }
                        contrib[t * d + j] = g * qt[j] * ki[j] * e;
                    }
                }
                if (!gl) {
                    continue;
                }
                // lg[j] enters every exponent with i < j <= t, so its gradient
                // is a suffix sum over t.
                std::fill(run.begin(), run.end(), T(0));
                for (std::size_t t = steps; t-- > i + 1;) {
                    for (std::size_t j = 0; j < d; ++j) {
                        run[j] += contrib[t * d + j];
                        gl[base + t * d + j] += run[j];
                    }
                }
            }
        }
    });
}

/// One step of the gated recurrence S' = G (.) S + phi(k)^T v, o = phi(q) S'.
/// q, k: [H, dk]; v: [H, dv]; gate: [H, dk] (vector) or [H, 1] (scalar),
/// with values in [0, 1]. state.S is [H, dk, dv] and is replaced.
template <typename T>
Tensor<T> gated_recurrent_step(RecurrentState<T>& state, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, const Tensor<T>& gate, FeatureMap phi) {
    const std::size_t heads = state.S.dim(0);
    const std::size_t dk = state.S.dim(1);
    const std::size_t dv = state.S.dim(2);
    if (q.numel() != heads * dk || k.numel() != heads * dk || v.numel() != heads * dv) {
        throw DimensionError("gated_recurrent_step inputs do not match state " + shape_str(state.S.shape()));
    }
    detail::check_gate_range(gate.data(), T(0), T(1), "decay");
    const Tensor<T> pq = feature_map(reshape(q, Shape{heads, dk}), phi);
    const Tensor<T> pk = feature_map(reshape(k, Shape{heads, dk}), phi);
    const Tensor<T> write = matmul(reshape(pk, Shape{heads, dk, 1}), reshape(v, Shape{heads, 1, dv}));
    state.S = detail::gate_column(gate, heads, dk) * state.S + write;
    return reshape(matmul(reshape(pq, Shape{heads, 1, dk}), state.S), Shape{heads, dv});
}

/// Step form over a whole sequence. q, k: [B, T, dk] or [T, dk]; log gates
/// match q or have a trailing dimension of 1 (scalar gate).
template <typename T>
GatedOutput<T> gated_recurrent(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const Tensor<T>& log_gates, FeatureMap phi,
                               const std::optional<Tensor<T>>& initial = std::nullopt) {
    detail::check_qkv(q_in, k_in, v_in);
    const Tensor<T> q = detail::as_batched(q_in, "q");
    const Tensor<T> k = detail::as_batched(k_in, "k");
    const Tensor<T> v = detail::as_batched(v_in, "v");
    const Tensor<T> lg = detail::as_batched(log_gates, "log gates");
    const std::size_t batch = q.dim(0);
    const std::size_t steps = q.dim(1);
    const std::size_t dk = q.dim(2);
    const std::size_t dv = v.dim(2);
    const std::size_t m = lg.dim(2);
    RecurrentState<T> state = RecurrentState<T>::gated(batch, dk, dv);
    if (initial) {
        state.S = *initial;
    }
    std::vector<Tensor<T>> outs;
    outs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        auto row = [t](const Tensor<T>& x, std::size_t width) {
            return reshape(narrow(x, 1, t, 1), Shape{x.dim(0), width});
        };
        const Tensor<T> o = gated_recurrent_step(state, row(q, dk), row(k, dk), row(v, dv), exp(row(lg, m)), phi);
        outs.push_back(reshape(o, Shape{batch, 1, dv}));
    }
    return {detail::restore_rank(concat(outs, 1), q_in.rank()), state.S};
}

/// Masked-parallel (quadratic) form: decayed causal scores times V.
template <typename T>
Tensor<T> gated_parallel_masked(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                                const Tensor<T>& log_gates, FeatureMap phi) {
    detail::check_qkv(q_in, k_in, v_in);
    const Tensor<T> q = feature_map(detail::as_batched(q_in, "q"), phi);
    const Tensor<T> k = feature_map(detail::as_batched(k_in, "k"), phi);
    const Tensor<T> v = detail::as_batched(v_in, "v");
    const Tensor<T> lg = detail::expand_log_gate(detail::as_batched(log_gates, "log gates"), q.shape());
    return detail::restore_rank(matmul(decayed_scores(q, k, lg), v), q_in.rank());
}

/// Chunkwise form: masked scores inside each chunk, carried state between
/// chunks. Returns the output and the final state.
template <typename T>
GatedOutput<T> gated_chunkwise(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const Tensor<T>& log_gates, std::size_t chunk, FeatureMap phi,
                               const std::optional<Tensor<T>>& initial = std::nullopt) {
    detail::check_qkv(q_in, k_in, v_in);
    if (chunk == 0) {
        throw ContractError("chunk size must be >= 1");
    }
    const Tensor<T> q = feature_map(detail::as_batched(q_in, "q"), phi);
    const Tensor<T> k = feature_map(detail::as_batched(k_in, "k"), phi);
    const Tensor<T> v = detail::as_batched(v_in, "v");
    const Tensor<T> lg = detail::expand_log_gate(detail::as_batched(log_gates, "log gates"), q.shape());
    const std::size_t batch = q.dim(0);
    const std::size_t steps = q.dim(1);
    const std::size_t dk = q.dim(2);
    std::optional<Tensor<T>> state = initial;
    std::vector<Tensor<T>> outs;
    for (std::size_t start = 0; start < steps; start += chunk) {
        const std::size_t len = std::min(chunk, steps - start);
        const Tensor<T> qc = narrow(q, 1, start, len);
        const Tensor<T> kc = narrow(k, 1, start, len);
        const Tensor<T> vc = narrow(v, 1, start, len);
        const Tensor<T> lc = narrow(lg, 1, start, len);
        const Tensor<T> decay_in = cumsum(lc, 1);
        Tensor<T> out = matmul(decayed_scores(qc, kc, lc), vc);
        if (state) {
            out = out + matmul(qc * exp(decay_in), *state);
        }
        const Tensor<T> decay_out = cumsum(lc, 1, /*reverse=*/true, /*exclusive=*/true);
        const Tensor<T> write = matmul(transpose(kc * exp(decay_out)), vc);
        if (state) {
            const Tensor<T> total = reshape(narrow(decay_in, 1, len - 1, 1), Shape{batch, dk, 1});
            state = exp(total) * *state + write;
        } else {
            state = write;
        }
        outs.push_back(out);
    }
    return {detail::restore_rank(concat(outs, 1), q_in.rank()), *state};
}

/// Dispatches one of the three equivalent forms.
template <typename T>
Tensor<T> gated_form(KernelForm form, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                     const Tensor<T>& log_gates, FeatureMap phi, std::size_t chunk = 16) {
    switch (form) {
    case KernelForm::Recurrent:
        return gated_recurrent(q, k, v, log_gates, phi).output;
    case KernelForm::Parallel:
        return gated_parallel_masked(q, k, v, log_gates, phi);
    case KernelForm::Chunkwise:
        return gated_chunkwise(q, k, v, log_gates, chunk, phi).output;
    }
    throw ContractError("unknown kernel form");
}

// ---------------------------------------------------------------------------
// HGRN2: the complementary gate takes the place of the key.

/// S' = G (.) S + (1 - G)^T v, o = q S'. q: [H, dk]; v: [H, dv]; gate [H, dk]
/// strictly inside (0, 1).
template <typename T>
Tensor<T> hgrn2_step(RecurrentState<T>& state, const Tensor<T>& q, const Tensor<T>& v, const Tensor<T>& gate) {
    const std::size_t heads = state.S.dim(0);
    const std::size_t dk = state.S.dim(1);
    const std::size_t dv = state.S.dim(2);
    if (q.numel() != heads * dk || v.numel() != heads * dv || gate.numel() != heads * dk) {
        throw DimensionError("hgrn2_step inputs do not match state " + shape_str(state.S.shape()));
    }
    detail::check_gate_range(gate.data(), T(0), T(1), "hgrn2");
    const Tensor<T> g = reshape(gate, Shape{heads, dk, 1});
    const Tensor<T> write = matmul(add_scalar(-g, T(1)), reshape(v, Shape{heads, 1, dv}));
    state.S = g * state.S + write;
    return reshape(matmul(reshape(q, Shape{heads, 1, dk}), state.S), Shape{heads, dv});
}

/// HGRN2 over a sequence in any form. q: [B, T, dk] (already feature-mapped
/// if desired); log gates [B, T, dk].
template <typename T>
Tensor<T> hgrn2_form(KernelForm form, const Tensor<T>& q_in, const Tensor<T>& v_in, const Tensor<T>& log_gates,
                     std::size_t chunk = 16) {
    const Tensor<T> q = detail::as_batched(q_in, "q");
    const Tensor<T> v = detail::as_batched(v_in, "v");
    const Tensor<T> lg = detail::as_batched(log_gates, "log gates");
    if (lg.shape() != q.shape()) {
        throw DimensionError("hgrn2 needs a vector gate per key channel");
    }
    if (form != KernelForm::Recurrent) {
        const Tensor<T> key = add_scalar(-exp(lg), T(1));
        return detail::restore_rank(gated_form(form, q, key, v, lg, FeatureMap::Identity, chunk), q_in.rank());
    }
    detail::check_qkv(q, q, v);
    const std::size_t batch = q.dim(0);
    const std::size_t steps = q.dim(1);
    const std::size_t dk = q.dim(2);
    const std::size_t dv = v.dim(2);
    RecurrentState<T> state = RecurrentState<T>::gated(batch, dk, dv);
    std::vector<Tensor<T>> outs;
    for (std::size_t t = 0; t < steps; ++t) {
        auto row = [t](const Tensor<T>& x) { return reshape(narrow(x, 1, t, 1), Shape{x.dim(0), x.dim(2)}); };
        outs.push_back(reshape(hgrn2_step(state, row(q), row(v), exp(row(lg))), Shape{batch, 1, dv}));
    }
    return detail::restore_rank(concat(outs, 1), q_in.rank());
}

// ---------------------------------------------------------------------------
// GSA: M gated slots read out through a softmax over slots.

/// K~' = G K~ + (1 - G)^T k, V~' likewise, o = softmax(K~' q)^T V~'.
/// q, k: [H, dk]; v: [H, dv]; gate: [H, M].
template <typename T>
Tensor<T> gsa_step(RecurrentState<T>& state, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                   const Tensor<T>& gate) {
    const std::size_t heads = state.k_tilde.dim(0);
    const std::size_t slots = state.k_tilde.dim(1);
    const std::size_t dk = state.k_tilde.dim(2);
    const std::size_t dv = state.v_tilde.dim(2);
    if (gate.numel() != heads * slots) {
        throw ContractError("gsa gate has " + std::to_string(gate.numel() / std::max<std::size_t>(heads, 1)) +
                            " slots per head, state has " + std::to_string(slots));
    }
    if (q.numel() != heads * dk || k.numel() != heads * dk || v.numel() != heads * dv) {
        throw DimensionError("gsa_step inputs do not match state");
    }
    detail::check_gate_range(gate.data(), T(0), T(1), "gsa");
    const Tensor<T> g = reshape(gate, Shape{heads, slots, 1});
    const Tensor<T> keep = add_scalar(-g, T(1));
    state.k_tilde = g * state.k_tilde + keep * reshape(k, Shape{heads, 1, dk});
    state.v_tilde = g * state.v_tilde + keep * reshape(v, Shape{heads, 1, dv});
    const Tensor<T> scores = reshape(matmul(state.k_tilde, reshape(q, Shape{heads, dk, 1})), Shape{heads, 1, slots});
    return reshape(matmul(softmax(scores, -1), state.v_tilde), Shape{heads, dv});
}

/// GSA over a sequence. q, k: [B, T, dk]; v: [B, T, dv]; log gates [B, T, M].
/// The non-recurrent forms run two gated passes: slot scores with the M
/// slots as extra heads, then the slot-softmax weights as queries.
template <typename T>
Tensor<T> gsa_form(KernelForm form, const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                   const Tensor<T>& log_gates, std::size_t chunk = 16) {
    detail::check_qkv(q_in, k_in, v_in);
    const Tensor<T> q = detail::as_batched(q_in, "q");
    const Tensor<T> k = detail::as_batched(k_in, "k");
    const Tensor<T> v = detail::as_batched(v_in, "v");
    const Tensor<T> lg = detail::as_batched(log_gates, "log gates");
    const std::size_t batch = q.dim(0);
    const std::size_t steps = q.dim(1);
    const std::size_t dk = q.dim(2);
    const std::size_t dv = v.dim(2);
    const std::size_t slots = lg.dim(2);
    if (lg.dim(0) != batch || lg.dim(1) != steps) {
        throw DimensionError("gsa log gates " + shape_str(lg.shape()) + " do not match sequence");
    }
    if (form == KernelForm::Recurrent) {
        RecurrentState<T> state = RecurrentState<T>::slots(batch, slots, dk, dv);
        std::vector<Tensor<T>> outs;
        for (std::size_t t = 0; t < steps; ++t) {
            auto row = [t](const Tensor<T>& x) { return reshape(narrow(x, 1, t, 1), Shape{x.dim(0), x.dim(2)}); };
            outs.push_back(reshape(gsa_step(state, row(q), row(k), row(v), exp(row(lg))), Shape{batch, 1, dv}));
        }
        return detail::restore_rank(concat(outs, 1), q_in.rank());
    }
    const Tensor<T> write = add_scalar(-exp(lg), T(1)); // [B, T, M]
    // Pass 1: one head per (batch, slot) with a scalar gate and 1-wide values.
    auto per_slot = [&](const Tensor<T>& x, std::size_t width) {
        const Tensor<T> e = expand(reshape(x, Shape{batch, 1, steps, width}), Shape{batch, slots, steps, width});
        return reshape(e, Shape{batch * slots, steps, width});
    };
    const Tensor<T> slot_major = permute(lg, {0, 2, 1}); // [B, M, T]
    const Tensor<T> lg1 = expand(reshape(slot_major, Shape{batch * slots, steps, 1}), Shape{batch * slots, steps, dk});
    const Tensor<T> v1 = reshape(permute(write, {0, 2, 1}), Shape{batch * slots, steps, 1});
    const Tensor<T> scores1 = gated_form(form, per_slot(q, dk), per_slot(k, dk), v1, lg1, FeatureMap::Identity, chunk);
    const Tensor<T> scores = permute(reshape(scores1, Shape{batch, slots, steps}), {0, 2, 1}); // [B, T, M]
    // Pass 2: slot weights read the gated value slots.
    const Tensor<T> p = softmax(scores, -1);
    return detail::restore_rank(gated_form(form, p, write, v, lg, FeatureMap::Identity, chunk), q_in.rank());
}

} // namespace liger
