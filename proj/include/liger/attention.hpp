// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "liger/ops.hpp"

namespace liger {

enum class FeatureMap { Softmax, Identity };

inline std::string to_string(FeatureMap f) { return f == FeatureMap::Softmax ? "softmax" : "identity"; }

inline FeatureMap parse_feature_map(const std::string& s) {
    if (s == "softmax") {
        return FeatureMap::Softmax;
    }
    if (s == "identity") {
        return FeatureMap::Identity;
    }
    throw ConfigError("unknown feature map '" + s + "' (expected softmax|identity)");
}

/// Per-head feature map over the last (head) axis. The softmax map yields
/// probability rows, so any query/key product lies in [0, 1].
template <typename T>
Tensor<T> feature_map(const Tensor<T>& x, FeatureMap phi) {
    return phi == FeatureMap::Softmax ? softmax(x, -1) : x;
}

namespace detail {

// Lifts [T, d] to [1, T, d] so every kernel works on batched heads.
template <typename T>
Tensor<T> as_batched(const Tensor<T>& x, const char* what) {
    if (x.rank() == 3) {
        return x;
    }
    if (x.rank() == 2) {
        return unsqueeze(x, 0);
    }
    throw DimensionError(std::string(what) + " must be [T, d] or [B, T, d], got " + shape_str(x.shape()));
}

template <typename T>
Tensor<T> restore_rank(const Tensor<T>& out, std::size_t rank) {
    return rank == 2 ? reshape(out, Shape{out.dim(1), out.dim(2)}) : out;
}

template <typename T>
void check_qkv(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.rank() != k.rank() || q.rank() != v.rank()) {
        throw DimensionError("q, k, v ranks differ");
    }
    if (q.dim(-2) == 0) {
        throw InputError("attention over an empty sequence");
    }
    if (q.dim(-2) != k.dim(-2) || k.dim(-2) != v.dim(-2) || q.dim(-1) != k.dim(-1)) {
        throw DimensionError("q/k/v shapes disagree: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                             ", " + shape_str(v.shape()));
    }
}

template <typename T>
Tensor<T> banded_block(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t q_offset,
                       std::size_t k_offset, std::size_t window, T scale_factor) {
    Tensor<T> scores = scale(matmul(q, transpose(k)), scale_factor);
    return matmul(softmax(band_mask(scores, q_offset, k_offset, window), -1), v);
}

} // namespace detail

/// Causal softmax attention restricted to the last `window` positions.
/// Sequences longer than two windows are processed in query blocks of
/// `window` rows against at most 2*window keys, so cost is O(T w d).
template <typename T>
Tensor<T> sliding_window_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                                   std::size_t window, std::optional<T> scale_factor = std::nullopt) {
    detail::check_qkv(q_in, k_in, v_in);
    if (window == 0) {
        throw ContractError("sliding window size must be >= 1");
    }
    const std::size_t rank = q_in.rank();
    const Tensor<T> q = detail::as_batched(q_in, "q");
    const Tensor<T> k = detail::as_batched(k_in, "k");
    const Tensor<T> v = detail::as_batched(v_in, "v");
    const std::size_t steps = q.dim(1);
    const T sf = scale_factor.value_or(T(1) / std::sqrt(static_cast<T>(q.dim(2))));
    const std::size_t w = std::min(window, steps);
    if (steps <= 2 * w) {
        return detail::restore_rank(detail::banded_block(q, k, v, 0, 0, w, sf), rank);
    }
    std::vector<Tensor<T>> blocks;
    for (std::size_t start = 0; start < steps; start += w) {
        const std::size_t len = std::min(w, steps - start);
        const std::size_t k_start = start >= w ? start - w : 0;
        const std::size_t k_len = start + len - k_start;
        blocks.push_back(detail::banded_block(narrow(q, 1, start, len), narrow(k, 1, k_start, k_len),
                                              narrow(v, 1, k_start, k_len), start, k_start, w, sf));
    }
    return detail::restore_rank(concat(blocks, 1), rank);
}

/// Causal softmax attention, parallel form. Shares the SWA code path with a
/// window that covers the whole sequence.
template <typename T>
Tensor<T> softmax_attention_parallel(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     std::optional<T> scale_factor = std::nullopt) {
    detail::check_qkv(q, k, v);
    return sliding_window_attention(q, k, v, q.dim(-2), scale_factor);
}

/// Growing per-head key/value history for recurrent softmax decoding.
template <typename T>
class KvCache {
public:
    KvCache(std::size_t heads, std::size_t key_dim, std::size_t value_dim)
        : heads_(heads), key_dim_(key_dim), value_dim_(value_dim) {}

    /// k: [H, dk], v: [H, dv]
    void append(std::span<const T> k, std::span<const T> v) {
        if (k.size() != heads_ * key_dim_ || v.size() != heads_ * value_dim_) {
            throw DimensionError("KvCache append size mismatch");
        }
        keys_.insert(keys_.end(), k.begin(), k.end());
        values_.insert(values_.end(), v.begin(), v.end());
        ++length_;
    }

    std::size_t length() const noexcept { return length_; }
    std::size_t heads() const noexcept { return heads_; }
    std::size_t key_dim() const noexcept { return key_dim_; }
    std::size_t value_dim() const noexcept { return value_dim_; }
    std::size_t bytes() const noexcept { return (keys_.size() + values_.size()) * sizeof(T); }
    const T* key(std::size_t t, std::size_t h) const { return keys_.data() + (t * heads_ + h) * key_dim_; }
    const T* value(std::size_t t, std::size_t h) const { return values_.data() + (t * heads_ + h) * value_dim_; }

private:
    std::size_t heads_;
    std::size_t key_dim_;
    std::size_t value_dim_;
    std::size_t length_ = 0;
    std::vector<T> keys_;
    std::vector<T> values_;
};

namespace detail {

// Softmax-weighted value sum for one head over cache positions [first, last).
template <typename T, typename KeyAt, typename ValueAt>
void attend_range(const T* q, std::size_t dk, std::size_t dv, std::size_t count, KeyAt key_at,
                  ValueAt value_at, T scale_factor, T* out, std::vector<T>& scratch) {
    scratch.resize(count);
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < count; ++i) {
        const T* kr = key_at(i);
        T s = T(0);
        for (std::size_t d = 0; d < dk; ++d) {
            s += q[d] * kr[d];
        }
        scratch[i] = s * scale_factor;
        m = std::max(m, scratch[i]);
    }
    T z = T(0);
    for (std::size_t i = 0; i < count; ++i) {
        scratch[i] = std::exp(scratch[i] - m);
        z += scratch[i];
    }
    std::fill(out, out + dv, T(0));
    for (std::size_t i = 0; i < count; ++i) {
        const T p = scratch[i] / z;
        const T* vr = value_at(i);
        for (std::size_t d = 0; d < dv; ++d) {
            out[d] += p * vr[d];
        }
    }
}

} // namespace detail

/// Recurrent softmax attention: output for query q_t [H, dk] over every
/// cached position (the current token must already be appended).
template <typename T>
Tensor<T> softmax_attention_recurrent(const Tensor<T>& q, const KvCache<T>& cache,
                                      std::optional<T> scale_factor = std::nullopt) {
    const std::size_t heads = cache.heads();
    const std::size_t dk = cache.key_dim();
    const std::size_t dv = cache.value_dim();
    if (q.numel() != heads * dk) {
        throw DimensionError("query does not match cache geometry");
    }
    if (cache.length() == 0) {
        throw InputError("recurrent attention over an empty history");
    }
    const T sf = scale_factor.value_or(T(1) / std::sqrt(static_cast<T>(dk)));
    std::vector<T> out(heads * dv);
    std::vector<T> scratch;
    for (std::size_t h = 0; h < heads; ++h) {
        detail::attend_range(
            q.data().data() + h * dk, dk, dv, cache.length(), [&](std::size_t i) { return cache.key(i, h); },
            [&](std::size_t i) { return cache.value(i, h); }, sf, out.data() + h * dv, scratch);
    }
    return Tensor<T>::from({heads, dv}, std::move(out));
}

/// Fixed-capacity ring buffer of the last `window` keys and values. Storage
/// is allocated up front, so its footprint never changes during decoding.
template <typename T>
class SlidingWindowCache {
public:
    SlidingWindowCache(std::size_t window, std::size_t heads, std::size_t key_dim, std::size_t value_dim)
        : window_(window), heads_(heads), key_dim_(key_dim), value_dim_(value_dim),
          keys_(window * heads * key_dim, T(0)), values_(window * heads * value_dim, T(0)) {
        if (window == 0) {
            throw ContractError("sliding window size must be >= 1");
        }
    }

    void append(std::span<const T> k, std::span<const T> v) {
        if (k.size() != heads_ * key_dim_ || v.size() != heads_ * value_dim_) {
            throw DimensionError("SlidingWindowCache append size mismatch");
        }
        const std::size_t slot = seen_ % window_;
        std::copy(k.begin(), k.end(), keys_.begin() + static_cast<std::ptrdiff_t>(slot * heads_ * key_dim_));
        std::copy(v.begin(), v.end(), values_.begin() + static_cast<std::ptrdiff_t>(slot * heads_ * value_dim_));
        ++seen_;
    }

    /// Attends q [H, dk] over the retained positions, oldest first.
    Tensor<T> attend(const Tensor<T>& q, T scale_factor) const {
        if (seen_ == 0) {
            throw InputError("sliding-window attention over an empty history");
        }
        const std::size_t count = std::min(seen_, window_);
        const std::size_t first = seen_ - count;
        std::vector<T> out(heads_ * value_dim_);
        std::vector<T> scratch;
        for (std::size_t h = 0; h < heads_; ++h) {
            detail::attend_range(
                q.data().data() + h * key_dim_, key_dim_, value_dim_, count,
                [&](std::size_t i) { return keys_.data() + (((first + i) % window_) * heads_ + h) * key_dim_; },
                [&](std::size_t i) { return values_.data() + (((first + i) % window_) * heads_ + h) * value_dim_; },
                scale_factor, out.data() + h * value_dim_, scratch);
        }
        return Tensor<T>::from({heads_, value_dim_}, std::move(out));
    }

    /// Absolute position of the oldest retained token.
    std::size_t oldest_position() const noexcept { return seen_ > window_ ? seen_ - window_ : 0; }
    std::size_t seen() const noexcept { return seen_; }
    std::size_t bytes() const noexcept { return (keys_.size() + values_.size()) * sizeof(T); }

private:
    std::size_t window_;
    std::size_t heads_;
    std::size_t key_dim_;
    std::size_t value_dim_;
    std::size_t seen_ = 0;
    std::vector<T> keys_;
    std::vector<T> values_;
};

template <typename T>
struct NormalizedLinearResult {
    Tensor<T> output;
    std::size_t clamped_denominators = 0;
};

/// Normalized linear attention in recurrent form: running S and z with
/// o_t = phi(q_t) S_t / max(phi(q_t) z_t, eps). Forward only.
template <typename T>
NormalizedLinearResult<T> linear_attention_normalized(const Tensor<T>& q_in, const Tensor<T>& k_in,
                                                      const Tensor<T>& v_in, FeatureMap phi,
                                                      T eps = static_cast<T>(1e-6)) {
    detail::check_qkv(q_in, k_in, v_in);
    NoGradGuard no_grad;
    const Tensor<T> q = feature_map(detail::as_batched(q_in, "q"), phi);
    const Tensor<T> k = feature_map(detail::as_batched(k_in, "k"), phi);
    const Tensor<T> v = detail::as_batched(v_in, "v");
    const std::size_t batch = q.dim(0);
    const std::size_t steps = q.dim(1);
    const std::size_t dk = q.dim(2);
    const std::size_t dv = v.dim(2);
    std::vector<T> out(batch * steps * dv);
    NormalizedLinearResult<T> result;
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<T> s(dk * dv, T(0));
        std::vector<T> z(dk, T(0));
        for (std::size_t t = 0; t < steps; ++t) {
            const T* kt = k.data().data() + (b * steps + t) * dk;
            const T* vt = v.data().data() + (b * steps + t) * dv;
            const T* qt = q.data().data() + (b * steps + t) * dk;
            for (std::size_t i = 0; i < dk; ++i) {
                z[i] += kt[i];
                for (std::size_t j = 0; j < dv; ++j) {
                    s[i * dv + j] += kt[i] * vt[j];
                }
            }
            T den = T(0);
            for (std::size_t i = 0; i < dk; ++i) {
                den += qt[i] * z[i];
            }
            if (den < eps) {
                den = eps;
                ++result.clamped_denominators;
            }
            for (std::size_t j = 0; j < dv; ++j) {
                T num = T(0);
                for (std::size_t i = 0; i < dk; ++i) {
                    num += qt[i] * s[i * dv + j];
                }
                out[(b * steps + t) * dv + j] = num / den;
            }
        }
    }
    result.output = detail::restore_rank(Tensor<T>::from({batch, steps, dv}, std::move(out)), q_in.rank());
    return result;
}

} // namespace liger
