// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "liger/model.hpp"

namespace liger {

/// Token-by-token inference. Liger layers hold a fixed-size recurrent state
/// plus a window-sized ring buffer; softmax layers hold a growing KV cache.
template <typename T>
class DecodeSession {
public:
    explicit DecodeSession(const Model<T>& model) : model_(&model) {
        const ModelSpec& spec = model.spec();
        const std::size_t heads = spec.attn.num_heads;
        const std::size_t dh = spec.head_dim();
        for (std::size_t l = 0; l < spec.num_layers; ++l) {
            LayerState s;
            if (spec.layer_kind(l) == LayerKind::Softmax) {
                s.kv.emplace(heads, dh, dh);
            } else {
                if (spec.attn.gate_variant == GateVariant::GSA) {
                    s.rec = RecurrentState<T>::slots(heads, spec.attn.gsa_slots, dh, dh);
                } else {
                    s.rec = RecurrentState<T>::gated(heads, dh, dh);
                }
                s.window.emplace(spec.attn.window, heads, dh, dh);
            }
            layers_.push_back(std::move(s));
        }
    }

    /// Feeds one token; returns next-token logits [V].
    Tensor<T> step(int token) {
        NoGradGuard no_grad;
        const Model<T>& m = *model_;
        const ModelSpec& spec = m.spec();
        const int ids[1] = {token};
        Tensor<T> h = embedding(m.embed(), std::span<const int>(ids, 1));
        for (std::size_t l = 0; l < spec.num_layers; ++l) {
            const auto& w = m.layers()[l];
            const Tensor<T> a = attention_step(rms_norm(h, w.attn_norm, m.eps()), l);
            h = h + a;
            h = m.mlp_forward(rms_norm(h, w.mlp_norm, m.eps()), l) + h;
        }
        const Tensor<T> logits = matmul(rms_norm(h, m.final_norm(), m.eps()), m.lm_head());
        ++position_;
        return reshape(logits, Shape{spec.vocab_size});
    }

    /// Feeds the prompt then emits `count` greedy tokens. The returned
    /// logits hold one row per fed or generated position.
    std::vector<int> generate(std::span<const int> prompt, std::size_t count,
                              std::vector<Tensor<T>>* logits_out = nullptr) {
        if (prompt.empty()) {
            throw InputError("generation needs a non-empty prompt");
        }
        Tensor<T> last;
        for (int t : prompt) {
            last = step(t);
            if (logits_out) {
                logits_out->push_back(last);
            }
        }
        std::vector<int> out;
        for (std::size_t i = 0; i < count; ++i) {
            const auto v = last.data();
            const int next = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
            out.push_back(next);
            if (i + 1 < count) {
                last = step(next);
                if (logits_out) {
                    logits_out->push_back(last);
                }
            }
        }
        return out;
    }

    /// Bytes held by every layer's attention state.
    std::size_t state_bytes() const {
        std::size_t n = 0;
        for (const auto& s : layers_) {
            n += s.rec ? s.rec->bytes() : 0;
            n += s.window ? s.window->bytes() : 0;
            n += s.kv ? s.kv->bytes() : 0;
        }
        return n;
    }

    std::size_t position() const noexcept { return position_; }

    bool state_finite() const {
        return std::all_of(layers_.begin(), layers_.end(),
                           [](const LayerState& s) { return !s.rec || s.rec->finite(); });
    }

private:
    struct LayerState {
        std::optional<RecurrentState<T>> rec;
        std::optional<SlidingWindowCache<T>> window;
        std::optional<KvCache<T>> kv;
    };

    Tensor<T> attention_step(const Tensor<T>& x, std::size_t l) {
        const Model<T>& m = *model_;
        const ModelSpec& spec = m.spec();
        const auto& w = m.layers()[l];
        const std::size_t heads = spec.attn.num_heads;
        const std::size_t dh = spec.head_dim();
        const Tensor<T> q = reshape(lora_apply(x, w.wq, w.lora_q), Shape{heads, dh});
        const Tensor<T> k = reshape(lora_apply(x, w.wk, w.lora_k), Shape{heads, dh});
        const Tensor<T> v = reshape(lora_apply(x, w.wv, w.lora_v), Shape{heads, dh});
        auto rotate = [&](const Tensor<T>& t) {
            return reshape(rope(reshape(t, Shape{heads, 1, dh}), position_, spec.rope_base), Shape{heads, dh});
        };
        LayerState& s = layers_[l];
        Tensor<T> o;
        if (s.kv) {
            const Tensor<T> kr = rotate(k);
            s.kv->append(kr.data(), v.data());
            o = softmax_attention_recurrent(rotate(q), *s.kv);
        } else {
            const auto& a = spec.attn;
            std::optional<Tensor<T>> mix;
            if (a.alpha != 0.0) {
                mix = scale(grm_step(*s.rec, q, k, v, l), static_cast<T>(a.alpha));
            }
            const Tensor<T> qs = a.rope_in_swa ? rotate(q) : q;
            const Tensor<T> ks = a.rope_in_swa ? rotate(k) : k;
            s.window->append(ks.data(), v.data());
            if (a.beta != 0.0) {
                const T sf = T(1) / std::sqrt(static_cast<T>(dh));
                const Tensor<T> sw = scale(s.window->attend(qs, sf), static_cast<T>(a.beta));
                mix = mix ? *mix + sw : sw;
            }
            o = *mix;
        }
        return matmul(reshape(o, Shape{1, spec.dim}), w.wo);
    }

    Tensor<T> grm_step(RecurrentState<T>& state, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       std::size_t l) {
        const Model<T>& m = *model_;
        const auto& a = m.spec().attn;
        const Tensor<T> gate = exp(m.log_gates(k, l));
        switch (a.gate_variant) {
        case GateVariant::GSA:
            return gsa_step(state, q, k, v, gate);
        case GateVariant::HGRN2:
            return hgrn2_step(state, m.phi(q, l), v, gate);
        default:
            return gated_recurrent_step(state, m.phi(q, l), m.phi(k, l), v, gate, FeatureMap::Identity);
        }
    }

    const Model<T>* model_;
    std::vector<LayerState> layers_;
    std::size_t position_ = 0;
};

} // namespace liger
