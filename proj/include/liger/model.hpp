// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "liger/gated.hpp"
#include "liger/gating.hpp"
#include "liger/lora.hpp"

namespace liger {

struct AttentionConfig {
    std::size_t num_heads = 4;
    std::size_t head_dim_k = 16;
    std::size_t head_dim_v = 16;
    std::size_t window = 64;
    double alpha = 0.5;
    double beta = 0.5;
    GateVariant gate_variant = GateVariant::GLA;
    FeatureMap feature_map = FeatureMap::Softmax;
    std::size_t gsa_slots = 4;
    double hgrn2_gamma = 0.5;
    std::size_t chunk_size = 16;
    bool rope_in_swa = true;

    GateParams gate_params() const { return {hgrn2_gamma, gsa_slots}; }

    void validate() const {
        if (num_heads == 0 || head_dim_k == 0 || head_dim_v == 0) {
            throw ConfigError("attention dimensions must be positive");
        }
        if (window == 0) {
            throw ConfigError("window must be >= 1");
        }
        if (alpha < 0.0 || beta < 0.0 || !(alpha + beta > 0.0)) {
            throw ConfigError("alpha, beta must be >= 0 with alpha + beta > 0");
        }
        if (chunk_size == 0) {
            throw ConfigError("chunk_size must be >= 1");
        }
        validate_gate_params(gate_variant, head_dim_k, gate_params());
    }
};

enum class LayerPattern { Softmax, Liger, Hybrid };
enum class LayerKind { Softmax, Liger };

/// Ablation arms. Full is the method itself.
enum class Arm { Full, GateProj, FeatMap, NoLora, NoSwa };

inline std::string to_string(LayerPattern p) {
    switch (p) {
    case LayerPattern::Softmax:
        return "softmax";
    case LayerPattern::Liger:
        return "liger";
    case LayerPattern::Hybrid:
        return "hybrid";
    }
    return "?";
}

inline LayerPattern parse_layer_pattern(const std::string& s) {
    for (LayerPattern p : {LayerPattern::Softmax, LayerPattern::Liger, LayerPattern::Hybrid}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    throw ConfigError("unknown layer pattern '" + s + "' (expected softmax|liger|hybrid)");
}

inline std::string to_string(Arm a) {
    switch (a) {
    case Arm::Full:
        return "full";
    case Arm::GateProj:
        return "gate_proj";
    case Arm::FeatMap:
        return "feat_map";
    case Arm::NoLora:
        return "no_lora";
    case Arm::NoSwa:
        return "no_swa";
    }
    return "?";
}

inline Arm parse_arm(const std::string& s) {
    for (Arm a : {Arm::Full, Arm::GateProj, Arm::FeatMap, Arm::NoLora, Arm::NoSwa}) {
        if (to_string(a) == s) {
            return a;
        }
    }
    throw ConfigError("unknown arm '" + s + "' (expected full|gate_proj|feat_map|no_lora|no_swa)");
}

struct ModelSpec {
    std::size_t vocab_size = 257;
    std::size_t dim = 64;
    std::size_t num_layers = 2;
    LayerPattern pattern = LayerPattern::Softmax;
    std::size_t hybrid_every = 7;
    AttentionConfig attn;
    std::size_t mlp_hidden = 0; // 0 = round(4 D 2/3)
    double rope_base = 10000.0;
    double norm_eps = 1e-6;
    Arm arm = Arm::Full;
    std::size_t lora_rank = 0; // 0 = no adapters
    double lora_alpha = 8.0;

    std::size_t head_dim() const { return dim / attn.num_heads; }

    std::size_t hidden() const {
        return mlp_hidden ? mlp_hidden : static_cast<std::size_t>(std::lround(4.0 * static_cast<double>(dim) * 2.0 / 3.0));
    }

    LayerKind layer_kind(std::size_t layer) const {
        switch (pattern) {
        case LayerPattern::Softmax:
            return LayerKind::Softmax;
        case LayerPattern::Liger:
            return LayerKind::Liger;
        case LayerPattern::Hybrid:
            break;
        }
        return (layer + 1) % (hybrid_every + 1) == 0 ? LayerKind::Softmax : LayerKind::Liger;
    }

    void validate() const {
        if (vocab_size == 0 || dim == 0 || num_layers == 0) {
            throw ConfigError("vocab_size, dim, num_layers must be positive");
        }
        if (attn.num_heads == 0 || dim % attn.num_heads != 0) {
            throw ConfigError("dim must be divisible by num_heads");
        }
        if (attn.head_dim_k != head_dim() || attn.head_dim_v != head_dim()) {
            throw ConfigError("head dims must equal dim / num_heads");
        }
        if (pattern == LayerPattern::Hybrid && hybrid_every == 0) {
            throw ConfigError("hybrid pattern needs hybrid_every >= 1");
        }
        if ((attn.rope_in_swa || pattern != LayerPattern::Liger) && head_dim() % 2 != 0) {
            throw ConfigError("rotary embedding needs an even head dim");
        }
        attn.validate();
    }
};

template <typename T>
struct LayerWeights {
    Tensor<T> attn_norm;
    Tensor<T> wq, wk, wv, wo;
    Tensor<T> mlp_norm;
    Tensor<T> w_gate, w_up, w_down;
    std::optional<LoraAdapter<T>> lora_q, lora_k, lora_v;
    Tensor<T> gate_proj; // [dh, m], gate_proj arm only
    Tensor<T> feat_map;  // [H, dh, dh], feat_map arm only
};

template <typename T>
class Model {
public:
    Model() = default;

    /// Random initialization for a fresh model. Output projections are
    /// scaled down by sqrt(2 L).
    static Model init(const ModelSpec& spec, std::uint64_t seed) {
        spec.validate();
        Model m;
        m.spec_ = spec;
        Rng root(seed);
        Rng rng = root.split(1);
        const std::size_t d = spec.dim;
        const std::size_t hid = spec.hidden();
        const double sd_in = 1.0 / std::sqrt(static_cast<double>(d));
        const double sd_out = sd_in / std::sqrt(2.0 * static_cast<double>(spec.num_layers));
        m.embed_ = Tensor<T>::randn({spec.vocab_size, d}, rng, 1.0);
        for (std::size_t l = 0; l < spec.num_layers; ++l) {
            LayerWeights<T> w;
            w.attn_norm = Tensor<T>::ones({d});
            w.wq = Tensor<T>::randn({d, d}, rng, sd_in);
            w.wk = Tensor<T>::randn({d, d}, rng, sd_in);
            w.wv = Tensor<T>::randn({d, d}, rng, sd_in);
            w.wo = Tensor<T>::randn({d, d}, rng, sd_out);
            w.mlp_norm = Tensor<T>::ones({d});
            w.w_gate = Tensor<T>::randn({d, hid}, rng, sd_in);
            w.w_up = Tensor<T>::randn({d, hid}, rng, sd_in);
            w.w_down = Tensor<T>::randn({hid, d}, rng, sd_out / std::sqrt(static_cast<double>(hid) / d));
            m.layers_.push_back(std::move(w));
        }
        m.final_norm_ = Tensor<T>::ones({d});
        m.lm_head_ = Tensor<T>::randn({d, spec.vocab_size}, rng, sd_in);
        m.attach_extras(root.split(2));
        return m;
    }

    /// Zero-valued tensors in the right shapes; used before loading weights.
    static Model empty(const ModelSpec& spec) {
        spec.validate();
        Model m;
        m.spec_ = spec;
        const std::size_t d = spec.dim;
        const std::size_t hid = spec.hidden();
        m.embed_ = Tensor<T>::zeros({spec.vocab_size, d});
        for (std::size_t l = 0; l < spec.num_layers; ++l) {
            LayerWeights<T> w;
            w.attn_norm = Tensor<T>::zeros({d});
            w.wq = Tensor<T>::zeros({d, d});
            w.wk = Tensor<T>::zeros({d, d});
            w.wv = Tensor<T>::zeros({d, d});
            w.wo = Tensor<T>::zeros({d, d});
            w.mlp_norm = Tensor<T>::zeros({d});
            w.w_gate = Tensor<T>::zeros({d, hid});
            w.w_up = Tensor<T>::zeros({d, hid});
            w.w_down = Tensor<T>::zeros({hid, d});
            m.layers_.push_back(std::move(w));
        }
        m.final_norm_ = Tensor<T>::zeros({d});
        m.lm_head_ = Tensor<T>::zeros({d, spec.vocab_size});
        Rng unused(0);
        m.attach_extras(unused);
        for (auto& [name, t] : m.named_parameters()) {
            std::fill(t.mutable_data().begin(), t.mutable_data().end(), T(0));
        }
        return m;
    }

    const ModelSpec& spec() const { return spec_; }
    ModelSpec& mutable_spec() { return spec_; }
    std::vector<LayerWeights<T>>& layers() { return layers_; }
    const std::vector<LayerWeights<T>>& layers() const { return layers_; }
    const Tensor<T>& embed() const { return embed_; }
    const Tensor<T>& final_norm() const { return final_norm_; }
    const Tensor<T>& lm_head() const { return lm_head_; }

    /// Every tensor with a stable name, in a fixed order.
    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("embed", embed_);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& w = layers_[l];
            const std::string p = "layers." + std::to_string(l) + ".";
            out.emplace_back(p + "attn_norm", w.attn_norm);
            out.emplace_back(p + "wq", w.wq);
            out.emplace_back(p + "wk", w.wk);
            out.emplace_back(p + "wv", w.wv);
            out.emplace_back(p + "wo", w.wo);
            out.emplace_back(p + "mlp_norm", w.mlp_norm);
            out.emplace_back(p + "w_gate", w.w_gate);
            out.emplace_back(p + "w_up", w.w_up);
            out.emplace_back(p + "w_down", w.w_down);
            const std::pair<const char*, const std::optional<LoraAdapter<T>>*> adapters[] = {
                {"wq", &w.lora_q}, {"wk", &w.lora_k}, {"wv", &w.lora_v}};
            for (const auto& [proj, a] : adapters) {
                if (*a) {
                    out.emplace_back(p + proj + ".lora_B", (*a)->B);
                    out.emplace_back(p + proj + ".lora_A", (*a)->A);
                }
            }
            if (w.gate_proj.defined()) {
                out.emplace_back(p + "gate_proj", w.gate_proj);
            }
            if (w.feat_map.defined()) {
                out.emplace_back(p + "feat_map", w.feat_map);
            }
        }
        out.emplace_back("final_norm", final_norm_);
        out.emplace_back("lm_head", lm_head_);
        return out;
    }

    static bool is_adapter_name(const std::string& name) {
        return name.find(".lora_") != std::string::npos;
    }

    static bool is_arm_extra_name(const std::string& name) {
        return name.ends_with(".gate_proj") || name.ends_with(".feat_map");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_parameters()) {
            n += t.numel();
        }
        return n;
    }

    /// Parameters excluding LoRA factors and ablation-arm extras.
    std::size_t base_parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_parameters()) {
            if (!is_adapter_name(name) && !is_arm_extra_name(name)) {
                n += t.numel();
            }
        }
        return n;
    }

    std::vector<Tensor<T>> trainable_parameters() const {
        std::vector<Tensor<T>> out;
        for (const auto& [name, t] : named_parameters()) {
            if (t.requires_grad()) {
                out.push_back(t);
            }
        }
        return out;
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& t : trainable_parameters()) {
            n += t.numel();
        }
        return n;
    }

    void set_trainable_all(bool on) {
        for (auto& [name, t] : named_parameters()) {
            t.set_requires_grad(on);
        }
    }

    /// Marks exactly the tensors the arm fine-tunes as trainable.
    void set_finetune_trainable() {
        for (auto& [name, t] : named_parameters()) {
            bool on = is_adapter_name(name) || is_arm_extra_name(name);
            if (spec_.arm == Arm::NoLora) {
                on = on || name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv");
            }
            t.set_requires_grad(on);
        }
    }

    /// Logits [T, V] for a token sequence.
    Tensor<T> forward(std::span<const int> tokens) const {
        if (tokens.empty()) {
            throw InputError("forward over an empty token sequence");
        }
        Tensor<T> h = embedding(embed_, tokens);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            h = block_forward(h, l);
        }
        return matmul(rms_norm(h, final_norm_, eps()), lm_head_);
    }

    /// Mean next-token NLL over tokens[1..] given tokens[..T-1].
    Tensor<T> loss(std::span<const int> tokens) const {
        if (tokens.size() < 2) {
            throw InputError("loss needs at least two tokens");
        }
        const Tensor<T> logits = forward(tokens.first(tokens.size() - 1));
        return cross_entropy(logits, tokens.subspan(1));
    }

    /// H = Attn(Norm(X)) + X; O = MLP(Norm(H)) + H.
    Tensor<T> block_forward(const Tensor<T>& x, std::size_t l) const {
        const auto& w = layers_[l];
        const Tensor<T> h = attention_forward(rms_norm(x, w.attn_norm, eps()), l) + x;
        return mlp_forward(rms_norm(h, w.mlp_norm, eps()), l) + h;
    }

    Tensor<T> mlp_forward(const Tensor<T>& x, std::size_t l) const {
        const auto& w = layers_[l];
        return matmul(silu(matmul(x, w.w_gate)) * matmul(x, w.w_up), w.w_down);
    }

    /// Projected per-head q, k, v as [H, T, dh].
    std::array<Tensor<T>, 3> project_qkv(const Tensor<T>& x, std::size_t l) const {
        const auto& w = layers_[l];
        return {to_heads(lora_apply(x, w.wq, w.lora_q)), to_heads(lora_apply(x, w.wk, w.lora_k)),
                to_heads(lora_apply(x, w.wv, w.lora_v))};
    }

    /// Attention sublayer output [T, D] for normalized input x [T, D].
    Tensor<T> attention_forward(const Tensor<T>& x, std::size_t l) const {
        const auto [q, k, v] = project_qkv(x, l);
        Tensor<T> o;
        if (spec_.layer_kind(l) == LayerKind::Softmax) {
            o = softmax_attention_parallel(rope(q, 0, spec_.rope_base), rope(k, 0, spec_.rope_base), v);
        } else {
            o = liger_mix(q, k, v, l);
        }
        return matmul(from_heads(o), layers_[l].wo);
    }

    /// alpha * GRM(q, k, v) + beta * SWA(q, k, v) on [H, T, dh] inputs.
    Tensor<T> liger_mix(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t l) const {
        const auto& a = spec_.attn;
        std::optional<Tensor<T>> out;
        if (a.alpha != 0.0) {
            out = scale(grm_branch(q, k, v, l), static_cast<T>(a.alpha));
        }
        if (a.beta != 0.0) {
            const Tensor<T> s = scale(swa_branch(q, k, v, 0), static_cast<T>(a.beta));
            out = out ? *out + s : s;
        }
        return *out;
    }

    /// Gated recurrent branch, chunkwise form.
    Tensor<T> grm_branch(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t l) const {
        const auto& a = spec_.attn;
        const Tensor<T> lg = log_gates(k, l);
        switch (a.gate_variant) {
        case GateVariant::GSA:
            return gsa_form(KernelForm::Chunkwise, q, k, v, lg, a.chunk_size);
        case GateVariant::HGRN2:
            return hgrn2_form(KernelForm::Chunkwise, phi(q, l), v, lg, a.chunk_size);
        default:
            return gated_chunkwise(phi(q, l), phi(k, l), v, lg, a.chunk_size, FeatureMap::Identity).output;
        }
    }

    Tensor<T> swa_branch(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t offset) const {
        if (spec_.attn.rope_in_swa) {
            return sliding_window_attention(rope(q, offset, spec_.rope_base), rope(k, offset, spec_.rope_base), v,
                                            spec_.attn.window);
        }
        return sliding_window_attention(q, k, v, spec_.attn.window);
    }

    /// Log gates [H, T, m] from keys [H, T, dh] (or [H, dh] for one step).
    Tensor<T> log_gates(const Tensor<T>& k, std::size_t l) const {
        const auto& a = spec_.attn;
        const auto& w = layers_[l];
        if (!w.gate_proj.defined()) {
            return construct_log_gate(a.gate_variant, k, a.gate_params());
        }
        // gate_proj arm: logits from a learned per-head projection of the key.
        const std::size_t m = pooled_dim(a.gate_variant, spec_.head_dim(), a.gate_params());
        const Tensor<T> logits = matmul(k.rank() == 2 ? unsqueeze(k, 1) : k, w.gate_proj);
        const Tensor<T> shaped = k.rank() == 2 ? reshape(logits, Shape{k.dim(0), m}) : logits;
        return gate_from_logits(shaped);
    }

    /// Feature map of the GRM branch on [H, T, dh] or [H, dh].
    Tensor<T> phi(const Tensor<T>& x, std::size_t l) const {
        const auto& w = layers_[l];
        if (!w.feat_map.defined()) {
            return feature_map(x, spec_.attn.feature_map);
        }
        if (x.rank() == 2) {
            return reshape(softmax(matmul(unsqueeze(x, 1), w.feat_map), -1), x.shape());
        }
        return softmax(matmul(x, w.feat_map), -1);
    }

    Tensor<T> to_heads(const Tensor<T>& x) const {
        const std::size_t steps = x.dim(0);
        return permute(reshape(x, Shape{steps, spec_.attn.num_heads, spec_.head_dim()}), {1, 0, 2});
    }

    Tensor<T> from_heads(const Tensor<T>& x) const {
        const std::size_t steps = x.dim(1);
        return reshape(permute(x, {1, 0, 2}), Shape{steps, spec_.dim});
    }

    T eps() const { return static_cast<T>(spec_.norm_eps); }

private:
    Tensor<T> gate_from_logits(const Tensor<T>& logits) const {
        const auto& a = spec_.attn;
        switch (a.gate_variant) {
        case GateVariant::Mamba2:
            return -softplus(logits);
        case GateVariant::RWKV6:
            return -exp(logits);
        case GateVariant::HGRN2: {
            const T gamma = static_cast<T>(a.hgrn2_gamma);
            return log(add_scalar(scale(sigmoid(logits), T(1) - gamma), gamma));
        }
        default:
            return log_sigmoid(logits);
        }
    }

    // Adapters and arm-specific tensors; arm extras exist only on Liger layers.
    void attach_extras(Rng rng) {
        const std::size_t d = spec_.dim;
        const std::size_t heads = spec_.attn.num_heads;
        const std::size_t dh = spec_.head_dim();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto& w = layers_[l];
            if (spec_.lora_rank > 0) {
                w.lora_q = LoraAdapter<T>::init(d, d, spec_.lora_rank, spec_.lora_alpha, rng);
                w.lora_k = LoraAdapter<T>::init(d, d, spec_.lora_rank, spec_.lora_alpha, rng);
                w.lora_v = LoraAdapter<T>::init(d, d, spec_.lora_rank, spec_.lora_alpha, rng);
            }
            if (spec_.layer_kind(l) != LayerKind::Liger) {
                continue;
            }
            if (spec_.arm == Arm::GateProj) {
                const std::size_t m = pooled_dim(spec_.attn.gate_variant, dh, spec_.attn.gate_params());
                w.gate_proj = Tensor<T>::randn({dh, m}, rng, 1.0 / std::sqrt(static_cast<double>(dh)));
            }
            if (spec_.arm == Arm::FeatMap) {
                std::vector<T> eye(heads * dh * dh, T(0));
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < dh; ++i) {
                        eye[(h * dh + i) * dh + i] = T(1);
                    }
                }
                w.feat_map = Tensor<T>::from({heads, dh, dh}, std::move(eye));
            }
        }
    }

    ModelSpec spec_;
    Tensor<T> embed_;
    std::vector<LayerWeights<T>> layers_;
    Tensor<T> final_norm_;
    Tensor<T> lm_head_;
};

/// Rebuilds a trained softmax model as a Liger model. Every base tensor is
/// shared by value (copied bitwise); gates come from the copied W_K. Adapters
/// and arm extras are freshly initialized from `seed`.
template <typename T>
Model<T> linearize(const Model<T>& base, const ModelSpec& target, std::uint64_t seed) {
    const ModelSpec& bs = base.spec();
    if (bs.pattern != LayerPattern::Softmax) {
        throw ConfigError("linearize expects a pure softmax base model");
    }
    if (bs.vocab_size != target.vocab_size || bs.dim != target.dim || bs.num_layers != target.num_layers ||
        bs.attn.num_heads != target.attn.num_heads || bs.hidden() != target.hidden()) {
        throw ConfigError("linearize target dimensions do not match the base model");
    }
    ModelSpec spec = target;
    if (spec.pattern == LayerPattern::Softmax) {
        throw ConfigError("linearize target must be a liger or hybrid pattern");
    }
    if (spec.arm == Arm::NoSwa) {
        spec.attn.alpha = 1.0;
        spec.attn.beta = 0.0;
    }
    if (spec.arm == Arm::NoLora) {
        spec.lora_rank = 0;
    }
    Model<T> out = Model<T>::init(spec, seed);
    const auto src = base.named_parameters();
    auto dst = out.named_parameters();
    for (const auto& [name, t] : src) {
        auto it = std::find_if(dst.begin(), dst.end(), [&](const auto& p) { return p.first == name; });
        if (it == dst.end() || it->second.shape() != t.shape()) {
            throw ConfigError("linearize: tensor '" + name + "' missing or reshaped in target");
        }
        std::copy(t.data().begin(), t.data().end(), it->second.mutable_data().begin());
    }
    out.set_finetune_trainable();
    return out;
}

} // namespace liger
