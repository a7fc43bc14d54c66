// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace liger;
using liger::testing::random_tokens;
using liger::testing::rand_tensor;
using liger::testing::tiny_spec;

namespace {

ModelSpec liger_spec_for(GateVariant var, LayerPattern pattern = LayerPattern::Liger) {
    ModelSpec s = tiny_spec(pattern);
    s.attn.gate_variant = var;
    return s;
}

// Zeroes every tensor of a model in place.
template <typename T>
void zero_all(Model<T>& m) {
    for (auto& [name, t] : m.named_parameters()) {
        std::fill(t.mutable_data().begin(), t.mutable_data().end(), T(0));
    }
}

} // namespace

TEST(LigerAttention, BlendDegeneratesToEachBranch) {
    Rng rng(1);
    auto spec = liger_spec_for(GateVariant::GLA);
    spec.attn.window = 3;
    auto q = rand_tensor<double>({2, 10, 8}, rng);
    auto k = rand_tensor<double>({2, 10, 8}, rng);
    auto v = rand_tensor<double>({2, 10, 8}, rng);
    const auto lg = construct_log_gate(GateVariant::GLA, k);
    const auto grm = gated_recurrent(softmax(q, -1), softmax(k, -1), v, lg, FeatureMap::Identity).output;
    const auto swa = sliding_window_attention(rope(q, 0), rope(k, 0), v, 3);

    spec.attn.alpha = 1.0;
    spec.attn.beta = 0.0;
    auto m1 = Model<double>::init(spec, 1);
    EXPECT_LT(max_abs_diff(m1.liger_mix(q, k, v, 0), grm), 1e-12);

    spec.attn.alpha = 0.0;
    spec.attn.beta = 1.0;
    auto m2 = Model<double>::init(spec, 1);
    EXPECT_LT(max_abs_diff(m2.liger_mix(q, k, v, 0), swa), 1e-12);

    spec.attn.alpha = 0.5;
    spec.attn.beta = 0.5;
    auto m3 = Model<double>::init(spec, 1);
    EXPECT_LT(max_abs_diff(m3.liger_mix(q, k, v, 0), scale(grm + swa, 0.5)), 1e-12);
}

TEST(LigerAttention, SwaWithoutRotary) {
    Rng rng(2);
    auto spec = liger_spec_for(GateVariant::GLA);
    spec.attn.alpha = 0.0;
    spec.attn.beta = 1.0;
    spec.attn.rope_in_swa = false;
    auto m = Model<double>::init(spec, 2);
    auto q = rand_tensor<double>({2, 6, 8}, rng);
    auto k = rand_tensor<double>({2, 6, 8}, rng);
    auto v = rand_tensor<double>({2, 6, 8}, rng);
    EXPECT_LT(max_abs_diff(m.liger_mix(q, k, v, 0), sliding_window_attention(q, k, v, spec.attn.window)), 1e-14);
}

TEST(Lora, ZeroBIsBitwiseBase) {
    Rng rng(3);
    auto x = rand_tensor<float>({5, 16}, rng);
    auto w = rand_tensor<float>({16, 16}, rng);
    auto a = LoraAdapter<float>::init(16, 16, 4, 8.0, rng);
    EXPECT_EQ(lora_apply(x, w, std::optional(a)).values(), matmul(x, w).values());
}

TEST(Lora, FullRankMatchesDenseSum) {
    Rng rng(4);
    const std::size_t d = 8;
    auto x = rand_tensor<float>({4, d}, rng);
    auto w = rand_tensor<float>({d, d}, rng);
    auto a = LoraAdapter<float>::init(d, d, d, 4.0, rng);
    a.B = rand_tensor<float>({d, d}, rng);
    auto dense = w + scale(matmul(a.B, a.A), a.scaling());
    EXPECT_LT(max_abs_diff(lora_apply(x, w, std::optional(a)), matmul(x, dense)), 1e-5f);
    EXPECT_FLOAT_EQ(a.scaling(), 0.5f);
}

TEST(Lora, ShapeMismatchIsContractError) {
    Rng rng(5);
    auto a = LoraAdapter<double>::init(8, 8, 2, 8.0, rng);
    a.A = Tensor<double>::zeros({3, 8});
    EXPECT_THROW(lora_apply(Tensor<double>::zeros({1, 8}), Tensor<double>::zeros({8, 8}), std::optional(a)),
                 ContractError);
    EXPECT_THROW(LoraAdapter<double>::init(8, 8, 0, 8.0, rng), ConfigError);
}

TEST(Lora, ParameterCountFormula) {
    EXPECT_EQ(lora_parameter_count(4, 128, 8), 3u * 4 * (128 * 8 + 8 * 128));
    auto spec = tiny_spec(LayerPattern::Liger);
    spec.lora_rank = 2;
    auto m = Model<double>::init(spec, 0);
    m.set_finetune_trainable();
    EXPECT_EQ(m.trainable_count(), lora_parameter_count(spec.num_layers, spec.dim, 2));
}

TEST(Block, ZeroedSublayersAreIdentity) {
    Rng rng(6);
    for (auto var : {GateVariant::GLA, GateVariant::HGRN2, GateVariant::GSA}) {
        auto m = Model<double>::init(liger_spec_for(var), 6);
        for (auto* t : {&m.layers()[0].wo, &m.layers()[0].w_down}) {
            std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
        }
        auto x = rand_tensor<double>({7, 16}, rng);
        EXPECT_EQ(m.block_forward(x, 0).values(), x.values()) << to_string(var);
    }
}

TEST(Block, MatchesHandComposedPipeline) {
    Rng rng(7);
    auto m = Model<double>::init(liger_spec_for(GateVariant::GLA), 7);
    const auto& w = m.layers()[1];
    auto x = rand_tensor<double>({9, 16}, rng);
    auto rms = [](const Tensor<double>& t, const Tensor<double>& g) {
        auto out = t.clone();
        for (std::size_t r = 0; r < t.dim(0); ++r) {
            double ss = 0.0;
            for (std::size_t c = 0; c < t.dim(1); ++c) {
                ss += t.at({r, c}) * t.at({r, c});
            }
            const double inv = 1.0 / std::sqrt(ss / static_cast<double>(t.dim(1)) + 1e-6);
            for (std::size_t c = 0; c < t.dim(1); ++c) {
                out.mutable_data()[r * t.dim(1) + c] = t.at({r, c}) * inv * g.values()[c];
            }
        }
        return out;
    };
    auto n1 = rms(x, w.attn_norm);
    auto heads = [](const Tensor<double>& t) { return permute(reshape(t, Shape{9, 2, 8}), {1, 0, 2}); };
    auto q = heads(matmul(n1, w.wq));
    auto k = heads(matmul(n1, w.wk));
    auto v = heads(matmul(n1, w.wv));
    auto grm = gated_recurrent(softmax(q, -1), softmax(k, -1), v, construct_log_gate(GateVariant::GLA, k),
                               FeatureMap::Identity)
                   .output;
    auto swa = sliding_window_attention(rope(q, 0), rope(k, 0), v, 8);
    auto attn = matmul(reshape(permute(scale(grm + swa, 0.5), {1, 0, 2}), Shape{9, 16}), w.wo);
    auto h = x + attn;
    auto n2 = rms(h, w.mlp_norm);
    auto a = matmul(n2, w.w_gate);
    auto act = a * sigmoid(a);
    auto out = h + matmul(act * matmul(n2, w.w_up), w.w_down);
    EXPECT_LT(max_abs_diff(m.block_forward(x, 1), out), 1e-12);
}

TEST(Block, InputGradientMatchesFiniteDifferences) {
    for (auto var : {GateVariant::GLA, GateVariant::HGRN2, GateVariant::GSA}) {
        Rng rng(8);
        auto m = Model<double>::init(liger_spec_for(var), 8);
        auto x = rand_tensor<double>({8, 16}, rng);
        const auto r = liger::testing::grad_check({x}, [&](const auto& in) {
            return liger::testing::probe_loss(m.block_forward(in[0], 0));
        });
        EXPECT_LT(r.norm_rel, 1e-8) << to_string(var);
        EXPECT_LT(r.max_rel, 1e-5) << to_string(var);
    }
}

TEST(Model, ZeroWeightsGiveLogVocabLoss) {
    auto m = Model<double>::init(tiny_spec(LayerPattern::Liger), 9);
    zero_all(m);
    const auto logits = m.forward(random_tokens(6, 1));
    for (double v : logits.values()) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_NEAR(m.loss(random_tokens(12, 2)).item(), std::log(257.0), 1e-12);
}

TEST(Model, CausalUnderPerturbation) {
    for (auto pattern : {LayerPattern::Softmax, LayerPattern::Liger, LayerPattern::Hybrid}) {
        for (auto var : {GateVariant::GLA, GateVariant::HGRN2, GateVariant::GSA}) {
            auto spec = liger_spec_for(var, pattern);
            spec.hybrid_every = 1;
            auto m = Model<double>::init(spec, 10);
            auto tokens = random_tokens(20, 3);
            const auto base = m.forward(tokens);
            const std::size_t t = 11;
            tokens[t + 1] = (tokens[t + 1] + 7) % 256;
            const auto pert = m.forward(tokens);
            EXPECT_EQ(narrow(base, 0, 0, t + 1).values(), narrow(pert, 0, 0, t + 1).values())
                << to_string(pattern) << " " << to_string(var);
            EXPECT_GT(max_abs_diff(narrow(base, 0, t + 1, 1), narrow(pert, 0, t + 1, 1)), 0.0);
        }
    }
}

TEST(Model, BadTokensAreInputErrors) {
    auto m = Model<float>::init(tiny_spec(), 11);
    EXPECT_THROW(m.forward(std::vector<int>{1, 257}), InputError);
    EXPECT_THROW(m.forward(std::vector<int>{}), InputError);
    EXPECT_THROW(m.loss(std::vector<int>{4}), InputError);
}

TEST(Model, HybridWithLongPeriodIsPureLiger) {
    auto pure = tiny_spec(LayerPattern::Liger, 16, 2, 3);
    auto hybrid = pure;
    hybrid.pattern = LayerPattern::Hybrid;
    hybrid.hybrid_every = 3;
    const auto tokens = random_tokens(15, 4);
    auto a = Model<double>::init(pure, 12).forward(tokens);
    auto b = Model<double>::init(hybrid, 12).forward(tokens);
    EXPECT_EQ(a.values(), b.values());
    hybrid.hybrid_every = 2;
    auto c = Model<double>::init(hybrid, 12).forward(tokens);
    EXPECT_NE(a.values(), c.values());
}

TEST(Model, HybridLayout) {
    ModelSpec s;
    s.pattern = LayerPattern::Hybrid;
    s.num_layers = 8;
    s.hybrid_every = 7;
    for (std::size_t l = 0; l < 8; ++l) {
        EXPECT_EQ(s.layer_kind(l), l == 7 ? LayerKind::Softmax : LayerKind::Liger) << l;
    }
    s.hybrid_every = 1;
    EXPECT_EQ(s.layer_kind(0), LayerKind::Liger);
    EXPECT_EQ(s.layer_kind(1), LayerKind::Softmax);
    EXPECT_EQ(s.layer_kind(3), LayerKind::Softmax);
}

TEST(Model, MlpHiddenWidth) {
    ModelSpec s;
    s.dim = 64;
    EXPECT_EQ(s.hidden(), 171u);
    s.dim = 16;
    EXPECT_EQ(s.hidden(), 43u);
}

TEST(Model, SpecValidation) {
    auto s = tiny_spec();
    s.attn.head_dim_k = 4;
    EXPECT_THROW(s.validate(), ConfigError);
    s = tiny_spec(LayerPattern::Liger);
    s.attn.alpha = 0.0;
    s.attn.beta = 0.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = tiny_spec(LayerPattern::Liger);
    s.attn.gate_variant = GateVariant::GSA;
    s.attn.gsa_slots = 3;
    EXPECT_THROW(s.validate(), ConfigError);
    s = tiny_spec(LayerPattern::Liger);
    s.attn.window = 0;
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Decode, MatchesTeacherForcedForwardF64) {
    for (auto pattern : {LayerPattern::Softmax, LayerPattern::Liger, LayerPattern::Hybrid}) {
        for (GateVariant var : kAllGateVariants) {
            auto spec = liger_spec_for(var, pattern);
            spec.hybrid_every = 1;
            spec.attn.window = 5;
            auto m = Model<double>::init(spec, 13);
            DecodeSession<double> s(m);
            std::vector<Tensor<double>> logits;
            const auto prompt = random_tokens(6, 5);
            auto gen = s.generate(prompt, 14, &logits);
            std::vector<int> all(prompt);
            all.insert(all.end(), gen.begin(), gen.end() - 1);
            const auto ref = m.forward(all);
            ASSERT_EQ(logits.size(), all.size());
            double worst = 0.0;
            for (std::size_t t = 0; t < all.size(); ++t) {
                worst = std::max(worst, max_abs_diff(logits[t], reshape(narrow(ref, 0, t, 1), Shape{257})));
            }
            EXPECT_LT(worst, 1e-10) << to_string(pattern) << " " << to_string(var);
            if (pattern == LayerPattern::Softmax) {
                break;
            }
        }
    }
}

TEST(Decode, MatchesTeacherForcedForwardF32LongPrompt) {
    for (auto var : {GateVariant::GLA, GateVariant::HGRN2, GateVariant::GSA}) {
        auto spec = liger_spec_for(var);
        spec.attn.chunk_size = 16;
        spec.attn.window = 64;
        auto m = Model<float>::init(spec, 14);
        const auto tokens = random_tokens(512, 6);
        const auto ref = m.forward(tokens);
        DecodeSession<float> s(m);
        float worst = 0.0f;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            auto row = s.step(tokens[t]);
            worst = std::max(worst, max_abs_diff(row, reshape(narrow(ref, 0, t, 1), Shape{257})));
        }
        EXPECT_LT(worst, 1e-4f) << to_string(var);
        EXPECT_TRUE(s.state_finite());
    }
}

TEST(Decode, ConstantStateForPureLiger) {
    auto m = Model<float>::init(liger_spec_for(GateVariant::GLA), 15);
    DecodeSession<float> s(m);
    std::size_t at10 = 0;
    Tensor<float> logits;
    for (int t = 0; t < 1000; ++t) {
        logits = s.step(t % 256);
        if (t == 9) {
            at10 = s.state_bytes();
        }
    }
    EXPECT_EQ(s.state_bytes(), at10);
    const std::size_t per_layer = (2 * 8 * 8 + 2 * 8 * 8 * 2) * sizeof(float);
    EXPECT_EQ(at10, 2 * per_layer);
}

TEST(Decode, SoftmaxCacheGrows) {
    auto m = Model<float>::init(tiny_spec(LayerPattern::Softmax), 16);
    DecodeSession<float> s(m);
    s.step(1);
    const std::size_t one = s.state_bytes();
    for (int t = 0; t < 9; ++t) {
        s.step(2);
    }
    EXPECT_EQ(s.state_bytes(), 10 * one);
}

TEST(Decode, WindowForgetsOldTokens) {
    auto spec = tiny_spec(LayerPattern::Liger, 16, 2, 1);
    spec.attn.alpha = 0.0;
    spec.attn.beta = 1.0;
    spec.attn.window = 64;
    auto m = Model<double>::init(spec, 17);
    auto tokens = random_tokens(66, 7);
    auto run = [&](const std::vector<int>& toks) {
        DecodeSession<double> s(m);
        std::vector<Tensor<double>> rows;
        for (int t : toks) {
            rows.push_back(s.step(t));
        }
        return rows;
    };
    const auto a = run(tokens);
    tokens[0] = (tokens[0] + 1) % 256;
    const auto b = run(tokens);
    EXPECT_NE(a[63].values(), b[63].values());
    EXPECT_EQ(a[64].values(), b[64].values());
    EXPECT_EQ(a[65].values(), b[65].values());
}

TEST(Decode, GreedyIsDeterministic) {
    auto m = Model<float>::init(liger_spec_for(GateVariant::GSA, LayerPattern::Hybrid), 18);
    DecodeSession<float> a(m);
    DecodeSession<float> b(m);
    const auto prompt = random_tokens(4, 8);
    EXPECT_EQ(a.generate(prompt, 20), b.generate(prompt, 20));
    DecodeSession<float> c(m);
    EXPECT_THROW(c.generate(std::vector<int>{}, 3), InputError);
}

TEST(Linearize, ZeroAddedParameters) {
    auto base = Model<float>::init(tiny_spec(), 19);
    for (auto pattern : {LayerPattern::Liger, LayerPattern::Hybrid}) {
        for (GateVariant var : kAllGateVariants) {
            auto target = liger_spec_for(var, pattern);
            target.lora_rank = 4;
            auto lin = linearize(base, target, 3);
            EXPECT_EQ(lin.base_parameter_count(), base.parameter_count()) << to_string(var);
            EXPECT_EQ(lin.parameter_count() - lora_parameter_count(2, 16, 4), base.parameter_count());
            EXPECT_EQ(lin.trainable_count(), lora_parameter_count(2, 16, 4));
        }
    }
}

TEST(Linearize, CopiesBaseWeightsBitwise) {
    auto base = Model<float>::init(tiny_spec(), 20);
    auto target = liger_spec_for(GateVariant::HGRN2);
    target.lora_rank = 2;
    auto lin = linearize(base, target, 4);
    const auto src = base.named_parameters();
    for (const auto& [name, t] : lin.named_parameters()) {
        if (Model<float>::is_adapter_name(name)) {
            continue;
        }
        auto it = std::find_if(src.begin(), src.end(), [&](const auto& p) { return p.first == name; });
        ASSERT_NE(it, src.end()) << name;
        EXPECT_EQ(t.values(), it->second.values()) << name;
    }
}

TEST(Linearize, AdapterStartEqualityIsBitwise) {
    auto base = Model<float>::init(tiny_spec(), 21);
    auto target = liger_spec_for(GateVariant::GLA);
    auto plain = linearize(base, target, 5);
    target.lora_rank = 4;
    auto adapted = linearize(base, target, 5);
    const auto tokens = random_tokens(30, 9);
    EXPECT_EQ(plain.loss(tokens).item(), adapted.loss(tokens).item());
}

TEST(Linearize, RejectsMismatchedShapes) {
    auto base = Model<float>::init(tiny_spec(), 22);
    auto target = tiny_spec(LayerPattern::Liger, 32, 2, 2);
    EXPECT_THROW(linearize(base, target, 0), ConfigError);
    EXPECT_THROW(linearize(base, tiny_spec(LayerPattern::Softmax), 0), ConfigError);
    auto lin = linearize(base, tiny_spec(LayerPattern::Liger), 0);
    EXPECT_THROW(linearize(lin, tiny_spec(LayerPattern::Liger), 0), ConfigError);
}

TEST(Linearize, ArmsConfigureExtrasAndTrainables) {
    auto base = Model<double>::init(tiny_spec(), 23);
    auto target = liger_spec_for(GateVariant::GLA);
    target.lora_rank = 2;

    target.arm = Arm::NoSwa;
    auto no_swa = linearize(base, target, 1);
    EXPECT_EQ(no_swa.spec().attn.alpha, 1.0);
    EXPECT_EQ(no_swa.spec().attn.beta, 0.0);

    target.arm = Arm::NoLora;
    auto no_lora = linearize(base, target, 1);
    EXPECT_EQ(no_lora.spec().lora_rank, 0u);
    EXPECT_EQ(no_lora.trainable_count(), 3u * 2 * 16 * 16);

    target.arm = Arm::GateProj;
    auto gp = linearize(base, target, 1);
    EXPECT_EQ(gp.layers()[0].gate_proj.shape(), (Shape{8, 8}));
    EXPECT_EQ(gp.base_parameter_count(), base.parameter_count());
    EXPECT_EQ(gp.trainable_count(), lora_parameter_count(2, 16, 2) + 2 * 64);

    target.arm = Arm::FeatMap;
    auto fm = linearize(base, target, 1);
    EXPECT_EQ(fm.layers()[1].feat_map.shape(), (Shape{2, 8, 8}));
    const auto tokens = random_tokens(12, 10);
    target.arm = Arm::Full;
    auto full = linearize(base, target, 1);
    EXPECT_LT(max_abs_diff(fm.forward(tokens), full.forward(tokens)), 1e-12);
}

TEST(Linearize, LossGradientReachesAdapters) {
    auto base = Model<double>::init(tiny_spec(), 24);
    auto target = liger_spec_for(GateVariant::GSA);
    target.lora_rank = 2;
    auto lin = linearize(base, target, 2);
    for (auto& l : lin.layers()) {
        for (auto* a : {&l.lora_q, &l.lora_k, &l.lora_v}) {
            Rng rng(25);
            auto fill = rand_tensor<double>((*a)->B.shape(), rng, 0.1);
            std::copy(fill.data().begin(), fill.data().end(), (*a)->B.mutable_data().begin());
        }
    }
    const auto tokens = random_tokens(10, 11);
    std::vector<Tensor<double>> params = lin.trainable_parameters();
    const auto r = liger::testing::grad_check(params, [&](const auto&) { return lin.loss(tokens); });
    EXPECT_LT(r.norm_rel, 1e-7);
}
