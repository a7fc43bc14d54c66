// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace liger;
using liger::testing::random_tokens;
using liger::testing::tiny_spec;

namespace {

TrainConfig small_train() {
    TrainConfig c;
    c.seq_len = 32;
    c.grad_accum = 2;
    c.epochs = 1;
    c.lr = 1e-2;
    c.lora_rank = 2;
    return c;
}

Corpus small_corpus(std::size_t bytes = 6000) { return Corpus::from_text(synthetic_text(bytes, 3), 0.1); }

template <typename T>
std::vector<std::vector<T>> snapshot(const Model<T>& m) {
    std::vector<std::vector<T>> out;
    for (const auto& [name, t] : m.named_parameters()) {
        out.push_back(t.values());
    }
    return out;
}

} // namespace

TEST(TrainConfig, DefaultsAndValidation) {
    TrainConfig c;
    EXPECT_EQ(c.lr, 1e-3);
    EXPECT_EQ(c.adamw.beta1, 0.9);
    EXPECT_EQ(c.adamw.beta2, 0.999);
    EXPECT_EQ(c.adamw.weight_decay, 0.01);
    EXPECT_EQ(c.epochs, 2u);
    EXPECT_EQ(c.global_batch(), 8u);
    EXPECT_EQ(c.seed, 0u);
    EXPECT_EQ(c.lora_rank, 8u);
    EXPECT_EQ(c.lora_alpha, 8.0);
    EXPECT_NO_THROW(c.validate());
    c.grad_accum = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.warmup_frac = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Schedule, WarmupThenCosine) {
    EXPECT_NEAR(cosine_lr(1.0, 0, 100, 0.03), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(cosine_lr(1.0, 2, 100, 0.03), 1.0, 1e-15);
    EXPECT_NEAR(cosine_lr(1.0, 3, 100, 0.03), 1.0, 1e-15);
    EXPECT_NEAR(cosine_lr(1.0, 3 + 97 / 2, 100, 0.03), 0.5 * (1.0 + std::cos(M_PI * 48.0 / 97.0)), 1e-15);
    EXPECT_LT(cosine_lr(1.0, 99, 100, 0.03), 1e-3);
    EXPECT_EQ(cosine_lr(2.0, 0, 1, 0.0), 2.0);
}

TEST(AdamW, MatchesHandComputedSteps) {
    auto w = Tensor<double>::from({2}, {1.0, -2.0});
    w.set_requires_grad(true);
    AdamWConfig cfg;
    AdamW<double> opt({w}, cfg);
    double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
    for (int t = 1; t <= 3; ++t) {
        opt.zero_grad();
        sum(square(w)).backward();
        opt.step(0.1);
        for (int j = 0; j < 2; ++j) {
            const double g = 2.0 * ref[j];
            m[j] = 0.9 * m[j] + 0.1 * g;
            v[j] = 0.999 * v[j] + 0.001 * g * g;
            const double mh = m[j] / (1.0 - std::pow(0.9, t));
            const double vh = v[j] / (1.0 - std::pow(0.999, t));
            ref[j] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * ref[j]);
        }
        EXPECT_NEAR(w.values()[0], ref[0], 1e-14);
        EXPECT_NEAR(w.values()[1], ref[1], 1e-14);
    }
}

TEST(Corpus, ByteTokensAndDisjointSplit) {
    const std::string text = "hello, \xc3\xa9t\xc3\xa9!";
    const auto toks = Corpus::tokenize(text);
    ASSERT_EQ(toks.size(), text.size());
    EXPECT_EQ(toks[0], 'h');
    EXPECT_EQ(toks[7], 0xc3);
    auto c = Corpus::from_text(std::string(100, 'a') + std::string(100, 'b'), 0.25);
    EXPECT_EQ(c.train.size(), 150u);
    EXPECT_EQ(c.valid.size(), 50u);
    EXPECT_EQ(c.valid.front(), 'b');
    EXPECT_EQ(synthetic_text(500, 1), synthetic_text(500, 1));
    EXPECT_EQ(synthetic_text(500, 1).size(), 500u);
    EXPECT_THROW(Corpus::from_file("/nonexistent/corpus.txt", 0.1), IoError);
}

TEST(Budget, StepsAndTokenAccounting) {
    EXPECT_EQ(window_starts(100, 32).size(), 3u);
    EXPECT_EQ(window_starts(96, 32).size(), 2u);
    TrainConfig c = small_train();
    c.epochs = 2;
    EXPECT_EQ(planned_steps(32 * 20 + 1, c), 20u);
    c.max_steps = 5;
    EXPECT_EQ(planned_steps(32 * 20 + 1, c), 5u);
    auto m = Model<float>::init(tiny_spec(), 1);
    m.set_trainable_all(true);
    const auto r = train_model(m, random_tokens(32 * 20 + 1, 1), c);
    EXPECT_EQ(r.steps, 5u);
    EXPECT_EQ(r.losses.size(), 5u);
    EXPECT_EQ(r.tokens, r.steps * c.global_batch() * c.seq_len);
}

TEST(TrainBase, LossDecreasesAndBeatsUniform) {
    const Corpus corpus = small_corpus(20000);
    TrainConfig c = small_train();
    c.epochs = 2;
    TrainResult r;
    auto m = train_base<float>(tiny_spec(), corpus, c, &r);
    ASSERT_GE(r.losses.size(), 20u);
    auto mean_of = [&](std::size_t a, std::size_t b) {
        return std::accumulate(r.losses.begin() + a, r.losses.begin() + b, 0.0) / static_cast<double>(b - a);
    };
    const std::size_t n = r.losses.size();
    EXPECT_LT(mean_of(n - n / 4, n), mean_of(0, n / 4));
    EXPECT_LT(evaluate_ppl(m, corpus.valid, c.seq_len), 256.0);
    EXPECT_EQ(m.trainable_count(), 0u);
}

TEST(TrainBase, SameSeedIsBitwiseDeterministic) {
    const Corpus corpus = small_corpus();
    TrainConfig c = small_train();
    c.max_steps = 4;
    auto a = train_base<float>(tiny_spec(), corpus, c);
    auto b = train_base<float>(tiny_spec(), corpus, c);
    EXPECT_EQ(snapshot(a), snapshot(b));
    c.seed = 1;
    auto d = train_base<float>(tiny_spec(), corpus, c);
    EXPECT_NE(snapshot(a), snapshot(d));
}

TEST(TrainBase, CorpusSizeDoesNotChangeParameterCount) {
    TrainConfig c = small_train();
    c.max_steps = 2;
    auto a = train_base<float>(tiny_spec(), small_corpus(4000), c);
    auto b = train_base<float>(tiny_spec(), small_corpus(8000), c);
    EXPECT_EQ(a.parameter_count(), b.parameter_count());
}

TEST(TrainBase, RejectsNonSoftmaxAndTinySplits) {
    TrainConfig c = small_train();
    EXPECT_THROW(train_base<float>(tiny_spec(LayerPattern::Liger), small_corpus(), c), ConfigError);
    EXPECT_THROW(train_base<float>(tiny_spec(), Corpus::from_text("short text", 0.1), c), InputError);
}

TEST(Training, DivergenceIsNumericError) {
    auto m = Model<float>::init(tiny_spec(), 2);
    m.set_trainable_all(true);
    auto e = m.named_parameters().front().second;
    std::fill(e.mutable_data().begin(), e.mutable_data().end(), std::nanf(""));
    TrainConfig c = small_train();
    EXPECT_THROW(train_model(m, random_tokens(200, 2), c), NumericError);
}

TEST(EvaluatePpl, UniformModelGives256) {
    auto spec = tiny_spec();
    spec.vocab_size = 256;
    auto m = Model<double>::init(spec, 3);
    for (auto& [name, t] : m.named_parameters()) {
        std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
    EXPECT_NEAR(evaluate_ppl(m, random_tokens(300, 4), 64), 256.0, 1e-9);
}

TEST(EvaluatePpl, DeterministicAndWindowed) {
    auto m = Model<float>::init(tiny_spec(LayerPattern::Liger), 4);
    const auto tokens = random_tokens(150, 5);
    const double a = evaluate_ppl(m, tokens, 40);
    EXPECT_EQ(a, evaluate_ppl(m, tokens, 40));
    const double nll = m.loss(std::span<const int>(tokens).first(41)).item();
    EXPECT_NEAR(evaluate_ppl(m, std::span<const int>(tokens).first(41), 40), std::exp(nll), 1e-3);
    EXPECT_THROW(evaluate_ppl(m, std::vector<int>{1}, 40), InputError);
    EXPECT_THROW(evaluate_ppl(m, std::vector<int>{}, 40), InputError);
}

TEST(EvaluatePpl, MemorizedRepeatedByteApproachesOne) {
    const Corpus corpus = Corpus::from_text(std::string(4000, 'x'), 0.1);
    TrainConfig c = small_train();
    c.lr = 3e-2;
    c.epochs = 3;
    auto m = train_base<float>(tiny_spec(), corpus, c);
    EXPECT_LE(evaluate_ppl(m, corpus.valid, c.seq_len), 1.1);
}

TEST(Finetune, ZeroLearningRateLeavesWeightsBitwise) {
    auto base = Model<float>::init(tiny_spec(), 5);
    TrainConfig c = small_train();
    c.lr = 0.0;
    c.max_steps = 2;
    auto lin = linearize(base, liger_spec(base.spec(), LinearizeConfig{GateVariant::GLA, 0, Arm::Full}, c), 0);
    const auto before = snapshot(lin);
    finetune(lin, small_corpus(), c);
    EXPECT_EQ(snapshot(lin), before);
}

TEST(Finetune, NoTrainableTensorsIsConfigError) {
    auto base = Model<float>::init(tiny_spec(), 6);
    auto target = tiny_spec(LayerPattern::Liger);
    auto lin = linearize(base, target, 0);
    EXPECT_EQ(lin.trainable_count(), 0u);
    EXPECT_THROW(finetune(lin, small_corpus(), small_train()), ConfigError);
}

TEST(Finetune, OnlyAdaptersMove) {
    auto base = Model<float>::init(tiny_spec(), 7);
    TrainConfig c = small_train();
    c.max_steps = 3;
    auto lin = linearize(base, liger_spec(base.spec(), LinearizeConfig{GateVariant::HGRN2, 0, Arm::Full}, c), 0);
    const auto before = lin.named_parameters();
    std::vector<std::vector<float>> old;
    for (const auto& [n, t] : before) {
        old.push_back(t.values());
    }
    finetune(lin, small_corpus(), c);
    const auto after = lin.named_parameters();
    for (std::size_t i = 0; i < after.size(); ++i) {
        const std::string& name = after[i].first;
        if (!Model<float>::is_adapter_name(name)) {
            EXPECT_EQ(after[i].second.values(), old[i]) << name;
        } else if (name.ends_with("lora_B")) {
            EXPECT_NE(after[i].second.values(), old[i]) << name;
        }
    }
}

TEST(Finetune, LoraGradientMatchesFiniteDifferences) {
    auto base = Model<double>::init(tiny_spec(), 8);
    auto target = tiny_spec(LayerPattern::Liger);
    target.lora_rank = 2;
    auto lin = linearize(base, target, 1);
    Rng rng(9);
    auto& b = lin.layers()[0].lora_k->B;
    auto fill = Tensor<double>::randn(b.shape(), rng, 0.1);
    std::copy(fill.data().begin(), fill.data().end(), b.mutable_data().begin());
    const auto tokens = random_tokens(12, 10);
    const auto r = liger::testing::grad_check({lin.layers()[0].lora_k->A, b},
                                              [&](const auto&) { return lin.loss(tokens); });
    EXPECT_LT(r.max_rel, 1e-4);
}

TEST(Finetune, ImprovesLinearizedModel) {
    const Corpus corpus = small_corpus(20000);
    TrainConfig c = small_train();
    auto base = train_base<float>(tiny_spec(), corpus, c);
    c.lr = 1e-2;
    const auto r = run_arm(base, Arm::Full, LinearizeConfig{GateVariant::GLA, 0, Arm::Full}, corpus, c);
    EXPECT_LT(r.ppl_after, r.ppl_before);
    EXPECT_EQ(r.trainable, lora_parameter_count(2, 16, 2));
    EXPECT_EQ(r.train.tokens, r.train.steps * c.global_batch() * c.seq_len);
}

TEST(Ablation, ArmsRunAndNoSwaIsPureGrm) {
    const Corpus corpus = small_corpus();
    TrainConfig c = small_train();
    c.max_steps = 2;
    auto base = train_base<double>(tiny_spec(), corpus, c);
    for (Arm arm : {Arm::Full, Arm::GateProj, Arm::FeatMap, Arm::NoLora, Arm::NoSwa}) {
        const auto r = run_arm(base, arm, LinearizeConfig{}, corpus, c);
        EXPECT_GT(r.ppl_after, 1.0) << to_string(arm);
        EXPECT_TRUE(std::isfinite(r.ppl_after)) << to_string(arm);
    }
    EXPECT_THROW(parse_arm("no_mlp"), ConfigError);

    LinearizeConfig lin{GateVariant::GLA, 0, Arm::NoSwa};
    auto model = linearize(base, liger_spec(base.spec(), lin, c), 0);
    Rng rng(11);
    auto q = Tensor<double>::randn({2, 9, 8}, rng);
    auto k = Tensor<double>::randn({2, 9, 8}, rng);
    auto v = Tensor<double>::randn({2, 9, 8}, rng);
    EXPECT_EQ(model.liger_mix(q, k, v, 0).values(), model.grm_branch(q, k, v, 0).values());
}

TEST(LigerSpec, PatternFromHybridEvery) {
    const ModelSpec base = tiny_spec();
    TrainConfig c;
    auto pure = liger_spec(base, LinearizeConfig{GateVariant::GSA, 0, Arm::Full}, c);
    EXPECT_EQ(pure.pattern, LayerPattern::Liger);
    EXPECT_EQ(pure.attn.gate_variant, GateVariant::GSA);
    EXPECT_EQ(pure.lora_rank, 8u);
    auto hyb = liger_spec(base, LinearizeConfig{GateVariant::GLA, 3, Arm::Full}, c);
    EXPECT_EQ(hyb.pattern, LayerPattern::Hybrid);
    EXPECT_EQ(hyb.hybrid_every, 3u);
}
