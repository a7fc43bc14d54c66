// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "liger/corpus.hpp"
#include "liger/model.hpp"
#include "liger/optim.hpp"

namespace liger {

struct TrainConfig {
    double lr = 1e-3;
    AdamWConfig adamw;
    double warmup_frac = 0.03;
    std::size_t epochs = 2;
    std::size_t max_steps = 0; // 0 = as many as the epochs allow
    std::size_t seq_len = 256;
    std::size_t micro_batch = 1;
    std::size_t grad_accum = 8;
    std::uint64_t seed = 0;
    std::size_t lora_rank = 8;
    double lora_alpha = 8.0;
    double valid_fraction = 0.1;

    std::size_t global_batch() const { return micro_batch * grad_accum; }

    void validate() const {
        if (!(lr >= 0.0) || seq_len < 1 || micro_batch < 1 || grad_accum < 1 || epochs < 1) {
            throw ConfigError("train: lr >= 0 and seq_len, micro_batch, grad_accum, epochs >= 1 required");
        }
        if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
            throw ConfigError("train: warmup_frac must lie in [0, 1)");
        }
        if (lora_rank < 1 || !(lora_alpha > 0.0)) {
            throw ConfigError("train: lora_rank >= 1 and lora_alpha > 0 required");
        }
    }
};

struct LinearizeConfig {
    GateVariant gate = GateVariant::GLA;
    std::size_t hybrid_every = 7; // 0 = every layer is Liger
    Arm arm = Arm::Full;
};

/// Liger spec derived from a softmax base spec.
inline ModelSpec liger_spec(const ModelSpec& base, const LinearizeConfig& lin, const TrainConfig& train) {
    ModelSpec s = base;
    s.pattern = lin.hybrid_every == 0 ? LayerPattern::Liger : LayerPattern::Hybrid;
    s.hybrid_every = lin.hybrid_every == 0 ? base.hybrid_every : lin.hybrid_every;
    s.attn.gate_variant = lin.gate;
    s.arm = lin.arm;
    s.lora_rank = train.lora_rank;
    s.lora_alpha = train.lora_alpha;
    return s;
}

struct TrainResult {
    std::vector<double> losses; // one mean loss per optimizer step
    std::size_t steps = 0;
    std::size_t tokens = 0; // steps x global batch x seq_len
};

/// Start offsets of the non-overlapping (seq_len + 1)-token training windows.
inline std::vector<std::size_t> window_starts(std::size_t n_tokens, std::size_t seq_len) {
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + seq_len + 1 <= n_tokens; s += seq_len) {
        starts.push_back(s);
    }
    return starts;
}

inline std::size_t planned_steps(std::size_t n_tokens, const TrainConfig& cfg) {
    const std::size_t windows = window_starts(n_tokens, cfg.seq_len).size();
    const std::size_t per_epoch = windows / cfg.global_batch();
    const std::size_t total = per_epoch * cfg.epochs;
    return cfg.max_steps ? std::min(cfg.max_steps, total) : total;
}

/// Next-token training of every parameter currently marked trainable.
/// Window order is reshuffled per epoch from the seed.
template <typename T>
TrainResult train_model(Model<T>& model, const std::vector<int>& tokens, const TrainConfig& cfg,
                        const std::function<void(std::size_t, double)>& on_step = {}) {
    cfg.validate();
    std::vector<Tensor<T>> params = model.trainable_parameters();
    if (params.empty()) {
        throw ConfigError("no trainable parameters");
    }
    const std::vector<std::size_t> starts = window_starts(tokens.size(), cfg.seq_len);
    const std::size_t total = planned_steps(tokens.size(), cfg);
    if (total == 0) {
        throw InputError("training split too small for one step of " + std::to_string(cfg.global_batch()) +
                         " windows of " + std::to_string(cfg.seq_len) + " tokens");
    }
    AdamW<T> opt(params, cfg.adamw);
    Rng shuffle_rng = Rng(cfg.seed).split(7);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    auto next_window = [&]() {
        if (cursor == order.size() || order.empty()) {
            order.resize(starts.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[shuffle_rng.below(i)]);
            }
            cursor = 0;
        }
        return starts[order[cursor++]];
    };
    TrainResult result;
    const T inv = T(1) / static_cast<T>(cfg.global_batch());
    for (std::size_t step = 0; step < total; ++step) {
        opt.zero_grad();
        double loss_sum = 0.0;
        for (std::size_t a = 0; a < cfg.global_batch(); ++a) {
            const std::size_t s = next_window();
            const std::span<const int> window(tokens.data() + s, cfg.seq_len + 1);
            Tensor<T> loss = model.loss(window);
            loss_sum += static_cast<double>(loss.item());
            scale(loss, inv).backward();
        }
        const double mean_loss = loss_sum / static_cast<double>(cfg.global_batch());
        if (!std::isfinite(mean_loss)) {
            throw NumericError("training diverged at step " + std::to_string(step) + " (loss not finite)");
        }
        opt.step(cosine_lr(cfg.lr, step, total, cfg.warmup_frac));
        result.losses.push_back(mean_loss);
        if (on_step) {
            on_step(step, mean_loss);
        }
    }
    result.steps = total;
    result.tokens = total * cfg.global_batch() * cfg.seq_len;
    return result;
}

/// exp(mean next-token NLL) over `tokens`, scored in consecutive windows of
/// seq_len targets. Every token after the first is scored exactly once.
template <typename T>
double evaluate_ppl(const Model<T>& model, std::span<const int> tokens, std::size_t seq_len) {
    if (tokens.size() < 2) {
        throw InputError("evaluation split is empty");
    }
    if (seq_len == 0) {
        throw ConfigError("seq_len must be >= 1");
    }
    NoGradGuard no_grad;
    double nll = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s + 1 < tokens.size(); s += seq_len) {
        const std::size_t len = std::min(seq_len, tokens.size() - 1 - s);
        const Tensor<T> loss = model.loss(tokens.subspan(s, len + 1));
        nll += static_cast<double>(loss.item()) * static_cast<double>(len);
        count += len;
    }
    return std::exp(nll / static_cast<double>(count));
}

/// Softmax base model trained from scratch.
template <typename T>
Model<T> train_base(const ModelSpec& spec, const Corpus& corpus, const TrainConfig& cfg, TrainResult* result = nullptr,
                    const std::function<void(std::size_t, double)>& on_step = {}) {
    if (spec.pattern != LayerPattern::Softmax) {
        throw ConfigError("train-base expects a softmax pattern");
    }
    Model<T> model = Model<T>::init(spec, cfg.seed);
    model.set_trainable_all(true);
    TrainResult r = train_model(model, corpus.train, cfg, on_step);
    model.set_trainable_all(false);
    if (result) {
        *result = std::move(r);
    }
    return model;
}

/// Fine-tunes the arm's trainable tensors on the training split.
template <typename T>
TrainResult finetune(Model<T>& model, const Corpus& corpus, const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_step = {}) {
    model.set_finetune_trainable();
    TrainResult r = train_model(model, corpus.train, cfg, on_step);
    model.set_trainable_all(false);
    return r;
}

struct ArmResult {
    Arm arm = Arm::Full;
    double ppl_before = 0.0;
    double ppl_after = 0.0;
    std::size_t trainable = 0;
    TrainResult train;
};

/// One ablation arm: linearize the base under the arm, fine-tune with the
/// shared budget and seed, and score the validation split before and after.
template <typename T>
ArmResult run_arm(const Model<T>& base, Arm arm, const LinearizeConfig& lin, const Corpus& corpus,
                  const TrainConfig& cfg) {
    LinearizeConfig l = lin;
    l.arm = arm;
    Model<T> model = linearize(base, liger_spec(base.spec(), l, cfg), cfg.seed);
    ArmResult r;
    r.arm = arm;
    r.ppl_before = evaluate_ppl(model, corpus.valid, cfg.seq_len);
    r.trainable = model.trainable_count();
    r.train = finetune(model, corpus, cfg);
    r.ppl_after = evaluate_ppl(model, corpus.valid, cfg.seq_len);
    return r;
}

} // namespace liger
