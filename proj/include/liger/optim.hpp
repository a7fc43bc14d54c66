// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "liger/tensor.hpp"

namespace liger {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay. Moments are kept in double.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.zero_grad();
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto w = params_[i].mutable_data();
            const auto g = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = g[j];
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
                const double wj = w[j];
                w[j] = static_cast<T>(wj - lr * (update + cfg_.weight_decay * wj));
            }
        }
    }

    std::size_t steps_taken() const noexcept { return t_; }

private:
    std::vector<Tensor<T>> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

/// Linear warmup over ceil(warmup_frac * total) steps, then cosine decay to 0.
inline double cosine_lr(double base_lr, std::size_t step, std::size_t total, double warmup_frac) {
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total)));
    if (step < warmup) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    if (total <= warmup + 1) {
        return base_lr;
    }
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

} // namespace liger
