// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "liger/config.hpp"
#include "liger/decode.hpp"
#include "liger/metrics.hpp"
#include "liger/pipeline.hpp"

namespace liger {

// Pipeline stages shared by the CLI and the acceptance harness. Models are
// f32 throughout; every stage is a pure function of its inputs and the run
// config, so equal configs give byte-equal artifacts.

inline std::string arm_label(const ModelSpec& spec) {
    return spec.pattern == LayerPattern::Softmax ? "softmax" : to_string(spec.arm);
}

inline Model<float> stage_train_base(const RunConfig& run, const Corpus& corpus, TrainResult* result = nullptr,
                                     const std::function<void(std::size_t, double)>& on_step = {}) {
    run.validate();
    return train_base<float>(run.model, corpus, run.train, result, on_step);
}

inline Model<float> stage_linearize(const Model<float>& base, const RunConfig& run) {
    return linearize(base, liger_spec(base.spec(), run.linearize, run.train), run.train.seed);
}

inline TrainResult stage_finetune(Model<float>& model, const Corpus& corpus, const RunConfig& run,
                                  const std::function<void(std::size_t, double)>& on_step = {}) {
    return finetune(model, corpus, run.train, on_step);
}

/// Validation perplexity plus one probe at seq_len: decode state bytes after
/// seq_len validation tokens, timing fields zero.
inline RunMetrics stage_eval(const Model<float>& model, const Corpus& corpus, const RunConfig& run,
                             const std::string& run_id) {
    RunMetrics m;
    m.run_id = run_id;
    m.arm = arm_label(model.spec());
    m.ppl = evaluate_ppl(model, corpus.valid, run.train.seq_len);
    const std::size_t n = std::min(run.train.seq_len, corpus.valid.size());
    DecodeSession<float> session(model);
    for (std::size_t i = 0; i < n; ++i) {
        session.step(corpus.valid[i]);
    }
    m.probes.push_back({n, 0.0, 0.0, session.state_bytes()});
    m.seed = run.train.seed;
    m.config_hash = config_hash(run);
    return m;
}

/// Validation perplexity plus one timed probe per bench length.
inline RunMetrics stage_bench(const Model<float>& model, const Corpus& corpus, const RunConfig& run,
                              const std::string& run_id) {
    RunMetrics m;
    m.run_id = run_id;
    m.arm = arm_label(model.spec());
    m.ppl = evaluate_ppl(model, corpus.valid, run.train.seq_len);
    m.probes = bench_decode(model, run.bench, run.train.seed);
    m.seed = run.train.seed;
    m.config_hash = config_hash(run);
    return m;
}

/// Every arm from one base with the shared budget; ppl is after fine-tuning
/// and the single probe carries no timing or state.
inline std::vector<RunMetrics> stage_ablate(const Model<float>& base, const Corpus& corpus, const RunConfig& run,
                                            std::vector<ArmResult>* details = nullptr) {
    std::vector<RunMetrics> rows;
    for (Arm arm : {Arm::Full, Arm::GateProj, Arm::FeatMap, Arm::NoLora, Arm::NoSwa}) {
        const ArmResult r = run_arm(base, arm, run.linearize, corpus, run.train);
        RunMetrics m;
        m.run_id = "ablate-" + to_string(arm);
        m.arm = to_string(arm);
        m.ppl = r.ppl_after;
        m.probes.push_back({run.train.seq_len, 0.0, 0.0, 0});
        m.seed = run.train.seed;
        m.config_hash = config_hash(run);
        rows.push_back(std::move(m));
        if (details) {
            details->push_back(r);
        }
    }
    return rows;
}

} // namespace liger
