// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "liger/checkpoint.hpp"
#include "liger/metrics.hpp"
#include "liger/pipeline.hpp"

namespace liger {

using Json = nlohmann::json;

/// Everything a CLI run depends on. Sections: model (base architecture),
/// train, linearize, bench.
struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    std::string corpus;                // path; empty selects the synthetic corpus
    std::size_t synthetic_bytes = 200000;
    LinearizeConfig linearize;
    BenchConfig bench;
    std::string csv = "results.csv";

    void validate() const {
        model.validate();
        train.validate();
        if (model.pattern != LayerPattern::Softmax) {
            throw ConfigError("model section describes the softmax base model");
        }
        if (!(train.valid_fraction > 0.0 && train.valid_fraction < 1.0)) {
            throw ConfigError("train.valid_fraction must lie in (0, 1)");
        }
        if (corpus.empty() && synthetic_bytes < 1024) {
            throw ConfigError("train.synthetic_bytes must be >= 1024");
        }
        if (bench.lengths.empty() || !std::is_sorted(bench.lengths.begin(), bench.lengths.end())) {
            throw ConfigError("bench.lengths must be non-empty and ascending");
        }
        for (std::size_t l : bench.lengths) {
            if (l <= bench.prefix) {
                throw ConfigError("bench.lengths must exceed bench.prefix");
            }
        }
        if (bench.repeats == 0 || bench.prefix == 0 || !(bench.warmup_frac >= 0.0 && bench.warmup_frac < 1.0)) {
            throw ConfigError("bench: repeats, prefix >= 1 and warmup_frac in [0, 1) required");
        }
        ModelSpec lin = liger_spec(model, linearize, train);
        lin.validate();
    }
};

namespace detail {

// Reads keys from one JSON object and rejects any it did not consume.
class StrictObject {
public:
    StrictObject(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) {
            throw ConfigError(where_ + " must be a JSON object");
        }
    }

    template <typename U>
    void read(const char* key, U& into) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            return;
        }
        try {
            into = j_.at(key).get<U>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const Json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError("unknown key '" + where_ + "." + key + "'");
            }
        }
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <typename E, typename Parse>
void read_enum(StrictObject& o, const char* key, E& into, Parse parse) {
    std::string s = to_string(into);
    o.read(key, s);
    into = parse(s);
}

} // namespace detail

inline Json base_model_json(const ModelSpec& s) {
    return Json{{"vocab_size", s.vocab_size},   {"dim", s.dim},
                {"num_layers", s.num_layers},   {"num_heads", s.attn.num_heads},
                {"window", s.attn.window},      {"alpha", s.attn.alpha},
                {"beta", s.attn.beta},          {"feature_map", to_string(s.attn.feature_map)},
                {"gsa_slots", s.attn.gsa_slots}, {"hgrn2_gamma", s.attn.hgrn2_gamma},
                {"chunk_size", s.attn.chunk_size}, {"rope_in_swa", s.attn.rope_in_swa},
                {"mlp_hidden", s.hidden()},     {"rope_base", s.rope_base},
                {"norm_eps", s.norm_eps}};
}

inline void read_base_model(detail::StrictObject& o, ModelSpec& s) {
    o.read("vocab_size", s.vocab_size);
    o.read("dim", s.dim);
    o.read("num_layers", s.num_layers);
    o.read("num_heads", s.attn.num_heads);
    o.read("window", s.attn.window);
    o.read("alpha", s.attn.alpha);
    o.read("beta", s.attn.beta);
    detail::read_enum(o, "feature_map", s.attn.feature_map, parse_feature_map);
    o.read("gsa_slots", s.attn.gsa_slots);
    o.read("hgrn2_gamma", s.attn.hgrn2_gamma);
    o.read("chunk_size", s.attn.chunk_size);
    o.read("rope_in_swa", s.attn.rope_in_swa);
    o.read("mlp_hidden", s.mlp_hidden);
    o.read("rope_base", s.rope_base);
    o.read("norm_eps", s.norm_eps);
    if (s.attn.num_heads != 0) {
        s.attn.head_dim_k = s.dim / s.attn.num_heads;
        s.attn.head_dim_v = s.dim / s.attn.num_heads;
    }
}

/// Full architecture, as stored in checkpoints.
inline Json spec_json(const ModelSpec& s) {
    Json j = base_model_json(s);
    j["pattern"] = to_string(s.pattern);
    j["hybrid_every"] = s.hybrid_every;
    j["gate"] = to_string(s.attn.gate_variant);
    j["arm"] = to_string(s.arm);
    j["lora_rank"] = s.lora_rank;
    j["lora_alpha"] = s.lora_alpha;
    return j;
}

inline ModelSpec spec_from_json(const Json& j) {
    ModelSpec s;
    detail::StrictObject o(j, "spec");
    read_base_model(o, s);
    detail::read_enum(o, "pattern", s.pattern, parse_layer_pattern);
    o.read("hybrid_every", s.hybrid_every);
    detail::read_enum(o, "gate", s.attn.gate_variant, parse_gate_variant);
    detail::read_enum(o, "arm", s.arm, parse_arm);
    o.read("lora_rank", s.lora_rank);
    o.read("lora_alpha", s.lora_alpha);
    o.finish();
    s.validate();
    return s;
}

inline Json to_json(const RunConfig& c) {
    const TrainConfig& t = c.train;
    return Json{
        {"model", base_model_json(c.model)},
        {"train",
         {{"lr", t.lr},
          {"beta1", t.adamw.beta1},
          {"beta2", t.adamw.beta2},
          {"adam_eps", t.adamw.eps},
          {"weight_decay", t.adamw.weight_decay},
          {"warmup_frac", t.warmup_frac},
          {"epochs", t.epochs},
          {"max_steps", t.max_steps},
          {"seq_len", t.seq_len},
          {"micro_batch", t.micro_batch},
          {"grad_accum", t.grad_accum},
          {"seed", t.seed},
          {"lora_rank", t.lora_rank},
          {"lora_alpha", t.lora_alpha},
          {"valid_fraction", t.valid_fraction},
          {"corpus", c.corpus},
          {"synthetic_bytes", c.synthetic_bytes}}},
        {"linearize",
         {{"gate", to_string(c.linearize.gate)},
          {"hybrid_every", c.linearize.hybrid_every},
          {"arm", to_string(c.linearize.arm)}}},
        {"bench",
         {{"lengths", c.bench.lengths},
          {"prefix", c.bench.prefix},
          {"repeats", c.bench.repeats},
          {"warmup_frac", c.bench.warmup_frac},
          {"csv", c.csv}}},
    };
}

/// Parses a RunConfig; absent keys keep their defaults, unknown keys are errors.
inline RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    detail::StrictObject root(j, "config");
    if (const Json* m = root.child("model")) {
        detail::StrictObject o(*m, "model");
        read_base_model(o, c.model);
        o.finish();
    }
    if (const Json* tj = root.child("train")) {
        detail::StrictObject o(*tj, "train");
        TrainConfig& t = c.train;
        o.read("lr", t.lr);
        o.read("beta1", t.adamw.beta1);
        o.read("beta2", t.adamw.beta2);
        o.read("adam_eps", t.adamw.eps);
        o.read("weight_decay", t.adamw.weight_decay);
        o.read("warmup_frac", t.warmup_frac);
        o.read("epochs", t.epochs);
        o.read("max_steps", t.max_steps);
        o.read("seq_len", t.seq_len);
        o.read("micro_batch", t.micro_batch);
        o.read("grad_accum", t.grad_accum);
        o.read("seed", t.seed);
        o.read("lora_rank", t.lora_rank);
        o.read("lora_alpha", t.lora_alpha);
        o.read("valid_fraction", t.valid_fraction);
        o.read("corpus", c.corpus);
        o.read("synthetic_bytes", c.synthetic_bytes);
        o.finish();
    }
    if (const Json* lj = root.child("linearize")) {
        detail::StrictObject o(*lj, "linearize");
        detail::read_enum(o, "gate", c.linearize.gate, parse_gate_variant);
        o.read("hybrid_every", c.linearize.hybrid_every);
        detail::read_enum(o, "arm", c.linearize.arm, parse_arm);
        o.finish();
    }
    if (const Json* bj = root.child("bench")) {
        detail::StrictObject o(*bj, "bench");
        o.read("lengths", c.bench.lengths);
        o.read("prefix", c.bench.prefix);
        o.read("repeats", c.bench.repeats);
        o.read("warmup_frac", c.bench.warmup_frac);
        o.read("csv", c.csv);
        o.finish();
    }
    root.finish();
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open config '" + path + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    Json j;
    try {
        j = Json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return run_config_from_json(j);
}

/// FNV-1a 64 over the canonical JSON text, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
    const std::string text = to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline Corpus load_corpus(const RunConfig& c) {
    if (c.corpus.empty()) {
        return Corpus::from_text(synthetic_text(c.synthetic_bytes, c.train.seed), c.train.valid_fraction);
    }
    return Corpus::from_file(c.corpus, c.train.valid_fraction);
}

// ---------------------------------------------------------------------------
// Model checkpoints

template <typename T>
Checkpoint model_checkpoint(const Model<T>& model, const RunConfig& run) {
    Checkpoint ck;
    ck.config = Json{{"spec", spec_json(model.spec())}, {"run", to_json(run)}}.dump();
    for (const auto& [name, t] : model.named_parameters()) {
        ck.tensors.push_back(CheckpointTensor::from(name, t));
    }
    return ck;
}

struct LoadedModelInfo {
    ModelSpec spec;
    RunConfig run;
};

inline LoadedModelInfo checkpoint_info(const Checkpoint& ck) {
    Json j;
    try {
        j = Json::parse(ck.config);
    } catch (const nlohmann::json::parse_error& e) {
        throw CheckpointError(CheckpointErrorKind::Format, std::string("config blob is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("spec") || !j.contains("run")) {
        throw CheckpointError(CheckpointErrorKind::Format, "config blob lacks spec/run sections");
    }
    return {spec_from_json(j.at("spec")), run_config_from_json(j.at("run"))};
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ck) {
    const LoadedModelInfo info = checkpoint_info(ck);
    Model<T> model = Model<T>::empty(info.spec);
    const auto params = model.named_parameters();
    if (params.size() != ck.tensors.size()) {
        throw CheckpointError(CheckpointErrorKind::Format,
                              "checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                                  std::to_string(params.size()));
    }
    for (const auto& [name, t] : params) {
        const CheckpointTensor* src = ck.find(name);
        if (!src || src->shape != t.shape()) {
            throw CheckpointError(CheckpointErrorKind::Format, "tensor '" + name + "' missing or misshapen");
        }
        const Tensor<T> loaded = src->to_tensor<T>();
        Tensor<T> dst = t;
        std::copy(loaded.data().begin(), loaded.data().end(), dst.mutable_data().begin());
    }
    return model;
}

template <typename T>
void save_model(const Model<T>& model, const RunConfig& run, const std::string& path) {
    save_checkpoint(model_checkpoint(model, run), path);
}

template <typename T>
Model<T> load_model(const std::string& path) {
    return model_from_checkpoint<T>(load_checkpoint(path));
}

} // namespace liger
