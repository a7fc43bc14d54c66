// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "test_support.hpp"

using namespace liger;
using liger::testing::random_tokens;
using liger::testing::tiny_spec;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "liger_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

RunConfig tiny_run() {
    RunConfig r;
    r.model = tiny_spec();
    r.train.seq_len = 32;
    r.train.grad_accum = 2;
    r.bench.lengths = {64, 128};
    return r;
}

CheckpointErrorKind load_kind(const std::vector<unsigned char>& bytes) {
    try {
        deserialize(bytes);
    } catch (const CheckpointError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected a checkpoint error";
    return CheckpointErrorKind::Format;
}

} // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
    Rng rng(1);
    Checkpoint ck;
    ck.config = R"({"note":"café"})";
    ck.tensors.push_back(CheckpointTensor::from("a", Tensor<float>::randn({3, 4}, rng, 1.0)));
    ck.tensors.push_back(CheckpointTensor::from("b.f64", Tensor<double>::randn({2, 2, 2}, rng, 1.0)));
    ck.tensors.push_back(CheckpointTensor::from("scalar", Tensor<float>::scalar(-0.0f)));
    const auto bytes = serialize(ck);
    EXPECT_EQ(deserialize(bytes), ck);
    EXPECT_EQ(serialize(deserialize(bytes)), bytes);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LIGR");
}

TEST(Checkpoint, EmptyTableIsValid) {
    Checkpoint ck;
    ck.config = "{}";
    const auto bytes = serialize(ck);
    EXPECT_EQ(bytes.size(), 4u + 4 + 8 + 2 + 8 + 4);
    const Checkpoint back = deserialize(bytes);
    EXPECT_TRUE(back.tensors.empty());
    EXPECT_EQ(back.config, "{}");
}

TEST(Checkpoint, LayoutMatchesHandEncoding) {
    Checkpoint ck;
    ck.config = "c";
    ck.tensors.push_back(CheckpointTensor::from("w", Tensor<float>::from({2}, {1.0f, -2.0f})));
    const auto bytes = serialize(ck);
    std::vector<unsigned char> expect = {'L', 'I', 'G', 'R', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 'c',
                                         1,   0,   0,   0,   0, 0, 0, 0, 1, 0, 0, 0, 'w', 1, 0, 0, 0,
                                         2,   0,   0,   0,   0, 0, 0, 0, 0};
    for (float f : {1.0f, -2.0f}) {
        unsigned char b[4];
        std::memcpy(b, &f, 4);
        expect.insert(expect.end(), b, b + 4);
    }
    const std::uint32_t crc = crc32_of(expect.data(), expect.size());
    for (int i = 0; i < 4; ++i) {
        expect.push_back(static_cast<unsigned char>(crc >> (8 * i)));
    }
    EXPECT_EQ(bytes, expect);
}

TEST(Checkpoint, CorruptionKindsAreDistinct) {
    Rng rng(2);
    Checkpoint ck;
    ck.config = "{}";
    ck.tensors.push_back(CheckpointTensor::from("w", Tensor<float>::randn({8, 8}, rng, 1.0)));
    const auto good = serialize(ck);

    auto flipped = good;
    flipped[good.size() / 2] ^= 0x10;
    EXPECT_EQ(load_kind(flipped), CheckpointErrorKind::Crc);

    auto truncated = good;
    truncated.resize(good.size() - 9);
    EXPECT_EQ(load_kind(truncated), CheckpointErrorKind::Truncated);
    EXPECT_EQ(load_kind(std::vector<unsigned char>(good.begin(), good.begin() + 6)), CheckpointErrorKind::Truncated);

    auto version = good;
    version[4] = 2;
    EXPECT_EQ(load_kind(version), CheckpointErrorKind::Version);

    auto magic = good;
    magic[0] = 'X';
    EXPECT_EQ(load_kind(magic), CheckpointErrorKind::Format);

    auto crc = good;
    crc.back() ^= 1;
    EXPECT_EQ(load_kind(crc), CheckpointErrorKind::Crc);
}

TEST(Checkpoint, ErrorCategories) {
    EXPECT_EQ(CheckpointError(CheckpointErrorKind::Crc, "x").category(), "checkpoint-crc");
    EXPECT_EQ(CheckpointError(CheckpointErrorKind::Truncated, "x").category(), "checkpoint-truncated");
    EXPECT_EQ(CheckpointError(CheckpointErrorKind::Version, "x").category(), "checkpoint-version");
    EXPECT_EQ(IoError("x").category(), "io");
    EXPECT_THROW(load_checkpoint(scratch("missing.ligr").string()), IoError);
}

TEST(ModelIo, SaveLoadReproducesLogits) {
    const auto run = tiny_run();
    auto base = Model<float>::init(run.model, 3);
    const auto path = scratch("base.ligr").string();
    save_model(base, run, path);
    auto back = load_model<float>(path);
    const auto tokens = random_tokens(20, 1);
    EXPECT_EQ(back.forward(tokens).values(), base.forward(tokens).values());
    const auto names = base.named_parameters();
    const auto loaded = back.named_parameters();
    ASSERT_EQ(names.size(), loaded.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        EXPECT_EQ(names[i].first, loaded[i].first);
        EXPECT_EQ(names[i].second.values(), loaded[i].second.values());
    }
}

TEST(ModelIo, LinearizedRoundTripReproducesLogits) {
    auto run = tiny_run();
    run.linearize.gate = GateVariant::GSA;
    run.linearize.hybrid_every = 1;
    auto base = Model<float>::init(run.model, 4);
    auto lin = linearize(base, liger_spec(run.model, run.linearize, run.train), 0);
    const auto path = scratch("lin.ligr").string();
    save_model(lin, run, path);
    const auto info = checkpoint_info(load_checkpoint(path));
    EXPECT_EQ(info.spec.pattern, LayerPattern::Hybrid);
    EXPECT_EQ(info.spec.attn.gate_variant, GateVariant::GSA);
    EXPECT_EQ(to_json(info.run), to_json(run));
    auto back = load_model<float>(path);
    const auto tokens = random_tokens(20, 2);
    EXPECT_EQ(back.forward(tokens).values(), lin.forward(tokens).values());
}

TEST(ModelIo, MismatchedTensorTableIsFormatError) {
    const auto run = tiny_run();
    auto ck = model_checkpoint(Model<float>::init(run.model, 5), run);
    ck.tensors.pop_back();
    EXPECT_THROW(model_from_checkpoint<float>(ck), CheckpointError);
    ck.config = "not json";
    EXPECT_THROW(checkpoint_info(ck), CheckpointError);
}

TEST(RunConfigJson, DefaultsEchoAndReproduce) {
    const RunConfig d = run_config_from_json(Json::object());
    EXPECT_EQ(d.train.lr, 1e-3);
    EXPECT_EQ(d.train.seed, 0u);
    EXPECT_EQ(d.linearize.hybrid_every, 7u);
    EXPECT_EQ(d.model.attn.window, 64u);
    EXPECT_EQ(d.model.attn.alpha, 0.5);
    const Json echo = to_json(d);
    EXPECT_EQ(to_json(run_config_from_json(echo)), echo);
    EXPECT_EQ(config_hash(run_config_from_json(echo)), config_hash(d));
}

TEST(RunConfigJson, PartialOverridesAndUnknownKeys) {
    const auto c = run_config_from_json(Json::parse(R"({"train": {"lr": 0.01}, "linearize": {"gate": "hgrn2"}})"));
    EXPECT_EQ(c.train.lr, 0.01);
    EXPECT_EQ(c.linearize.gate, GateVariant::HGRN2);
    EXPECT_EQ(c.train.grad_accum, 8u);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"learning_rate": 0.01}})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"extra": {}})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"lr": "fast"}})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"linearize": {"gate": "lstm"}})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"model": {"dim": 30, "num_heads": 4}})")), ConfigError);
    EXPECT_THROW(run_config_from_json(Json::parse(R"({"bench": {"lengths": [512, 256]}})")), ConfigError);
}

TEST(RunConfigJson, HashStableAndSensitive) {
    RunConfig a = tiny_run();
    RunConfig b = tiny_run();
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
    b.train.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(RunConfigJson, FileLoading) {
    const auto path = scratch("cfg.json").string();
    {
        std::ofstream out(path);
        out << R"({"train": {"epochs": 1}})";
    }
    EXPECT_EQ(load_run_config(path).train.epochs, 1u);
    {
        std::ofstream out(path);
        out << "{ not json";
    }
    EXPECT_THROW(load_run_config(path), ConfigError);
    EXPECT_THROW(load_run_config(scratch("nope.json").string()), IoError);
}

TEST(Csv, RoundTrip) {
    std::vector<RunMetrics> runs(2);
    runs[0] = {"base", "softmax", 3.25, {{256, 1000.5, 0.25, 4096}, {512, 990.0, 0.5, 8192}}, 0, "0123456789abcdef"};
    runs[1] = {"lin", "full", 1.0 / 3.0, {{256, 12.0, 1e-3, 100}}, 7, "fedcba9876543210"};
    const std::string text = to_csv(runs);
    EXPECT_EQ(text.substr(0, text.find('\n')), "run_id,arm,length,ppl,tok_per_s,p50_ms,state_bytes,seed,config_hash");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    EXPECT_EQ(parse_csv(text), runs);
    EXPECT_THROW(parse_csv("bad header\n"), InputError);
}

TEST(Csv, EmptyMetricsCreateNoFile) {
    const auto path = scratch("empty.csv");
    fs::remove(path);
    EXPECT_THROW(emit_report({}, path.string()), InputError);
    EXPECT_FALSE(fs::exists(path));
    std::vector<RunMetrics> one(1);
    one[0] = {"r", "a", 2.0, {{1, 1.0, 1.0, 1}}, 0, "h"};
    EXPECT_THROW(emit_report(one, "/nonexistent_dir/x.csv"), IoError);
}

TEST(Stats, LineFitRecoversSlope) {
    Rng rng(6);
    std::vector<double> x, y;
    for (int i = 0; i < 200; ++i) {
        x.push_back(i * 0.05);
        y.push_back(3.0 * x.back() + 1.0 + rng.normal(0.0, 0.01));
    }
    const auto f = fit_line(x, y);
    EXPECT_NEAR(f.slope, 3.0, 0.05);
    EXPECT_NEAR(f.intercept, 1.0, 0.05);
    EXPECT_GT(f.r2, 0.999);
    EXPECT_EQ(fit_line({1, 2, 3}, {5, 5, 5}).r2, 1.0);
    EXPECT_THROW(fit_line({1}, {1}), InputError);
}

TEST(Stats, SpearmanAndMedian) {
    EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 25, 100}), 1.0);
    EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
    EXPECT_THROW(median({}), InputError);
}

TEST(Bench, LigerStateIsFlatAndKvMatchesAccounting) {
    BenchConfig cfg;
    cfg.lengths = {64, 128, 256};
    cfg.repeats = 1;
    auto liger_model = Model<float>::init(tiny_spec(LayerPattern::Liger), 7);
    const auto lp = bench_decode(liger_model, cfg, 0);
    ASSERT_EQ(lp.size(), 3u);
    EXPECT_EQ(lp[0].state_bytes, lp[1].state_bytes);
    EXPECT_EQ(lp[1].state_bytes, lp[2].state_bytes);
    auto soft = Model<float>::init(tiny_spec(), 7);
    const auto sp = bench_decode(soft, cfg, 0);
    std::vector<double> x, y;
    for (const auto& p : sp) {
        EXPECT_EQ(p.state_bytes, 2u * 2 * p.length * 16 * 4);
        EXPECT_GT(p.p50_ms, 0.0);
        EXPECT_GT(p.tok_per_s, 0.0);
        x.push_back(static_cast<double>(p.length));
        y.push_back(static_cast<double>(p.state_bytes));
    }
    EXPECT_GT(fit_line(x, y).r2, 0.99);
    cfg.lengths = {256, 128};
    EXPECT_THROW(bench_decode(soft, cfg, 0), ConfigError);
    cfg.lengths = {8};
    EXPECT_THROW(bench_decode(soft, cfg, 0), ConfigError);
}

TEST(Report, SummaryCarriesSlopes) {
    std::vector<RunMetrics> runs(1);
    runs[0] = {"r", "full", 2.0, {{256, 1.0, 0.1, 500}, {512, 1.0, 0.1, 500}}, 0, "h"};
    const std::string s = summarize(runs);
    EXPECT_NE(s.find("state_bytes_slope=0"), std::string::npos);
    EXPECT_NE(s.find("p50_ms_slope="), std::string::npos);
    const auto path = scratch("report.csv");
    emit_report(runs, path.string());
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_EQ(parse_csv(ss.str()), runs);
}
