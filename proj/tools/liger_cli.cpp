// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

// liger: pipeline driver. Every subcommand prints the resolved run config as
// JSON before computing. Failures print one line "error: <category>: <msg>"
// to stderr and exit with the category's code.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "liger/liger.hpp"

using namespace liger;

namespace {

enum Exit : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kConfig = 3,
    kIo = 4,
    kCheckpoint = 5,
    kInput = 6,
    kNumeric = 7,
    kContract = 8,
    kTolerance = 9,
};

int exit_code(const Error& e) {
    const std::string& c = e.category();
    if (c == "config") return kConfig;
    if (c == "io") return kIo;
    if (c.rfind("checkpoint", 0) == 0) return kCheckpoint;
    if (c == "input") return kInput;
    if (c == "numeric") return kNumeric;
    return kContract;
}

struct Flags {
    std::string config;
    std::string in;
    std::string out;
    std::string gate;
    std::string arm;
    std::optional<std::size_t> hybrid_every;
    std::vector<std::size_t> lengths;
    std::size_t steps = 64;
    std::string dtype = "f64";
    std::uint64_t seed = 0;
};

// Config file if given, else the one stored in the input checkpoint, else
// defaults; then flag overrides.
RunConfig resolve(const Flags& f, const std::optional<Checkpoint>& ck) {
    RunConfig run;
    if (!f.config.empty()) {
        run = load_run_config(f.config);
    } else if (ck) {
        run = checkpoint_info(*ck).run;
    }
    if (!f.gate.empty()) {
        run.linearize.gate = parse_gate_variant(f.gate);
    }
    if (!f.arm.empty()) {
        run.linearize.arm = parse_arm(f.arm);
    }
    if (f.hybrid_every) {
        run.linearize.hybrid_every = *f.hybrid_every;
    }
    if (!f.lengths.empty()) {
        run.bench.lengths = f.lengths;
    }
    run.validate();
    return run;
}

void echo(const RunConfig& run) {
    std::cout << to_json(run).dump(2) << std::endl;
}

std::function<void(std::size_t, double)> progress(std::size_t total) {
    return [total](std::size_t step, double loss) {
        if (step % 10 == 0 || step + 1 == total) {
            std::cout << "step " << step + 1 << "/" << total << " loss " << format_double(loss) << std::endl;
        }
    };
}

std::string run_id_of(const std::string& path) { return std::filesystem::path(path).stem().string(); }

std::string report_path(const Flags& f, const RunConfig& run) { return f.out.empty() ? run.csv : f.out; }

int cmd_train_base(const Flags& f) {
    const RunConfig run = resolve(f, std::nullopt);
    echo(run);
    const Corpus corpus = load_corpus(run);
    const Model<float> base = stage_train_base(run, corpus, nullptr, progress(planned_steps(corpus.train.size(), run.train)));
    save_model(base, run, f.out);
    std::cout << "valid ppl " << format_double(evaluate_ppl(base, corpus.valid, run.train.seq_len)) << "\nwrote "
              << f.out << std::endl;
    return kOk;
}

int cmd_linearize(const Flags& f) {
    const Checkpoint ck = load_checkpoint(f.in);
    const RunConfig run = resolve(f, ck);
    echo(run);
    const Model<float> base = model_from_checkpoint<float>(ck);
    if (base.spec().pattern != LayerPattern::Softmax) {
        throw ConfigError("linearize expects a softmax base checkpoint");
    }
    const Model<float> lin = stage_linearize(base, run);
    save_model(lin, run, f.out);
    std::cout << "parameters " << lin.parameter_count() << " (base " << lin.base_parameter_count() << ")\nwrote "
              << f.out << std::endl;
    return kOk;
}

int cmd_finetune(const Flags& f) {
    const Checkpoint ck = load_checkpoint(f.in);
    const RunConfig run = resolve(f, ck);
    echo(run);
    Model<float> model = model_from_checkpoint<float>(ck);
    const Corpus corpus = load_corpus(run);
    const double before = evaluate_ppl(model, corpus.valid, run.train.seq_len);
    model.set_finetune_trainable();
    std::cout << "trainable " << model.trainable_count() << std::endl;
    stage_finetune(model, corpus, run, progress(planned_steps(corpus.train.size(), run.train)));
    save_model(model, run, f.out);
    std::cout << "valid ppl " << format_double(before) << " -> "
              << format_double(evaluate_ppl(model, corpus.valid, run.train.seq_len)) << "\nwrote " << f.out
              << std::endl;
    return kOk;
}

int cmd_eval(const Flags& f) {
    const Checkpoint ck = load_checkpoint(f.in);
    const RunConfig run = resolve(f, ck);
    echo(run);
    const Model<float> model = model_from_checkpoint<float>(ck);
    const std::vector<RunMetrics> rows = {stage_eval(model, load_corpus(run), run, run_id_of(f.in))};
    emit_report(rows, report_path(f, run));
    std::cout << summarize(rows) << "wrote " << report_path(f, run) << std::endl;
    return kOk;
}

int cmd_bench(const Flags& f) {
    const Checkpoint ck = load_checkpoint(f.in);
    const RunConfig run = resolve(f, ck);
    echo(run);
    const Model<float> model = model_from_checkpoint<float>(ck);
    const std::vector<RunMetrics> rows = {stage_bench(model, load_corpus(run), run, run_id_of(f.in))};
    emit_report(rows, report_path(f, run));
    std::cout << summarize(rows) << "wrote " << report_path(f, run) << std::endl;
    return kOk;
}

int cmd_ablate(const Flags& f) {
    const Checkpoint ck = load_checkpoint(f.in);
    const RunConfig run = resolve(f, ck);
    echo(run);
    const Model<float> base = model_from_checkpoint<float>(ck);
    if (base.spec().pattern != LayerPattern::Softmax) {
        throw ConfigError("ablate expects a softmax base checkpoint");
    }
    std::vector<ArmResult> details;
    const auto rows = stage_ablate(base, load_corpus(run), run, &details);
    for (const auto& r : details) {
        std::cout << to_string(r.arm) << " trainable " << r.trainable << " ppl " << format_double(r.ppl_before)
                  << " -> " << format_double(r.ppl_after) << std::endl;
    }
    emit_report(rows, report_path(f, run));
    std::cout << "wrote " << report_path(f, run) << std::endl;
    return kOk;
}

template <typename T>
double equiv_deviation(GateVariant var, const Flags& f, const GateParams& p) {
    Rng rng(f.seed);
    const auto in = random_kernel_inputs<double>(var, 2, f.steps, 16, 16, rng, p);
    return form_deviation(var, in.template cast<T>());
}

int cmd_equiv_check(const Flags& f) {
    const GateVariant var = parse_gate_variant(f.gate.empty() ? "gla" : f.gate);
    if (f.steps == 0) {
        throw ConfigError("--T must be >= 1");
    }
    const GateParams p;
    const double tol = f.dtype == "f64" ? 1e-10 : 1e-4;
    const Json resolved = {{"gate", to_string(var)}, {"T", f.steps},        {"dtype", f.dtype}, {"heads", 2},
                           {"dk", 16},             {"dv", 16},            {"chunk", 16},     {"seed", f.seed},
                           {"tolerance", tol}};
    std::cout << resolved.dump(2) << std::endl;
    const double dev = f.dtype == "f64" ? equiv_deviation<double>(var, f, p) : equiv_deviation<float>(var, f, p);
    std::cout << "max deviation " << format_double(dev) << std::endl;
    if (!(dev < tol)) {
        std::cerr << "error: tolerance: deviation " << format_double(dev) << " >= " << format_double(tol)
                  << std::endl;
        return kTolerance;
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linearize softmax transformers into gated recurrent hybrids"};
    app.require_subcommand(1);
    Flags f;

    auto gate_check = CLI::IsMember({"gla", "mamba2", "mlstm", "gret", "hgrn2", "rwkv6", "gsa"});
    auto arm_check = CLI::IsMember({"full", "gate_proj", "feat_map", "no_lora", "no_swa"});
    auto add_config = [&](CLI::App* c) { c->add_option("--config", f.config, "RunConfig JSON file"); };
    auto add_in = [&](CLI::App* c) { c->add_option("--in", f.in, "input checkpoint")->required(); };
    auto add_lin = [&](CLI::App* c) {
        c->add_option("--gate", f.gate, "gate variant")->check(gate_check);
        c->add_option("--arm", f.arm, "ablation arm")->check(arm_check);
        c->add_option("--hybrid-every", f.hybrid_every, "Liger layers per softmax layer, 0 = none");
    };

    auto* train = app.add_subcommand("train-base", "train the softmax base model");
    add_config(train);
    train->add_option("--out", f.out, "output checkpoint")->required();

    auto* lin = app.add_subcommand("linearize", "convert a base checkpoint to Liger");
    add_config(lin);
    add_in(lin);
    add_lin(lin);
    lin->add_option("--out", f.out, "output checkpoint")->required();

    auto* ft = app.add_subcommand("finetune", "fine-tune the arm's adapters");
    add_config(ft);
    add_in(ft);
    ft->add_option("--out", f.out, "output checkpoint")->required();

    auto* ev = app.add_subcommand("eval", "validation perplexity to CSV");
    add_config(ev);
    add_in(ev);
    ev->add_option("--out", f.out, "CSV path (default from config)");

    auto* bench = app.add_subcommand("bench", "decode latency and state bytes to CSV");
    add_config(bench);
    add_in(bench);
    bench->add_option("--lengths", f.lengths, "comma-separated decode lengths")->delimiter(',');
    bench->add_option("--out", f.out, "CSV path (default from config)");

    auto* eq = app.add_subcommand("equiv-check", "compare the three kernel forms");
    eq->add_option("--gate", f.gate, "gate variant")->check(gate_check);
    eq->add_option("--T", f.steps, "sequence length");
    eq->add_option("--dtype", f.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    eq->add_option("--seed", f.seed, "input seed");

    auto* ab = app.add_subcommand("ablate", "every arm from one base with equal budgets");
    add_config(ab);
    add_in(ab);
    add_lin(ab);
    ab->add_option("--out", f.out, "CSV path (default from config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: usage: " << msg << std::endl;
        return kUsage;
    }

    try {
        if (*train) return cmd_train_base(f);
        if (*lin) return cmd_linearize(f);
        if (*ft) return cmd_finetune(f);
        if (*ev) return cmd_eval(f);
        if (*bench) return cmd_bench(f);
        if (*eq) return cmd_equiv_check(f);
        if (*ab) return cmd_ablate(f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << std::endl;
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << std::endl;
        return kInternal;
    }
    return kInternal;
}
