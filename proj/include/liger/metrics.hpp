// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "liger/corpus.hpp"
#include "liger/decode.hpp"

namespace liger {

struct ProbeMetrics {
    std::size_t length = 0;
    double tok_per_s = 0.0;
    double p50_ms = 0.0;
    std::size_t state_bytes = 0;

    bool operator==(const ProbeMetrics&) const = default;
};

struct RunMetrics {
    std::string run_id;
    std::string arm;
    double ppl = 0.0;
    std::vector<ProbeMetrics> probes;
    std::uint64_t seed = 0;
    std::string config_hash;

    bool operator==(const RunMetrics&) const = default;
};

inline constexpr const char* kCsvHeader = "run_id,arm,length,ppl,tok_per_s,p50_ms,state_bytes,seed,config_hash";

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw InputError("bad number '" + s + "' in CSV");
    }
    return v;
}

template <typename U>
U parse_unsigned(const std::string& s) {
    U v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw InputError("bad integer '" + s + "' in CSV");
    }
    return v;
}

inline std::string to_csv(const std::vector<RunMetrics>& runs) {
    if (runs.empty()) {
        throw InputError("no metrics to report");
    }
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : runs) {
        if (r.run_id.find(',') != std::string::npos || r.arm.find(',') != std::string::npos) {
            throw InputError("run_id and arm must not contain commas");
        }
        for (const auto& p : r.probes) {
            out += r.run_id + "," + r.arm + "," + std::to_string(p.length) + "," + format_double(r.ppl) + "," +
                   format_double(p.tok_per_s) + "," + format_double(p.p50_ms) + "," + std::to_string(p.state_bytes) +
                   "," + std::to_string(r.seed) + "," + r.config_hash + "\n";
        }
    }
    return out;
}

/// Rows sharing a run_id (consecutive) become one RunMetrics.
inline std::vector<RunMetrics> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw InputError("CSV header mismatch");
    }
    std::vector<RunMetrics> runs;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::string cell;
        std::istringstream row(line);
        while (std::getline(row, cell, ',')) {
            f.push_back(cell);
        }
        if (f.size() != 9) {
            throw InputError("CSV row has " + std::to_string(f.size()) + " fields, expected 9");
        }
        if (runs.empty() || runs.back().run_id != f[0]) {
            RunMetrics r;
            r.run_id = f[0];
            r.arm = f[1];
            r.ppl = parse_double(f[3]);
            r.seed = parse_unsigned<std::uint64_t>(f[7]);
            r.config_hash = f[8];
            runs.push_back(std::move(r));
        }
        runs.back().probes.push_back({parse_unsigned<std::size_t>(f[2]), parse_double(f[4]), parse_double(f[5]),
                                      parse_unsigned<std::size_t>(f[6])});
    }
    return runs;
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Ordinary least squares y = slope x + intercept. A perfect fit (including
/// constant y) has r2 = 1.
inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw InputError("line fit needs at least two paired points");
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) {
        throw InputError("line fit needs distinct x values");
    }
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.slope * x[i] + f.intercept);
        ss_res += e * e;
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    f.r2 = ss_tot == 0.0 ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
    return f;
}

namespace detail {

inline std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

} // namespace detail

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const auto rx = detail::ranks(x);
    const auto ry = detail::ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxx == 0.0 || syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
}

inline double median(std::vector<double> v) {
    if (v.empty()) {
        throw InputError("median of an empty sample");
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct BenchConfig {
    std::vector<std::size_t> lengths = {256, 512, 1024, 2048, 4096};
    std::size_t prefix = 16;
    std::size_t repeats = 5;
    double warmup_frac = 0.1;
};

/// Greedy decode sessions up to each probe length. Per-step latencies after
/// the warmup fraction give a median per repeat; the reported p50 and
/// throughput are medians over repeats. State bytes are read at the end.
template <typename T>
std::vector<ProbeMetrics> bench_decode(const Model<T>& model, const BenchConfig& cfg, std::uint64_t seed) {
    if (cfg.repeats == 0 || cfg.prefix == 0) {
        throw ConfigError("bench: repeats and prefix must be >= 1");
    }
    if (!std::is_sorted(cfg.lengths.begin(), cfg.lengths.end())) {
        throw ConfigError("bench: lengths must be ascending");
    }
    Rng rng(seed);
    std::vector<int> prompt(cfg.prefix);
    for (auto& t : prompt) {
        t = static_cast<int>(rng.below(std::min<std::size_t>(model.spec().vocab_size, kByteVocab)));
    }
    using Clock = std::chrono::steady_clock;
    std::vector<ProbeMetrics> out;
    for (std::size_t length : cfg.lengths) {
        if (length <= cfg.prefix) {
            throw ConfigError("bench: every length must exceed the prefix of " + std::to_string(cfg.prefix));
        }
        std::vector<double> p50s;
        std::vector<double> rates;
        std::size_t bytes = 0;
        for (std::size_t r = 0; r < cfg.repeats; ++r) {
            DecodeSession<T> session(model);
            Tensor<T> logits;
            for (int t : prompt) {
                logits = session.step(t);
            }
            std::vector<double> samples;
            samples.reserve(length - cfg.prefix);
            const auto begin = Clock::now();
            while (session.position() < length) {
                const auto v = logits.data();
                const int next = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
                const auto t0 = Clock::now();
                logits = session.step(next);
                samples.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
            }
            const double seconds = std::chrono::duration<double>(Clock::now() - begin).count();
            const auto skip = static_cast<std::ptrdiff_t>(cfg.warmup_frac * static_cast<double>(samples.size()));
            p50s.push_back(median(std::vector<double>(samples.begin() + skip, samples.end())));
            rates.push_back(static_cast<double>(samples.size()) / seconds);
            bytes = session.state_bytes();
        }
        out.push_back({length, median(rates), median(p50s), bytes});
    }
    return out;
}

/// Writes the CSV; nothing is created when `runs` is empty.
inline void emit_report(const std::vector<RunMetrics>& runs, const std::string& path) {
    const std::string csv = to_csv(runs);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write report '" + path + "'");
    }
    out << csv;
    if (!out) {
        throw IoError("failed writing report '" + path + "'");
    }
}

/// One line per run: fitted slopes of state bytes and p50 latency vs length.
inline std::string summarize(const std::vector<RunMetrics>& runs) {
    std::ostringstream os;
    for (const auto& r : runs) {
        os << r.run_id << " arm=" << r.arm << " ppl=" << format_double(r.ppl);
        if (r.probes.size() >= 2) {
            std::vector<double> x, bytes, lat;
            for (const auto& p : r.probes) {
                x.push_back(static_cast<double>(p.length));
                bytes.push_back(static_cast<double>(p.state_bytes));
                lat.push_back(p.p50_ms);
            }
            const LinearFit fb = fit_line(x, bytes);
            const LinearFit fl = fit_line(x, lat);
            os << " state_bytes_slope=" << format_double(fb.slope) << " state_bytes_r2=" << format_double(fb.r2)
               << " p50_ms_slope=" << format_double(fl.slope);
        }
        os << '\n';
    }
    return os.str();
}

} // namespace liger
