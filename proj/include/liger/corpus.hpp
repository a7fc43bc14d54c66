// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "liger/errors.hpp"
#include "liger/rng.hpp"

namespace liger {

inline constexpr int kByteVocab = 256;
inline constexpr int kPadToken = 256;

/// Byte-level token stream split into disjoint train and validation parts.
struct Corpus {
    std::vector<int> train;
    std::vector<int> valid;

    static std::vector<int> tokenize(std::string_view text) {
        std::vector<int> out;
        out.reserve(text.size());
        for (char c : text) {
            out.push_back(static_cast<int>(static_cast<unsigned char>(c)));
        }
        return out;
    }

    /// The trailing `valid_fraction` of the text becomes the validation split.
    static Corpus from_text(std::string_view text, double valid_fraction) {
        if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) {
            throw ConfigError("valid_fraction must lie in (0, 1)");
        }
        const std::vector<int> all = tokenize(text);
        const auto cut = static_cast<std::size_t>(static_cast<double>(all.size()) * (1.0 - valid_fraction));
        Corpus c;
        c.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut));
        c.valid.assign(all.begin() + static_cast<std::ptrdiff_t>(cut), all.end());
        return c;
    }

    static Corpus from_file(const std::string& path, double valid_fraction) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw IoError("cannot open corpus file '" + path + "'");
        }
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return from_text(text, valid_fraction);
    }
};

/// Seeded English-like text: short templated sentences over small word
/// lists, with a few recurring names so both local spelling and longer
/// agreement carry signal.
inline std::string synthetic_text(std::size_t bytes, std::uint64_t seed) {
    static constexpr std::array<std::string_view, 8> names = {"anna", "boris", "chen", "dara",
                                                              "emil", "fatou", "gita", "hugo"};
    static constexpr std::array<std::string_view, 10> verbs = {"sees",  "finds", "takes", "likes", "paints",
                                                               "moves", "reads", "holds", "keeps", "wants"};
    static constexpr std::array<std::string_view, 8> adjs = {"red", "small", "old", "quiet",
                                                             "green", "heavy", "bright", "round"};
    static constexpr std::array<std::string_view, 10> nouns = {"box",  "lamp", "book", "stone", "chair",
                                                               "cup", "door", "map",  "coat",  "bell"};
    static constexpr std::array<std::string_view, 4> places = {"in the hall", "by the river", "at home",
                                                               "on the hill"};
    Rng rng(seed);
    std::string out;
    out.reserve(bytes + 64);
    while (out.size() < bytes) {
        const auto& who = names[rng.below(names.size())];
        out += who;
        out += ' ';
        out += verbs[rng.below(verbs.size())];
        out += " the ";
        if (rng.below(2) == 0) {
            out += adjs[rng.below(adjs.size())];
            out += ' ';
        }
        out += nouns[rng.below(nouns.size())];
        if (rng.below(3) == 0) {
            out += ' ';
            out += places[rng.below(places.size())];
        }
        if (rng.below(4) == 0) {
            out += " and ";
            out += who;
            out += " smiles";
        }
        out += rng.below(5) == 0 ? ".\n" : ". ";
    }
    out.resize(bytes);
    return out;
}

} // namespace liger
