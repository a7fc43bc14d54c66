// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace liger {

/// Base class for every error raised by the library. `category()` is a short
/// machine-parseable tag that the CLI prints and maps to an exit code.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error("input", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

enum class CheckpointErrorKind { Truncated, Crc, Version, Format };

class CheckpointError : public Error {
public:
    CheckpointError(CheckpointErrorKind kind, const std::string& what)
        : Error(tag(kind), what), kind_(kind) {}

    CheckpointErrorKind kind() const noexcept { return kind_; }

private:
    static std::string tag(CheckpointErrorKind kind) {
        switch (kind) {
        case CheckpointErrorKind::Truncated: return "checkpoint-truncated";
        case CheckpointErrorKind::Crc: return "checkpoint-crc";
        case CheckpointErrorKind::Version: return "checkpoint-version";
        case CheckpointErrorKind::Format: return "checkpoint-format";
        }
        return "checkpoint";
    }

    CheckpointErrorKind kind_;
};

} // namespace liger
