// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "liger/tensor.hpp"

namespace liger {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// File layout (all integers little-endian):
//   "LIGR" | u32 version | u64 config_len | config bytes | u64 tensor_count |
//   tensor_count x { u32 name_len | name | u32 rank | u64 dims[rank] | u8 dtype | values } |
//   u32 crc32(all preceding bytes)

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

template <typename T>
constexpr DType dtype_of() {
    return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

struct CheckpointTensor {
    std::string name;
    Shape shape;
    DType dtype = DType::F32;
    std::vector<unsigned char> bytes; // raw little-endian values

    bool operator==(const CheckpointTensor&) const = default;

    template <typename T>
    static CheckpointTensor from(const std::string& name, const Tensor<T>& t) {
        CheckpointTensor c;
        c.name = name;
        c.shape = t.shape();
        c.dtype = dtype_of<T>();
        c.bytes.resize(t.bytes());
        std::memcpy(c.bytes.data(), t.data().data(), t.bytes());
        return c;
    }

    template <typename T>
    Tensor<T> to_tensor() const {
        const std::size_t n = numel_of(shape);
        std::vector<T> values(n);
        if (dtype == DType::F32) {
            std::vector<float> raw(n);
            std::memcpy(raw.data(), bytes.data(), n * 4);
            std::copy(raw.begin(), raw.end(), values.begin());
        } else {
            std::vector<double> raw(n);
            std::memcpy(raw.data(), bytes.data(), n * 8);
            std::transform(raw.begin(), raw.end(), values.begin(), [](double v) { return static_cast<T>(v); });
        }
        return Tensor<T>::from(shape, std::move(values));
    }
};

struct Checkpoint {
    std::string config; // UTF-8 JSON
    std::vector<CheckpointTensor> tensors;

    bool operator==(const Checkpoint&) const = default;

    const CheckpointTensor* find(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) {
                return &t;
            }
        }
        return nullptr;
    }
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

template <typename U>
void put(std::vector<unsigned char>& out, U v) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    out.insert(out.end(), b, b + sizeof(U));
}

// Bounds-checked reader; running past the end means the file is truncated.
class Reader {
public:
    Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, data_ + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    const unsigned char* take(std::size_t n) {
        need(n);
        const unsigned char* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    std::size_t remaining() const { return size_ - pos_; }

private:
    void need(std::size_t n) const {
        if (n > size_ - pos_) {
            throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint truncated");
        }
    }

    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline Checkpoint parse_body(const unsigned char* data, std::size_t size) {
    Reader r(data, size);
    r.take(8); // magic + version, already checked
    Checkpoint ck;
    const auto config_len = r.get<std::uint64_t>();
    const unsigned char* cfg = r.take(config_len);
    ck.config.assign(reinterpret_cast<const char*>(cfg), config_len);
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        CheckpointTensor t;
        const auto name_len = r.get<std::uint32_t>();
        const unsigned char* name = r.take(name_len);
        t.name.assign(reinterpret_cast<const char*>(name), name_len);
        const auto rank = r.get<std::uint32_t>();
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::uint64_t>();
            t.shape.push_back(static_cast<std::size_t>(dim));
            if (dim != 0 && n > r.remaining() / dim) {
                throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint truncated in tensor '" + t.name + "'");
            }
            n *= static_cast<std::size_t>(dim);
        }
        const auto tag = r.get<std::uint8_t>();
        if (tag > 1) {
            throw CheckpointError(CheckpointErrorKind::Format, "unknown dtype tag " + std::to_string(tag));
        }
        t.dtype = static_cast<DType>(tag);
        const std::size_t nbytes = n * dtype_size(t.dtype);
        const unsigned char* values = r.take(nbytes);
        t.bytes.assign(values, values + nbytes);
        ck.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) {
        throw CheckpointError(CheckpointErrorKind::Format, "trailing bytes after tensor table");
    }
    return ck;
}

} // namespace detail

inline std::vector<unsigned char> serialize(const Checkpoint& ck) {
    std::vector<unsigned char> out = {'L', 'I', 'G', 'R'};
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint64_t>(out, ck.config.size());
    out.insert(out.end(), ck.config.begin(), ck.config.end());
    detail::put<std::uint64_t>(out, ck.tensors.size());
    for (const auto& t : ck.tensors) {
        if (t.bytes.size() != numel_of(t.shape) * dtype_size(t.dtype)) {
            throw ContractError("tensor '" + t.name + "' byte size does not match its shape");
        }
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) {
            detail::put<std::uint64_t>(out, d);
        }
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
        out.insert(out.end(), t.bytes.begin(), t.bytes.end());
    }
    detail::put<std::uint32_t>(out, crc32_of(out.data(), out.size()));
    return out;
}

/// Decodes a checkpoint image. Check order: size and magic, version, then
/// CRC. A CRC mismatch is reported as truncation when the body cannot be
/// parsed within the available bytes.
inline Checkpoint deserialize(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8) {
        throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint truncated (header)");
    }
    if (std::memcmp(bytes.data(), "LIGR", 4) != 0) {
        throw CheckpointError(CheckpointErrorKind::Format, "not a LIGR checkpoint (bad magic)");
    }
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointErrorKind::Version, "unsupported checkpoint version " + std::to_string(version));
    }
    if (bytes.size() < 8 + 8 + 8 + 4) {
        throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint truncated");
    }
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (crc32_of(bytes.data(), body) != stored) {
        try {
            detail::parse_body(bytes.data(), body);
        } catch (const CheckpointError& e) {
            if (e.kind() == CheckpointErrorKind::Truncated) {
                throw;
            }
        }
        throw CheckpointError(CheckpointErrorKind::Crc, "checkpoint CRC mismatch");
    }
    return detail::parse_body(bytes.data(), body);
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const std::vector<unsigned char> bytes = serialize(ck);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint '" + path + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing checkpoint '" + path + "'");
    }
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize(read_file_bytes(path)); }

} // namespace liger
