// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "liger/gemm.hpp"
#include "liger/tensor.hpp"

namespace liger {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[i] = da == 1 ? db : da;
    }
    return out;
}

// Per-output-dimension strides into `in`, zero along broadcast dimensions.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t axis_in = in.size() - 1 - i;
        const std::size_t axis_out = out.size() - 1 - i;
        strides[axis_out] = in[axis_in] == 1 ? 0 : stride;
        stride *= in[axis_in];
    }
    return strides;
}

template <typename F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t n = numel_of(out);
    if (n == 0) {
        return;
    }
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

// `f(a, b)` computes the value; `da(a, b, y)` and `db(a, b, y)` the partials.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
    if (a.shape() == b.shape()) {
        const auto av = a.data();
        const auto bv = b.data();
        std::vector<T> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = f(av[i], bv[i]);
        }
        return make_result(a.shape(), std::move(out), {a, b}, [da, db](Node<T>& self) {
            const auto& x = self.parents[0]->data;
            const auto& y = self.parents[1]->data;
            T* gx = parent_grad(self, 0);
            T* gy = parent_grad(self, 1);
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                const T g = self.grad[i];
                if (gx) {
                    gx[i] += g * da(x[i], y[i], self.data[i]);
                }
                if (gy) {
                    gy[i] += g * db(x[i], y[i], self.data[i]);
                }
            }
        });
    }
    Shape shape = broadcast_shape(a.shape(), b.shape());
    auto sa = broadcast_strides(a.shape(), shape);
    auto sb = broadcast_strides(b.shape(), shape);
    std::vector<T> out(numel_of(shape));
    const auto av = a.data();
    const auto bv = b.data();
    broadcast_loop(shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = f(av[ia], bv[ib]);
    });
    return make_result(shape, std::move(out), {a, b}, [da, db, shape, sa, sb](Node<T>& self) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        T* gx = parent_grad(self, 0);
        T* gy = parent_grad(self, 1);
        broadcast_loop(shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            const T g = self.grad[o];
            if (gx) {
                gx[ia] += g * da(x[ia], y[ib], self.data[o]);
            }
            if (gy) {
                gy[ib] += g * db(x[ia], y[ib], self.data[o]);
            }
        });
    });
}

// `f(x)` computes the value; `df(x, y)` the derivative given input and output.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
    const auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return make_result(x.shape(), std::move(out), {x}, [df](Node<T>& self) {
        T* gx = parent_grad(self, 0);
        if (!gx) {
            return;
        }
        const auto& in = self.parents[0]->data;
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            gx[i] += self.grad[i] * df(in[i], self.data[i]);
        }
    });
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
    if (x > T(0)) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (numpy broadcasting)

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
        [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return detail::stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

/// ln(1 + e^x) in the branch form that never overflows.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return detail::stable_softplus(v); },
        [](T v, T) { return detail::stable_sigmoid(v); });
}

/// log(sigmoid(x)) = -softplus(-x); finite for every finite x.
template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return -detail::stable_softplus(-v); },
        [](T v, T) { return detail::stable_sigmoid(-v); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v * detail::stable_sigmoid(v); },
        [](T v, T) {
            const T s = detail::stable_sigmoid(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

/// max(x, floor); the gradient is cut where the floor is active.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
    return detail::unary(
        x, [floor](T v) { return v < floor ? floor : v; },
        [floor](T v, T) { return v < floor ? T(0) : T(1); });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_result(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            gx[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> unsqueeze(const Tensor<T>& x, std::size_t axis) {
    Shape s = x.shape();
    if (axis > s.size()) {
        throw DimensionError("unsqueeze axis out of range");
    }
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    return reshape(x, std::move(s));
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::size_t> dims) {
    const std::size_t r = x.rank();
    if (dims.size() != r) {
        throw DimensionError("permute rank mismatch");
    }
    Shape out_shape(r);
    std::vector<std::size_t> in_strides(r);
    std::size_t stride = 1;
    for (std::size_t i = r; i-- > 0;) {
        in_strides[i] = stride;
        stride *= x.shape()[i];
    }
    std::vector<std::size_t> strides(r);
    std::vector<bool> seen(r, false);
    for (std::size_t i = 0; i < r; ++i) {
        if (dims[i] >= r || seen[dims[i]]) {
            throw DimensionError("invalid permutation");
        }
        seen[dims[i]] = true;
        out_shape[i] = x.shape()[dims[i]];
        strides[i] = in_strides[dims[i]];
    }
    const std::vector<std::size_t> zero(r, 0);
    std::vector<T> out(x.numel());
    const auto xv = x.data();
    detail::broadcast_loop(out_shape, strides, zero,
                           [&](std::size_t o, std::size_t i, std::size_t) { out[o] = xv[i]; });
    return detail::make_result(out_shape, std::move(out), {x},
                               [out_shape, strides, zero](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        detail::broadcast_loop(out_shape, strides, zero, [&](std::size_t o, std::size_t i, std::size_t) {
            gx[i] += self.grad[o];
        });
    });
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    std::vector<std::size_t> dims(x.rank());
    std::iota(dims.begin(), dims.end(), std::size_t{0});
    if (dims.size() < 2) {
        throw DimensionError("transpose needs rank >= 2");
    }
    std::swap(dims[dims.size() - 1], dims[dims.size() - 2]);
    return permute(x, std::move(dims));
}

/// Broadcasts x to `shape`; the gradient sums over replicated axes.
template <typename T>
Tensor<T> expand(const Tensor<T>& x, Shape shape) {
    if (detail::broadcast_shape(x.shape(), shape) != shape) {
        throw DimensionError("cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto sx = detail::broadcast_strides(x.shape(), shape);
    const std::vector<std::size_t> zero(shape.size(), 0);
    std::vector<T> out(numel_of(shape));
    const auto xv = x.data();
    detail::broadcast_loop(shape, sx, zero, [&](std::size_t o, std::size_t i, std::size_t) { out[o] = xv[i]; });
    return detail::make_result(shape, std::move(out), {x}, [shape, sx, zero](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        detail::broadcast_loop(shape, sx, zero, [&](std::size_t o, std::size_t i, std::size_t) {
            gx[i] += self.grad[o];
        });
    });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::ptrdiff_t axis_in, std::size_t start, std::size_t length) {
    const std::size_t axis = x.normalize_axis(axis_in);
    if (start + length > x.shape()[axis]) {
        throw DimensionError("narrow out of range on " + shape_str(x.shape()));
    }
    const auto s = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    shape[axis] = length;
    std::vector<T> out(s.outer * length * s.inner);
    const auto xv = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.n + start) * s.inner),
                    length * s.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
    }
    return detail::make_result(std::move(shape), std::move(out), {x}, [s, start, length](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        for (std::size_t o = 0; o < s.outer; ++o) {
            const T* g = self.grad.data() + o * length * s.inner;
            T* dst = gx + (o * s.n + start) * s.inner;
            for (std::size_t i = 0; i < length * s.inner; ++i) {
                dst[i] += g[i];
            }
        }
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::ptrdiff_t axis_in) {
    if (parts.empty()) {
        throw DimensionError("concat of zero tensors");
    }
    const std::size_t axis = parts[0].normalize_axis(axis_in);
    Shape shape = parts[0].shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        if (ps.size() != shape.size()) {
            throw DimensionError("concat rank mismatch");
        }
        total += ps[axis];
        ps[axis] = shape[axis];
        if (ps != shape) {
            throw DimensionError("concat shape mismatch");
        }
    }
    shape[axis] = total;
    const auto s = detail::split_axis(shape, axis);
    std::vector<T> out(numel_of(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t len = p.shape()[axis];
        const auto pv = p.data();
        for (std::size_t o = 0; o < s.outer; ++o) {
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner), len * s.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * s.n + off) * s.inner));
        }
        off += len;
    }
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        lens.push_back(p.shape()[axis]);
    }
    return detail::make_result_n(std::move(shape), std::move(out), parts,
                                 [s, offsets, lens](Node<T>& self) {
        for (std::size_t k = 0; k < lens.size(); ++k) {
            T* gp = detail::parent_grad(self, k);
            if (!gp) {
                continue;
            }
            for (std::size_t o = 0; o < s.outer; ++o) {
                const T* g = self.grad.data() + (o * s.n + offsets[k]) * s.inner;
                T* dst = gp + o * lens[k] * s.inner;
                for (std::size_t i = 0; i < lens[k] * s.inner; ++i) {
                    dst[i] += g[i];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = T(0);
    for (T v : x.data()) {
        total += v;
    }
    return detail::make_result(Shape{}, std::vector<T>{total}, {x}, [](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        const std::size_t n = self.parents[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) {
            gx[i] += self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::ptrdiff_t axis_in, bool keepdim = false) {
    const std::size_t axis = x.normalize_axis(axis_in);
    const auto s = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    if (keepdim) {
        shape[axis] = 1;
    } else {
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    std::vector<T> out(s.outer * s.inner, T(0));
    const auto xv = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.n; ++i) {
            for (std::size_t j = 0; j < s.inner; ++j) {
                out[o * s.inner + j] += xv[(o * s.n + i) * s.inner + j];
            }
        }
    }
    return detail::make_result(std::move(shape), std::move(out), {x}, [s](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.n; ++i) {
                for (std::size_t j = 0; j < s.inner; ++j) {
                    gx[(o * s.n + i) * s.inner + j] += self.grad[o * s.inner + j];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::ptrdiff_t axis, bool keepdim = false) {
    const std::size_t n = x.dim(axis);
    return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(n));
}

// ---------------------------------------------------------------------------
// Scans

/// Running sum along `axis`. `reverse` scans from the end; `exclusive` omits
/// the current element. -inf entries propagate without producing NaN.
template <typename T>
Tensor<T> cumsum(const Tensor<T>& x, std::ptrdiff_t axis_in, bool reverse = false, bool exclusive = false) {
    const std::size_t axis = x.normalize_axis(axis_in);
    const auto s = detail::split_axis(x.shape(), axis);
    auto scan = [s](const T* in, T* out, bool rev, bool excl) {
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t j = 0; j < s.inner; ++j) {
                T acc = T(0);
                for (std::size_t step = 0; step < s.n; ++step) {
                    const std::size_t i = rev ? s.n - 1 - step : step;
                    const std::size_t at = (o * s.n + i) * s.inner + j;
                    if (excl) {
                        out[at] += acc;
                        acc += in[at];
                    } else {
                        acc += in[at];
                        out[at] += acc;
                    }
                }
            }
        }
    };
    std::vector<T> out(x.numel(), T(0));
    scan(x.data().data(), out.data(), reverse, exclusive);
    return detail::make_result(x.shape(), std::move(out), {x}, [scan, reverse, exclusive](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (gx) {
            scan(self.grad.data(), gx, !reverse, exclusive);
        }
    });
}

/// Running product along `axis` (time). Backward is the exact O(n^2)
/// product-rule expansion, so zero entries are handled without division.
template <typename T>
Tensor<T> cumprod(const Tensor<T>& x, std::ptrdiff_t axis_in) {
    const std::size_t axis = x.normalize_axis(axis_in);
    const auto s = detail::split_axis(x.shape(), axis);
    std::vector<T> out(x.numel());
    const auto xv = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
            T acc = T(1);
            for (std::size_t i = 0; i < s.n; ++i) {
                const std::size_t at = (o * s.n + i) * s.inner + j;
                acc *= xv[at];
                out[at] = acc;
            }
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [s](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        const auto& in = self.parents[0]->data;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t j = 0; j < s.inner; ++j) {
                auto at = [&](std::size_t i) { return (o * s.n + i) * s.inner + j; };
                T prefix = T(1);
                for (std::size_t k = 0; k < s.n; ++k) {
                    T partial = prefix; // product of x[0..i] without x[k]
                    T acc = T(0);
                    for (std::size_t i = k; i < s.n; ++i) {
                        if (i > k) {
                            partial *= in[at(i)];
                        }
                        acc += self.grad[at(i)] * partial;
                    }
                    gx[at(k)] += acc;
                    prefix *= in[at(k)];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax

/// Max-subtracted softmax along `axis`. -inf logits get probability 0.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis_in = -1) {
    const std::size_t axis = x.normalize_axis(axis_in);
    const auto s = detail::split_axis(x.shape(), axis);
    std::vector<T> out(x.numel());
    const auto xv = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
            auto at = [&](std::size_t i) { return (o * s.n + i) * s.inner + j; };
            T m = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < s.n; ++i) {
                m = std::max(m, xv[at(i)]);
            }
            if (m == -std::numeric_limits<T>::infinity()) {
                for (std::size_t i = 0; i < s.n; ++i) {
                    out[at(i)] = T(0);
                }
                continue;
            }
            T total = T(0);
            for (std::size_t i = 0; i < s.n; ++i) {
                const T e = std::exp(xv[at(i)] - m);
                out[at(i)] = e;
                total += e;
            }
            for (std::size_t i = 0; i < s.n; ++i) {
                out[at(i)] /= total;
            }
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [s](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t j = 0; j < s.inner; ++j) {
                auto at = [&](std::size_t i) { return (o * s.n + i) * s.inner + j; };
                T dot = T(0);
                for (std::size_t i = 0; i < s.n; ++i) {
                    dot += self.grad[at(i)] * self.data[at(i)];
                }
                for (std::size_t i = 0; i < s.n; ++i) {
                    gx[at(i)] += self.data[at(i)] * (self.grad[at(i)] - dot);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix products

/// Product over the last two axes. Rank-3 operands carry a batch axis; a
/// rank-2 operand is shared across the other operand's batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3) {
        throw DimensionError("matmul supports rank 2 or 3, got " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(-2);
    const std::size_t k = a.dim(-1);
    const std::size_t n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t ba = a.rank() == 3 ? a.dim(0) : 1;
    const std::size_t bb = b.rank() == 3 ? b.dim(0) : 1;
    if (ba != bb && ba != 1 && bb != 1) {
        throw DimensionError("matmul batch dimensions disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t batch = std::max(ba, bb);
    const bool batched = a.rank() == 3 || b.rank() == 3;
    Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
    std::vector<T> out(batch * m * n, T(0));
    const T* av = a.data().data();
    const T* bv = b.data().data();
    const std::size_t sa = ba == 1 ? 0 : m * k;
    const std::size_t sb = bb == 1 ? 0 : k * n;
    for (std::size_t i = 0; i < batch; ++i) {
        gemm::nn(m, n, k, av + i * sa, bv + i * sb, out.data() + i * m * n);
    }
    return detail::make_result(std::move(shape), std::move(out), {a, b},
                               [batch, m, n, k, sa, sb](Node<T>& self) {
        T* ga = detail::parent_grad(self, 0);
        T* gb = detail::parent_grad(self, 1);
        const T* av = self.parents[0]->data.data();
        const T* bv = self.parents[1]->data.data();
        for (std::size_t i = 0; i < batch; ++i) {
            const T* g = self.grad.data() + i * m * n;
            if (ga) {
                gemm::nt(m, k, n, g, bv + i * sb, ga + i * sa);
            }
            if (gb) {
                gemm::tn(k, n, m, av + i * sa, g, gb + i * sb);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Network primitives

/// RMS normalization over the last axis with a learned gain.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
    const std::size_t d = x.dim(-1);
    if (weight.numel() != d) {
        throw DimensionError("rms_norm weight length mismatch");
    }
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    std::vector<T> inv(rows);
    const auto xv = x.data();
    const auto wv = weight.data();
    for (std::size_t r = 0; r < rows; ++r) {
        T ss = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            ss += xv[r * d + j] * xv[r * d + j];
        }
        inv[r] = T(1) / std::sqrt(ss / static_cast<T>(d) + eps);
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = xv[r * d + j] * inv[r] * wv[j];
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x, weight}, [rows, d, inv](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        T* gw = detail::parent_grad(self, 1);
        const auto& xv = self.parents[0]->data;
        const auto& wv = self.parents[1]->data;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* g = self.grad.data() + r * d;
            const T* xr = xv.data() + r * d;
            T dot = T(0);
            for (std::size_t j = 0; j < d; ++j) {
                const T xhat = xr[j] * inv[r];
                if (gw) {
                    gw[j] += g[j] * xhat;
                }
                dot += g[j] * wv[j] * xhat;
            }
            if (gx) {
                dot /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const T xhat = xr[j] * inv[r];
                    gx[r * d + j] += inv[r] * (g[j] * wv[j] - xhat * dot);
                }
            }
        }
    });
}

/// Row gather: out[t] = weight[ids[t]].
template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, std::span<const int> ids) {
    const std::size_t vocab = weight.dim(0);
    const std::size_t d = weight.dim(1);
    std::vector<T> out(ids.size() * d);
    const auto wv = weight.data();
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
            throw InputError("token id " + std::to_string(ids[t]) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
        std::copy_n(wv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[t]) * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(t * d));
    }
    std::vector<int> saved(ids.begin(), ids.end());
    return detail::make_result(Shape{ids.size(), d}, std::move(out), {weight}, [saved, d](Node<T>& self) {
        T* gw = detail::parent_grad(self, 0);
        if (!gw) {
            return;
        }
        for (std::size_t t = 0; t < saved.size(); ++t) {
            T* row = gw + static_cast<std::size_t>(saved[t]) * d;
            for (std::size_t j = 0; j < d; ++j) {
                row[j] += self.grad[t * d + j];
            }
        }
    });
}

/// Mean next-token negative log-likelihood of `targets` under `logits` [T, V].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw DimensionError("cross_entropy expects [T, V] logits matching targets");
    }
    const std::size_t rows = logits.dim(0);
    const std::size_t vocab = logits.dim(1);
    if (rows == 0) {
        throw InputError("cross_entropy over zero tokens");
    }
    std::vector<T> probs(logits.numel());
    const auto lv = logits.data();
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
            throw InputError("target id outside vocabulary");
        }
        const T* row = lv.data() + r * vocab;
        T m = *std::max_element(row, row + vocab);
        T z = T(0);
        for (std::size_t j = 0; j < vocab; ++j) {
            probs[r * vocab + j] = std::exp(row[j] - m);
            z += probs[r * vocab + j];
        }
        for (std::size_t j = 0; j < vocab; ++j) {
            probs[r * vocab + j] /= z;
        }
        total += static_cast<double>(m + std::log(z) - row[targets[r]]);
    }
    std::vector<int> saved(targets.begin(), targets.end());
    const T loss = static_cast<T>(total / static_cast<double>(rows));
    return detail::make_result(Shape{}, std::vector<T>{loss}, {logits},
                               [probs = std::move(probs), saved, rows, vocab](Node<T>& self) {
        T* gl = detail::parent_grad(self, 0);
        if (!gl) {
            return;
        }
        const T g = self.grad[0] / static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < vocab; ++j) {
                T p = probs[r * vocab + j];
                if (static_cast<int>(j) == saved[r]) {
                    p -= T(1);
                }
                gl[r * vocab + j] += g * p;
            }
        }
    });
}

/// Rotary position embedding over the last axis of x [..., T, d]; row t is
/// rotated as absolute position `offset + t`.
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t offset, double base = 10000.0) {
    const std::size_t d = x.dim(-1);
    const std::size_t steps = x.dim(-2);
    if (d % 2 != 0) {
        throw DimensionError("rope needs an even head dimension");
    }
    const std::size_t half = d / 2;
    std::vector<T> cosv(steps * half);
    std::vector<T> sinv(steps * half);
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            const double angle = static_cast<double>(offset + t) * freq;
            cosv[t * half + i] = static_cast<T>(std::cos(angle));
            sinv[t * half + i] = static_cast<T>(std::sin(angle));
        }
    }
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    const auto xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t t = r % steps;
        for (std::size_t i = 0; i < half; ++i) {
            const T c = cosv[t * half + i];
            const T s = sinv[t * half + i];
            const T x0 = xv[r * d + 2 * i];
            const T x1 = xv[r * d + 2 * i + 1];
            out[r * d + 2 * i] = x0 * c - x1 * s;
            out[r * d + 2 * i + 1] = x0 * s + x1 * c;
        }
    }
    return detail::make_result(x.shape(), std::move(out), {x},
                               [cosv, sinv, rows, steps, half, d](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t t = r % steps;
            for (std::size_t i = 0; i < half; ++i) {
                const T c = cosv[t * half + i];
                const T s = sinv[t * half + i];
                const T g0 = self.grad[r * d + 2 * i];
                const T g1 = self.grad[r * d + 2 * i + 1];
                gx[r * d + 2 * i] += g0 * c + g1 * s;
                gx[r * d + 2 * i + 1] += -g0 * s + g1 * c;
            }
        }
    });
}

/// Additive -inf mask over the last two axes of scores [..., Tq, Tk]. Entry
/// (r, c) stands for query position q_offset + r and key position
/// k_offset + c, and is kept iff the key is causal and within `window`.
template <typename T>
Tensor<T> band_mask(const Tensor<T>& scores, std::size_t q_offset, std::size_t k_offset, std::size_t window) {
    const std::size_t tq = scores.dim(-2);
    const std::size_t tk = scores.dim(-1);
    const std::size_t mats = scores.numel() / (tq * tk);
    auto keep = [=](std::size_t r, std::size_t c) {
        const std::size_t qpos = q_offset + r;
        const std::size_t kpos = k_offset + c;
        return kpos <= qpos && kpos + window > qpos;
    };
    std::vector<T> out(scores.data().begin(), scores.data().end());
    for (std::size_t b = 0; b < mats; ++b) {
        for (std::size_t r = 0; r < tq; ++r) {
            for (std::size_t c = 0; c < tk; ++c) {
                if (!keep(r, c)) {
                    out[(b * tq + r) * tk + c] = -std::numeric_limits<T>::infinity();
                }
            }
        }
    }
    return detail::make_result(scores.shape(), std::move(out), {scores}, [=](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) {
            return;
        }
        for (std::size_t b = 0; b < mats; ++b) {
            for (std::size_t r = 0; r < tq; ++r) {
                for (std::size_t c = 0; c < tk; ++c) {
                    if (keep(r, c)) {
                        gx[(b * tq + r) * tk + c] += self.grad[(b * tq + r) * tk + c];
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Helpers

template <typename T>
bool all_finite(const Tensor<T>& x) {
    return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    T m = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

} // namespace liger
