#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "emorec/parallel.hpp"
#include "emorec/rng.hpp"
#include "emorec/tensor.hpp"

// Differentiable primitives. Every op validates shapes, computes the forward
// value, rejects non-finite results, and records a backward closure when an
// input requires grad. Parallel kernels partition by output ownership so
// results are bit-identical for any thread count.

namespace emorec {

enum class PadMode { Zero, Replicate };

namespace detail {

template <typename T>
inline void check_finite(const std::vector<T>& v, const char* op) {
    for (const T& x : v) {
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(op) + ": non-finite value in result");
    }
}

template <typename T>
inline void check_input_finite(const Tensor<T>& x, const char* what) {
    for (const T& v : x.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw ValidationError(std::string(what) + ": non-finite input");
}

template <typename T>
inline std::vector<T>* grad_buf(typename Tensor<T>::Node& out, std::size_t i) {
    auto& p = *out.parents[i];
    if (!p.requires_grad) return nullptr;
    if (p.grad.size() != p.data.size()) p.grad.assign(p.data.size(), T(0));
    return &p.grad;
}

// Right-aligned numpy broadcasting of two shapes.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ValidationError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

// Element strides of `shape` aligned into an nd-dim broadcast frame
// (0 stride on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, std::size_t nd) {
    std::vector<std::size_t> strides(nd, 0);
    std::size_t s = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const std::size_t axis = shape.size() - 1 - i;
        strides[nd - 1 - i] = shape[axis] == 1 ? 0 : s;
        s *= shape[axis];
    }
    return strides;
}

// Apply fn(out_index, a_index, b_index) over a broadcast frame.
template <typename Fn>
inline void broadcast_iterate(const Shape& out, const std::vector<std::size_t>& sa,
                              const std::vector<std::size_t>& sb, Fn&& fn) {
    const std::size_t n = shape_numel(out);
    const std::size_t nd = out.size();
    std::vector<std::size_t> idx(nd, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        fn(o, ia, ib);
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

// Sum `src` (shaped like `from`) into the smaller `to` shape it was broadcast
// from. Used by binary-op backward rules.
template <typename T>
inline void reduce_into(const std::vector<T>& src, const Shape& from, const Shape& to,
                        std::vector<T>& dst) {
    if (from == to) {
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        return;
    }
    const auto st = broadcast_strides(to, from.size());
    const std::size_t n = shape_numel(from);
    std::vector<std::size_t> idx(from.size(), 0);
    std::size_t it = 0;
    for (std::size_t o = 0; o < n; ++o) {
        dst[it] += src[o];
        for (std::size_t d = from.size(); d-- > 0;) {
            ++idx[d];
            it += st[d];
            if (idx[d] < from[d]) break;
            it -= st[d] * from[d];
            idx[d] = 0;
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (broadcasting)
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, Bwd bwd) {
    using Node = typename Tensor<T>::Node;
    const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), op);
    std::vector<T> out(shape_numel(out_shape));
    const auto sa = detail::broadcast_strides(a.shape(), out_shape.size());
    const auto sb = detail::broadcast_strides(b.shape(), out_shape.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i]);
    } else {
        detail::broadcast_iterate(out_shape, sa, sb,
                                  [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                      out[o] = fwd(ad[ia], bd[ib]);
                                  });
    }
    detail::check_finite(out, op);

    Shape ash = a.shape(), bsh = b.shape();
    return Tensor<T>::make_result(
        out_shape, std::move(out), op, {a, b},
        [ash, bsh, out_shape, sa, sb, bwd](Node& node) {
            auto& an = *node.parents[0];
            auto& bn = *node.parents[1];
            std::vector<T> da_full, db_full;
            if (an.requires_grad) da_full.assign(shape_numel(out_shape), T(0));
            if (bn.requires_grad) db_full.assign(shape_numel(out_shape), T(0));
            detail::broadcast_iterate(
                out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                    T da, db;
                    bwd(node.grad[o], an.data[ia], bn.data[ib], da, db);
                    if (!da_full.empty()) da_full[o] = da;
                    if (!db_full.empty()) db_full[o] = db;
                });
            if (an.requires_grad) {
                if (an.grad.size() != an.data.size()) an.grad.assign(an.data.size(), T(0));
                detail::reduce_into(da_full, out_shape, ash, an.grad);
            }
            if (bn.requires_grad) {
                if (bn.grad.size() != bn.data.size()) bn.grad.assign(bn.data.size(), T(0));
                detail::reduce_into(db_full, out_shape, bsh, bn.grad);
            }
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T g, T, T, T& da, T& db) {
            da = g;
            db = g;
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T g, T, T, T& da, T& db) {
            da = g;
            db = -g;
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T g, T x, T y, T& da, T& db) {
            da = g * y;
            db = g * x;
        });
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, const char* op, Fwd fwd, Bwd bwd) {
    using Node = typename Tensor<T>::Node;
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);
    detail::check_finite(out, op);
    return Tensor<T>::make_result(a.shape(), std::move(out), op, {a}, [bwd](Node& node) {
        auto* da = detail::grad_buf<T>(node, 0);
        if (!da) return;
        const auto& x = node.parents[0]->data;
        for (std::size_t i = 0; i < node.grad.size(); ++i)
            (*da)[i] += bwd(node.grad[i], x[i], node.data[i]);
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); },
        [](T g, T x, T) { return x > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op(
        a, "sigmoid",
        [](T x) {
            // branch keeps exp() from overflowing for large |x|
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary_op(
        a, "softplus",
        [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
        [](T g, T x, T) {
            if (x >= T(0)) return g / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return g * e / (T(1) + e);
        });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary_op(
        a, "exp", [](T x) { return std::exp(x); }, [](T g, T, T y) { return g * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return unary_op(
        a, "log", [](T x) { return std::log(x); }, [](T g, T x, T) { return g / x; });
}

// tensor ^ scalar
template <typename T>
Tensor<T> pow(const Tensor<T>& a, T p) {
    return unary_op(
        a, "pow", [p](T x) { return std::pow(x, p); },
        [p](T g, T x, T) { return p == T(0) ? T(0) : g * p * std::pow(x, p - T(1)); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return unary_op(
        a, "scale", [s](T x) { return s * x; }, [s](T g, T, T) { return g * s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return unary_op(
        a, "add_scalar", [s](T x) { return x + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return unary_op(
        a, "clamp", [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](T g, T x, T) { return (x >= lo && x <= hi) ? g : T(0); });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    using Node = typename Tensor<T>::Node;
    if (axis >= a.ndim())
        throw ValidationError("softmax: axis " + std::to_string(axis) + " out of range for " +
                              shape_str(a.shape()));
    const auto& sh = a.shape();
    const std::size_t n = sh[axis];
    if (n == 0) throw ValidationError("softmax over empty axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
    for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];

    std::vector<T> out(a.numel());
    const auto& x = a.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T mx = x[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
            T sum = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                const T e = std::exp(x[base + j * inner] - mx);
                out[base + j * inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= sum;
        }
    }
    detail::check_finite(out, "softmax");
    return Tensor<T>::make_result(sh, std::move(out), "softmax", {a},
                                  [n, outer, inner](Node& node) {
                                      auto* da = detail::grad_buf<T>(node, 0);
                                      if (!da) return;
                                      const auto& s = node.data;
                                      const auto& g = node.grad;
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          for (std::size_t in = 0; in < inner; ++in) {
                                              const std::size_t base = o * n * inner + in;
                                              T dot = T(0);
                                              for (std::size_t j = 0; j < n; ++j)
                                                  dot += g[base + j * inner] * s[base + j * inner];
                                              for (std::size_t j = 0; j < n; ++j) {
                                                  const std::size_t k = base + j * inner;
                                                  (*da)[k] += s[k] * (g[k] - dot);
                                              }
                                          }
                                      }
                                  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, std::vector<std::size_t> axes, bool mean = false) {
    using Node = typename Tensor<T>::Node;
    std::sort(axes.begin(), axes.end());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= a.ndim() || (i > 0 && axes[i] == axes[i - 1]))
            throw ValidationError("reduce: bad axes for " + shape_str(a.shape()));
    }
    Shape out_shape;
    std::vector<bool> reduced(a.ndim(), false);
    for (auto ax : axes) reduced[ax] = true;
    for (std::size_t i = 0; i < a.ndim(); ++i)
        if (!reduced[i]) out_shape.push_back(a.shape()[i]);

    // map each input element to its output slot via an odometer walk
    const std::size_t n_out = shape_numel(out_shape);
    std::size_t count = a.numel() / std::max<std::size_t>(1, n_out);
    if (n_out == 0) count = 1;
    std::vector<T> out(n_out, T(0));

    const auto& sh = a.shape();
    std::vector<std::size_t> out_stride(a.ndim(), 0);
    {
        std::size_t s = 1;
        for (std::size_t i = a.ndim(); i-- > 0;) {
            if (!reduced[i]) {
                out_stride[i] = s;
                s *= sh[i];
            }
        }
    }
    const auto& x = a.data();
    std::vector<std::size_t> idx(a.ndim(), 0);
    std::size_t oi = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[oi] += x[i];
        for (std::size_t d = a.ndim(); d-- > 0;) {
            ++idx[d];
            oi += out_stride[d];
            if (idx[d] < sh[d]) break;
            oi -= out_stride[d] * sh[d];
            idx[d] = 0;
        }
    }
    const T inv = mean ? T(1) / static_cast<T>(count) : T(1);
    if (mean)
        for (auto& v : out) v *= inv;
    detail::check_finite(out, mean ? "mean" : "sum");

    Shape in_shape = a.shape();
    return Tensor<T>::make_result(
        out_shape, std::move(out), mean ? "mean" : "sum", {a},
        [in_shape, out_stride, inv](Node& node) {
            auto* da = detail::grad_buf<T>(node, 0);
            if (!da) return;
            const auto& g = node.grad;
            std::vector<std::size_t> idx2(in_shape.size(), 0);
            std::size_t oi2 = 0;
            for (std::size_t i = 0; i < da->size(); ++i) {
                (*da)[i] += g[oi2] * inv;
                for (std::size_t d = in_shape.size(); d-- > 0;) {
                    ++idx2[d];
                    oi2 += out_stride[d];
                    if (idx2[d] < in_shape[d]) break;
                    oi2 -= out_stride[d] * in_shape[d];
                    idx2[d] = 0;
                }
            }
        });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, std::vector<std::size_t> axes) {
    return reduce_sum(a, std::move(axes), true);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    std::vector<std::size_t> axes(a.ndim());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce_sum(a, axes, false);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    std::vector<std::size_t> axes(a.ndim());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce_sum(a, axes, true);
}

// mean over all spatial axes of [B, C, ...] -> [B, C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
    if (a.ndim() < 3) throw ValidationError("global_avg_pool: expects [B,C,spatial...]");
    std::vector<std::size_t> axes;
    for (std::size_t i = 2; i < a.ndim(); ++i) axes.push_back(i);
    return reduce_mean(a, axes);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    using Node = typename Tensor<T>::Node;
    if (shape_numel(new_shape) != a.numel())
        throw ValidationError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                              shape_str(new_shape));
    std::vector<T> out = a.data();
    return Tensor<T>::make_result(std::move(new_shape), std::move(out), "reshape", {a},
                                  [](Node& node) {
                                      auto* da = detail::grad_buf<T>(node, 0);
                                      if (!da) return;
                                      for (std::size_t i = 0; i < node.grad.size(); ++i)
                                          (*da)[i] += node.grad[i];
                                  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::vector<std::size_t> perm) {
    using Node = typename Tensor<T>::Node;
    if (perm.size() != a.ndim()) throw ValidationError("permute: rank mismatch");
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];

    const std::size_t nd = a.ndim();
    std::vector<std::size_t> in_stride(nd, 1);
    for (std::size_t i = nd - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * a.shape()[i + 1];
    // stride of the source index as we walk the output row-major
    std::vector<std::size_t> src_stride(nd);
    for (std::size_t i = 0; i < nd; ++i) src_stride[i] = in_stride[perm[i]];

    std::vector<T> out(a.numel());
    const auto& x = a.data();
    std::vector<std::size_t> idx(nd, 0);
    std::size_t si = 0;
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = x[si];
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            si += src_stride[d];
            if (idx[d] < out_shape[d]) break;
            si -= src_stride[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return Tensor<T>::make_result(out_shape, std::move(out), "permute", {a},
                                  [out_shape, src_stride, nd](Node& node) {
                                      auto* da = detail::grad_buf<T>(node, 0);
                                      if (!da) return;
                                      const auto& g = node.grad;
                                      std::vector<std::size_t> idx2(nd, 0);
                                      std::size_t si2 = 0;
                                      for (std::size_t o = 0; o < g.size(); ++o) {
                                          (*da)[si2] += g[o];
                                          for (std::size_t d = nd; d-- > 0;) {
                                              ++idx2[d];
                                              si2 += src_stride[d];
                                              if (idx2[d] < out_shape[d]) break;
                                              si2 -= src_stride[d] * out_shape[d];
                                              idx2[d] = 0;
                                          }
                                      }
                                  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    using Node = typename Tensor<T>::Node;
    if (parts.empty()) throw ValidationError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ValidationError("concat: axis out of range");
    Shape out_shape = s0;
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
        if (p.ndim() != s0.size()) throw ValidationError("concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d) {
            if (d != axis && p.shape()[d] != s0[d])
                throw ValidationError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                      shape_str(s0));
        }
        total_axis += p.shape()[axis];
    }
    out_shape[axis] = total_axis;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    std::vector<T> out(shape_numel(out_shape));
    std::vector<std::size_t> piece(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) piece[p] = parts[p].shape()[axis] * inner;
    const std::size_t out_row = total_axis * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const auto& src = parts[p].data();
            std::copy_n(src.begin() + o * piece[p], piece[p], out.begin() + o * out_row + off);
            off += piece[p];
        }
    }
    return Tensor<T>::make_result(
        out_shape, std::move(out), "concat", parts, [outer, piece, out_row](Node& node) {
            const auto& g = node.grad;
            std::size_t off = 0;
            for (std::size_t p = 0; p < node.parents.size(); ++p) {
                auto* da = detail::grad_buf<T>(node, p);
                if (da) {
                    for (std::size_t o = 0; o < outer; ++o) {
                        const std::size_t src = o * out_row + off;
                        for (std::size_t i = 0; i < piece[p]; ++i)
                            (*da)[o * piece[p] + i] += g[src + i];
                    }
                }
                off += piece[p];
            }
        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    using Node = typename Tensor<T>::Node;
    if (axis >= a.ndim() || start + len > a.shape()[axis] || len == 0)
        throw ValidationError("slice: bad range on " + shape_str(a.shape()));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.ndim(); ++i) inner *= a.shape()[i];
    const std::size_t in_row = a.shape()[axis] * inner;
    std::vector<T> out(outer * len * inner);
    const auto& x = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.begin() + o * in_row + start * inner, len * inner,
                    out.begin() + o * len * inner);
    return Tensor<T>::make_result(out_shape, std::move(out), "slice", {a},
                                  [outer, inner, in_row, start, len](Node& node) {
                                      auto* da = detail::grad_buf<T>(node, 0);
                                      if (!da) return;
                                      const auto& g = node.grad;
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < len * inner; ++i)
                                              (*da)[o * in_row + start * inner + i] +=
                                                  g[o * len * inner + i];
                                  });
}

// ---------------------------------------------------------------------------
// matmul: [M,K]|[B,M,K] x [K,N]|[B,K,N]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    using Node = typename Tensor<T>::Node;
    const bool ab = a.ndim() == 3, bb = b.ndim() == 3;
    if ((a.ndim() != 2 && !ab) || (b.ndim() != 2 && !bb))
        throw ValidationError("matmul: expects rank 2 or 3 operands");
    const std::size_t B = ab ? a.shape()[0] : (bb ? b.shape()[0] : 1);
    if (ab && bb && a.shape()[0] != b.shape()[0])
        throw ValidationError("matmul: batch mismatch");
    const std::size_t M = a.shape()[ab ? 1 : 0];
    const std::size_t K = a.shape()[ab ? 2 : 1];
    const std::size_t Kb = b.shape()[bb ? 1 : 0];
    const std::size_t N = b.shape()[bb ? 2 : 1];
    if (K != Kb)
        throw ValidationError("matmul: inner dims " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));

    Shape out_shape = (ab || bb) ? Shape{B, M, N} : Shape{M, N};
    std::vector<T> out(shape_numel(out_shape), T(0));
    const T* A = a.ptr();
    const T* Bd = b.ptr();

    parallel_for(B * M, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const std::size_t bi = r / M, m = r % M;
            const T* arow = A + (ab ? bi * M * K : 0) + m * K;
            const T* bmat = Bd + (bb ? bi * K * N : 0);
            T* orow = out.data() + r * N;
            for (std::size_t k = 0; k < K; ++k) {
                const T av = arow[k];
                if (av == T(0)) continue;
                const T* brow = bmat + k * N;
                for (std::size_t n = 0; n < N; ++n) orow[n] += av * brow[n];
            }
        }
    });
    detail::check_finite(out, "matmul");

    return Tensor<T>::make_result(
        out_shape, std::move(out), "matmul", {a, b}, [ab, bb, B, M, K, N](Node& node) {
            const auto& g = node.grad;
            auto& an = *node.parents[0];
            auto& bn = *node.parents[1];
            if (an.requires_grad) {
                if (an.grad.size() != an.data.size()) an.grad.assign(an.data.size(), T(0));
                // dA[m,k] = sum_n g[m,n] * B[k,n]
                parallel_for(ab ? B * M : M, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t r = lo; r < hi; ++r) {
                        const std::size_t reps = ab ? 1 : B;
                        for (std::size_t rep = 0; rep < reps; ++rep) {
                            const std::size_t bi = ab ? r / M : rep;
                            const std::size_t m = ab ? r % M : r;
                            const T* grow = g.data() + (bi * M + m) * N;
                            const T* bmat = bn.data.data() + (bb ? bi * K * N : 0);
                            T* darow = an.grad.data() + (ab ? (bi * M + m) * K : m * K);
                            for (std::size_t k = 0; k < K; ++k) {
                                const T* brow = bmat + k * N;
                                T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
                                std::size_t n = 0;
                                for (; n + 4 <= N; n += 4) {
                                    acc0 += grow[n] * brow[n];
                                    acc1 += grow[n + 1] * brow[n + 1];
                                    acc2 += grow[n + 2] * brow[n + 2];
                                    acc3 += grow[n + 3] * brow[n + 3];
                                }
                                T acc = ((acc0 + acc1) + (acc2 + acc3));
                                for (; n < N; ++n) acc += grow[n] * brow[n];
                                darow[k] += acc;
                            }
                        }
                    }
                });
            }
            if (bn.requires_grad) {
                if (bn.grad.size() != bn.data.size()) bn.grad.assign(bn.data.size(), T(0));
                // dB[k,n] = sum_m A[m,k] * g[m,n]
                parallel_for(bb ? B * K : K, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t r = lo; r < hi; ++r) {
                        const std::size_t reps = bb ? 1 : B;
                        for (std::size_t rep = 0; rep < reps; ++rep) {
                            const std::size_t bi = bb ? r / K : rep;
                            const std::size_t k = bb ? r % K : r;
                            const T* amat = an.data.data() + (ab ? bi * M * K : 0);
                            const T* gmat = g.data() + bi * M * N;
                            T* dbrow = bn.grad.data() + (bb ? (bi * K + k) * N : k * N);
                            for (std::size_t m = 0; m < M; ++m) {
                                const T av = amat[m * K + k];
                                if (av == T(0)) continue;
                                const T* grow = gmat + m * N;
                                for (std::size_t n = 0; n < N; ++n) dbrow[n] += av * grow[n];
                            }
                        }
                    }
                });
            }
        });
}

// ---------------------------------------------------------------------------
// convolutions (stride 1, 'same' padding, odd kernels)
// ---------------------------------------------------------------------------

// x [B,Ci,L], w [Co,Ci,k], bias [Co]
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 PadMode pad = PadMode::Zero) {
    using Node = typename Tensor<T>::Node;
    if (x.ndim() != 3 || w.ndim() != 3 || bias.ndim() != 1)
        throw ValidationError("conv1d: expects x[B,Ci,L], w[Co,Ci,k], bias[Co]");
    const std::size_t B = x.shape()[0], Ci = x.shape()[1], L = x.shape()[2];
    const std::size_t Co = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != Ci || bias.shape()[0] != Co || k % 2 == 0)
        throw ValidationError("conv1d: weight " + shape_str(w.shape()) + " incompatible with x " +
                              shape_str(x.shape()));
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(k / 2);
    const std::ptrdiff_t Ls = static_cast<std::ptrdiff_t>(L);

    std::vector<T> out(B * Co * L);
    const T* X = x.ptr();
    const T* W = w.ptr();
    const T* Bv = bias.ptr();
    const bool repl = pad == PadMode::Replicate;

    parallel_for(B * Co, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const std::size_t b = r / Co, co = r % Co;
            T* orow = out.data() + r * L;
            for (std::size_t ol = 0; ol < L; ++ol) orow[ol] = Bv[co];
            for (std::size_t ci = 0; ci < Ci; ++ci) {
                const T* xrow = X + (b * Ci + ci) * L;
                const T* wrow = W + (co * Ci + ci) * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T wv = wrow[kk];
                    for (std::ptrdiff_t ol = 0; ol < Ls; ++ol) {
                        std::ptrdiff_t il = ol + static_cast<std::ptrdiff_t>(kk) - p;
                        if (repl)
                            il = std::clamp<std::ptrdiff_t>(il, 0, Ls - 1);
                        else if (il < 0 || il >= Ls)
                            continue;
                        orow[ol] += wv * xrow[il];
                    }
                }
            }
        }
    });
    detail::check_finite(out, "conv1d");

    return Tensor<T>::make_result(
        {B, Co, L}, std::move(out), "conv1d", {x, w, bias},
        [B, Ci, L, Co, k, p, repl](Node& node) {
            const auto& g = node.grad;
            auto* dx = detail::grad_buf<T>(node, 0);
            auto* dw = detail::grad_buf<T>(node, 1);
            auto* db = detail::grad_buf<T>(node, 2);
            const auto& X = node.parents[0]->data;
            const auto& W = node.parents[1]->data;
            const std::ptrdiff_t Ls = static_cast<std::ptrdiff_t>(L);
            if (db) {
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t co = 0; co < Co; ++co) {
                        const T* grow = g.data() + (b * Co + co) * L;
                        T acc = T(0);
                        for (std::size_t ol = 0; ol < L; ++ol) acc += grow[ol];
                        (*db)[co] += acc;
                    }
            }
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t co = 0; co < Co; ++co) {
                    const T* grow = g.data() + (b * Co + co) * L;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        const T* xrow = X.data() + (b * Ci + ci) * L;
                        const T* wrow = W.data() + (co * Ci + ci) * k;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(kk) - p;
                            T wacc = T(0);
                            for (std::ptrdiff_t ol = 0; ol < Ls; ++ol) {
                                std::ptrdiff_t il = ol + sh;
                                if (repl)
                                    il = std::clamp<std::ptrdiff_t>(il, 0, Ls - 1);
                                else if (il < 0 || il >= Ls)
                                    continue;
                                wacc += grow[ol] * xrow[il];
                                if (dx) (*dx)[(b * Ci + ci) * L + il] += grow[ol] * wrow[kk];
                            }
                            if (dw) (*dw)[(co * Ci + ci) * k + kk] += wacc;
                        }
                    }
                }
            }
        });
}

// x [B,Ci,H,W], w [Co,Ci,kh,kw], bias [Co]; zero 'same' padding
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    using Node = typename Tensor<T>::Node;
    if (x.ndim() != 4 || w.ndim() != 4 || bias.ndim() != 1)
        throw ValidationError("conv2d: expects x[B,Ci,H,W], w[Co,Ci,kh,kw], bias[Co]");
    const std::size_t B = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W0 = x.shape()[3];
    const std::size_t Co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != Ci || bias.shape()[0] != Co || kh % 2 == 0 || kw % 2 == 0)
        throw ValidationError("conv2d: weight " + shape_str(w.shape()) + " incompatible with x " +
                              shape_str(x.shape()));
    const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
    const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W0);

    std::vector<T> out(B * Co * H * W0);
    const T* X = x.ptr();
    const T* Wt = w.ptr();
    const T* Bv = bias.ptr();

    parallel_for(B * Co, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const std::size_t b = r / Co, co = r % Co;
            T* oplane = out.data() + r * H * W0;
            for (std::size_t i = 0; i < H * W0; ++i) oplane[i] = Bv[co];
            for (std::size_t ci = 0; ci < Ci; ++ci) {
                const T* xplane = X + (b * Ci + ci) * H * W0;
                const T* wk = Wt + (co * Ci + ci) * kh * kw;
                for (std::size_t r2 = 0; r2 < kh; ++r2) {
                    const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(r2) - ph;
                    const std::ptrdiff_t oh_lo = std::max<std::ptrdiff_t>(0, -dh);
                    const std::ptrdiff_t oh_hi = std::min<std::ptrdiff_t>(Hs, Hs - dh);
                    for (std::size_t c2 = 0; c2 < kw; ++c2) {
                        const T wv = wk[r2 * kw + c2];
                        if (wv == T(0)) continue;
                        const std::ptrdiff_t dw_ = static_cast<std::ptrdiff_t>(c2) - pw;
                        const std::ptrdiff_t ow_lo = std::max<std::ptrdiff_t>(0, -dw_);
                        const std::ptrdiff_t ow_hi = std::min<std::ptrdiff_t>(Ws, Ws - dw_);
                        for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
                            T* orow = oplane + oh * Ws;
                            const T* xrow = xplane + (oh + dh) * Ws + dw_;
                            for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow)
                                orow[ow] += wv * xrow[ow];
                        }
                    }
                }
            }
        }
    });
    detail::check_finite(out, "conv2d");

    return Tensor<T>::make_result(
        {B, Co, H, W0}, std::move(out), "conv2d", {x, w, bias},
        [B, Ci, H, W0, Co, kh, kw, ph, pw](Node& node) {
            const auto& g = node.grad;
            auto* dx = detail::grad_buf<T>(node, 0);
            auto* dw = detail::grad_buf<T>(node, 1);
            auto* db = detail::grad_buf<T>(node, 2);
            const auto& X = node.parents[0]->data;
            const auto& Wt = node.parents[1]->data;
            const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H);
            const std::ptrdiff_t Ws = static_cast<std::ptrdiff_t>(W0);
            if (db) {
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t co = 0; co < Co; ++co) {
                        const T* gp = g.data() + (b * Co + co) * H * W0;
                        T acc = T(0);
                        for (std::size_t i = 0; i < H * W0; ++i) acc += gp[i];
                        (*db)[co] += acc;
                    }
            }
            if (dx) {
                // each thread owns the dx planes of its batch rows
                parallel_for(B, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t b = lo; b < hi; ++b) {
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            T* dxplane = dx->data() + (b * Ci + ci) * H * W0;
                            for (std::size_t co = 0; co < Co; ++co) {
                                const T* gplane = g.data() + (b * Co + co) * H * W0;
                                const T* wk = Wt.data() + (co * Ci + ci) * kh * kw;
                                for (std::size_t r2 = 0; r2 < kh; ++r2) {
                                    const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(r2) - ph;
                                    const std::ptrdiff_t oh_lo = std::max<std::ptrdiff_t>(0, -dh);
                                    const std::ptrdiff_t oh_hi = std::min<std::ptrdiff_t>(Hs, Hs - dh);
                                    for (std::size_t c2 = 0; c2 < kw; ++c2) {
                                        const T wv = wk[r2 * kw + c2];
                                        if (wv == T(0)) continue;
                                        const std::ptrdiff_t dw_ =
                                            static_cast<std::ptrdiff_t>(c2) - pw;
                                        const std::ptrdiff_t ow_lo = std::max<std::ptrdiff_t>(0, -dw_);
                                        const std::ptrdiff_t ow_hi =
                                            std::min<std::ptrdiff_t>(Ws, Ws - dw_);
                                        for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
                                            const T* grow = gplane + oh * Ws;
                                            T* dxrow = dxplane + (oh + dh) * Ws + dw_;
                                            for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow)
                                                dxrow[ow] += wv * grow[ow];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (dw) {
                // each thread owns the dw rows of its co range
                parallel_for(Co, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t co = lo; co < hi; ++co) {
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            T* dwk = dw->data() + (co * Ci + ci) * kh * kw;
                            for (std::size_t b = 0; b < B; ++b) {
                                const T* gplane = g.data() + (b * Co + co) * H * W0;
                                const T* xplane = X.data() + (b * Ci + ci) * H * W0;
                                for (std::size_t r2 = 0; r2 < kh; ++r2) {
                                    const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(r2) - ph;
                                    const std::ptrdiff_t oh_lo = std::max<std::ptrdiff_t>(0, -dh);
                                    const std::ptrdiff_t oh_hi = std::min<std::ptrdiff_t>(Hs, Hs - dh);
                                    for (std::size_t c2 = 0; c2 < kw; ++c2) {
                                        const std::ptrdiff_t dw_ =
                                            static_cast<std::ptrdiff_t>(c2) - pw;
                                        const std::ptrdiff_t ow_lo = std::max<std::ptrdiff_t>(0, -dw_);
                                        const std::ptrdiff_t ow_hi =
                                            std::min<std::ptrdiff_t>(Ws, Ws - dw_);
                                        T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
                                        for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
                                            const T* grow = gplane + oh * Ws;
                                            const T* xrow = xplane + (oh + dh) * Ws + dw_;
                                            std::ptrdiff_t ow = ow_lo;
                                            for (; ow + 4 <= ow_hi; ow += 4) {
                                                acc0 += grow[ow] * xrow[ow];
                                                acc1 += grow[ow + 1] * xrow[ow + 1];
                                                acc2 += grow[ow + 2] * xrow[ow + 2];
                                                acc3 += grow[ow + 3] * xrow[ow + 3];
                                            }
                                            for (; ow < ow_hi; ++ow) acc0 += grow[ow] * xrow[ow];
                                        }
                                        dwk[r2 * kw + c2] += ((acc0 + acc1) + (acc2 + acc3));
                                    }
                                }
                            }
                        }
                    }
                });
            }
        });
}

// ---------------------------------------------------------------------------
// max pooling (kernel k, stride k)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x, std::size_t k) {
    using Node = typename Tensor<T>::Node;
    if (x.ndim() != 3 || k == 0 || x.shape()[2] < k)
        throw ValidationError("maxpool1d: expects x[B,C,L], L >= k");
    const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2], Lo = L / k;
    std::vector<T> out(B * C * Lo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const auto& X = x.data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        for (std::size_t ol = 0; ol < Lo; ++ol) {
            std::size_t best = bc * L + ol * k;
            for (std::size_t j = 1; j < k; ++j)
                if (X[bc * L + ol * k + j] > X[best]) best = bc * L + ol * k + j;
            out[bc * Lo + ol] = X[best];
            (*argmax)[bc * Lo + ol] = best;
        }
    }
    return Tensor<T>::make_result({B, C, Lo}, std::move(out), "maxpool1d", {x},
                                  [argmax](Node& node) {
                                      auto* dx = detail::grad_buf<T>(node, 0);
                                      if (!dx) return;
                                      for (std::size_t i = 0; i < node.grad.size(); ++i)
                                          (*dx)[(*argmax)[i]] += node.grad[i];
                                  });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k) {
    using Node = typename Tensor<T>::Node;
    if (x.ndim() != 4 || k == 0 || x.shape()[2] < k || x.shape()[3] < k)
        throw ValidationError("maxpool2d: expects x[B,C,H,W], H,W >= k");
    const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::size_t Ho = H / k, Wo = W / k;
    std::vector<T> out(B * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const T* X = x.ptr();
    parallel_for(B * C, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t bc = lo; bc < hi; ++bc) {
            const T* plane = X + bc * H * W;
            for (std::size_t oh = 0; oh < Ho; ++oh) {
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    std::size_t best = oh * k * W + ow * k;
                    for (std::size_t r = 0; r < k; ++r)
                        for (std::size_t c = 0; c < k; ++c) {
                            const std::size_t idx = (oh * k + r) * W + ow * k + c;
                            if (plane[idx] > plane[best]) best = idx;
                        }
                    out[bc * Ho * Wo + oh * Wo + ow] = plane[best];
                    (*argmax)[bc * Ho * Wo + oh * Wo + ow] = bc * H * W + best;
                }
            }
        }
    });
    return Tensor<T>::make_result({B, C, Ho, Wo}, std::move(out), "maxpool2d", {x},
                                  [argmax](Node& node) {
                                      auto* dx = detail::grad_buf<T>(node, 0);
                                      if (!dx) return;
                                      for (std::size_t i = 0; i < node.grad.size(); ++i)
                                          (*dx)[(*argmax)[i]] += node.grad[i];
                                  });
}

// ---------------------------------------------------------------------------
// batch normalization over channel axis 1
// ---------------------------------------------------------------------------

// x [B,C] | [B,C,L] | [B,C,H,W]; gamma/beta [C]. In training mode statistics
// come from the batch; running stats are updated only when track is set, so
// repeated evaluations (e.g. gradient checking) are side-effect free.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     bool track, T momentum = T(0.1), T eps = T(1e-5)) {
    using Node = typename Tensor<T>::Node;
    if (x.ndim() < 2) throw ValidationError("batch_norm: expects [B,C,...]");
    const std::size_t B = x.shape()[0], C = x.shape()[1];
    std::size_t S = 1;
    for (std::size_t i = 2; i < x.ndim(); ++i) S *= x.shape()[i];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} || running_mean.size() != C ||
        running_var.size() != C)
        throw ValidationError("batch_norm: parameter size mismatch for C=" + std::to_string(C));
    const std::size_t N = B * S;
    if (N == 0) throw ValidationError("batch_norm: empty batch");

    const auto& X = x.data();
    const auto& G = gamma.data();
    const auto& Bt = beta.data();
    std::vector<T> out(X.size());

    if (training) {
        auto mu = std::make_shared<std::vector<T>>(C, T(0));
        auto inv_std = std::make_shared<std::vector<T>>(C, T(0));
        for (std::size_t c = 0; c < C; ++c) {
            T s = T(0);
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = X.data() + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) s += p[i];
            }
            const T m = s / static_cast<T>(N);
            T v = T(0);
            for (std::size_t b = 0; b < B; ++b) {
                const T* p = X.data() + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) {
                    const T d = p[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<T>(N);
            (*mu)[c] = m;
            (*inv_std)[c] = T(1) / std::sqrt(v + eps);
            if (track) {
                const T unbiased = N > 1 ? v * static_cast<T>(N) / static_cast<T>(N - 1) : v;
                running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
                running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
            }
        }
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T* p = X.data() + (b * C + c) * S;
                T* o = out.data() + (b * C + c) * S;
                const T m = (*mu)[c], is = (*inv_std)[c], gm = G[c], bt = Bt[c];
                for (std::size_t i = 0; i < S; ++i) o[i] = gm * (p[i] - m) * is + bt;
            }
        detail::check_finite(out, "batch_norm");
        return Tensor<T>::make_result(
            x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
            [B, C, S, N, mu, inv_std](Node& node) {
                const auto& g = node.grad;
                const auto& X2 = node.parents[0]->data;
                const auto& G2 = node.parents[1]->data;
                auto* dx = detail::grad_buf<T>(node, 0);
                auto* dg = detail::grad_buf<T>(node, 1);
                auto* db = detail::grad_buf<T>(node, 2);
                std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c) {
                        const T* gp = g.data() + (b * C + c) * S;
                        const T* xp = X2.data() + (b * C + c) * S;
                        const T m = (*mu)[c], is = (*inv_std)[c];
                        T sg = T(0), sgx = T(0);
                        for (std::size_t i = 0; i < S; ++i) {
                            sg += gp[i];
                            sgx += gp[i] * (xp[i] - m) * is;
                        }
                        sum_g[c] += sg;
                        sum_gx[c] += sgx;
                    }
                if (db)
                    for (std::size_t c = 0; c < C; ++c) (*db)[c] += sum_g[c];
                if (dg)
                    for (std::size_t c = 0; c < C; ++c) (*dg)[c] += sum_gx[c];
                if (dx) {
                    const T invN = T(1) / static_cast<T>(N);
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t c = 0; c < C; ++c) {
                            const T* gp = g.data() + (b * C + c) * S;
                            const T* xp = X2.data() + (b * C + c) * S;
                            T* dxp = dx->data() + (b * C + c) * S;
                            const T m = (*mu)[c], is = (*inv_std)[c];
                            const T k1 = G2[c] * is;
                            const T mg = sum_g[c] * invN, mgx = sum_gx[c] * invN;
                            for (std::size_t i = 0; i < S; ++i) {
                                const T xhat = (xp[i] - m) * is;
                                dxp[i] += k1 * (gp[i] - mg - xhat * mgx);
                            }
                        }
                }
            });
    }

    // eval mode: deterministic affine map from running statistics
    auto scale_v = std::make_shared<std::vector<T>>(C);
    auto shift_v = std::make_shared<std::vector<T>>(C);
    for (std::size_t c = 0; c < C; ++c) {
        const T is = T(1) / std::sqrt(running_var[c] + eps);
        (*scale_v)[c] = G[c] * is;
        (*shift_v)[c] = Bt[c] - G[c] * running_mean[c] * is;
    }
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* p = X.data() + (b * C + c) * S;
            T* o = out.data() + (b * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) o[i] = (*scale_v)[c] * p[i] + (*shift_v)[c];
        }
    detail::check_finite(out, "batch_norm");
    auto rm = std::make_shared<std::vector<T>>(running_mean);
    auto rv_inv = std::make_shared<std::vector<T>>(C);
    for (std::size_t c = 0; c < C; ++c) (*rv_inv)[c] = T(1) / std::sqrt(running_var[c] + eps);
    return Tensor<T>::make_result(
        x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
        [B, C, S, scale_v, rm, rv_inv](Node& node) {
            const auto& g = node.grad;
            const auto& X2 = node.parents[0]->data;
            auto* dx = detail::grad_buf<T>(node, 0);
            auto* dg = detail::grad_buf<T>(node, 1);
            auto* db = detail::grad_buf<T>(node, 2);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    const T* gp = g.data() + (b * C + c) * S;
                    const T* xp = X2.data() + (b * C + c) * S;
                    T sg = T(0), sgx = T(0);
                    for (std::size_t i = 0; i < S; ++i) {
                        sg += gp[i];
                        sgx += gp[i] * (xp[i] - (*rm)[c]) * (*rv_inv)[c];
                        if (dx) (*dx)[(b * C + c) * S + i] += gp[i] * (*scale_v)[c];
                    }
                    if (db) (*db)[c] += sg;
                    if (dg) (*dg)[c] += sgx;
                }
        });
}

// ---------------------------------------------------------------------------
// random init helpers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
    Tensor<T> t(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, T mu = T(0), T sigma = T(1),
                        bool requires_grad = false) {
    Tensor<T> t(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(mu, sigma));
    return t;
}

} // namespace emorec
