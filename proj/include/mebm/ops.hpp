#pragma once

// Differentiable elementwise, linear-algebra, reduction, and shape ops.

#include "mebm/tensor.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <type_traits>

namespace mebm {

// ---------------------------------------------------------------------------
// Broadcasting

namespace detail {

/// Numpy-style right-aligned broadcast of two shapes.
struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> a_strides;  // per output axis, 0 where broadcast
    std::vector<std::size_t> b_strides;
    bool same = false;
    bool a_full = false;  // a already has the output shape
    bool b_full = false;
    bool a_scalar = false;
    bool b_scalar = false;
};

inline std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

inline BroadcastPlan plan_broadcast(std::string_view op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    plan.out.assign(rank, 1);
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
            throw std::invalid_argument(std::string(op) + ": shapes " + to_string(a) + " and " +
                                        to_string(b) + " are not broadcastable");
        }
        plan.out[i] = std::max(pa[i], pb[i]);
    }
    auto sa = contiguous_strides(pa);
    auto sb = contiguous_strides(pb);
    plan.a_strides.resize(rank);
    plan.b_strides.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        plan.a_strides[i] = pa[i] == 1 ? 0 : sa[i];
        plan.b_strides[i] = pb[i] == 1 ? 0 : sb[i];
    }
    plan.a_full = pa == plan.out;
    plan.b_full = pb == plan.out;
    plan.a_scalar = numel(a) == 1;
    plan.b_scalar = numel(b) == 1;
    return plan;
}

/// Calls row(out_offset, a_offset, b_offset, length, a_step, b_step) for
/// every run of the innermost output axis, in order. Steps are 0 or 1.
template <class F>
void for_each_broadcast_row(const BroadcastPlan& plan, F&& row) {
    const std::size_t n = numel(plan.out);
    if (plan.same) {
        row(std::size_t{0}, std::size_t{0}, std::size_t{0}, n, std::size_t{1}, std::size_t{1});
        return;
    }
    if (plan.a_full && plan.b_scalar) {
        row(std::size_t{0}, std::size_t{0}, std::size_t{0}, n, std::size_t{1}, std::size_t{0});
        return;
    }
    if (plan.b_full && plan.a_scalar) {
        row(std::size_t{0}, std::size_t{0}, std::size_t{0}, n, std::size_t{0}, std::size_t{1});
        return;
    }
    const std::size_t rank = plan.out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    const std::size_t inner = plan.out[rank - 1];
    const std::size_t sa = plan.a_strides[rank - 1];
    const std::size_t sb = plan.b_strides[rank - 1];
    for (std::size_t i = 0; i < n; i += inner) {
        row(i, ia, ib, inner, sa, sb);
        // advance the odometer over the outer axes
        for (std::size_t ax = rank - 1; ax-- > 0;) {
            ++idx[ax];
            ia += plan.a_strides[ax];
            ib += plan.b_strides[ax];
            if (idx[ax] < plan.out[ax]) break;
            ia -= plan.a_strides[ax] * idx[ax];
            ib -= plan.b_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

template <class T, class Fwd, class DA, class DB>
Tensor<T> binary_op(std::string_view op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                    DA da, DB db) {
    auto plan = plan_broadcast(op, a.shape(), b.shape());
    std::vector<T> out(numel(plan.out));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for_each_broadcast_row(plan, [&](std::size_t i, std::size_t ia, std::size_t ib, std::size_t len,
                                     std::size_t sa, std::size_t sb) {
        T* dst = out.data() + i;
        const T* x = pa + ia;
        const T* y = pb + ib;
        if (sa && sb) {
            for (std::size_t j = 0; j < len; ++j) dst[j] = fwd(x[j], y[j]);
        } else if (sa) {
            for (std::size_t j = 0; j < len; ++j) dst[j] = fwd(x[j], y[0]);
        } else if (sb) {
            for (std::size_t j = 0; j < len; ++j) dst[j] = fwd(x[0], y[j]);
        } else {
            for (std::size_t j = 0; j < len; ++j) dst[j] = fwd(x[0], y[0]);
        }
    });
    Shape shape = plan.out;
    return make_result<T>(
        op, std::move(shape), std::move(out), {a, b}, [plan, da, db](Node<T>& self) {
            const T* va = self.inputs[0]->value.data();
            const T* vb = self.inputs[1]->value.data();
            const T* g = self.grad.data();
            T* ga = self.input_grad(0);
            T* gb = self.input_grad(1);
            for_each_broadcast_row(plan, [&](std::size_t i, std::size_t ia, std::size_t ib,
                                             std::size_t len, std::size_t sa, std::size_t sb) {
                if (ga) {
                    if (sa) {
                        for (std::size_t j = 0; j < len; ++j)
                            ga[ia + j] += g[i + j] * da(va[ia + j], vb[ib + j * sb]);
                    } else {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < len; ++j) acc += g[i + j] * da(va[ia], vb[ib + j * sb]);
                        ga[ia] += static_cast<T>(acc);
                    }
                }
                if (gb) {
                    if (sb) {
                        for (std::size_t j = 0; j < len; ++j)
                            gb[ib + j] += g[i + j] * db(va[ia + j * sa], vb[ib + j]);
                    } else {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < len; ++j) acc += g[i + j] * db(va[ia + j * sa], vb[ib]);
                        gb[ib] += static_cast<T>(acc);
                    }
                }
            });
        });
}

/// Pointwise op whose derivative is expressed from (input, output).
template <class T, class Fwd, class Deriv>
Tensor<T> unary_op(std::string_view op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return make_result<T>(op, x.shape(), std::move(out), {x}, [deriv](Node<T>& self) {
        T* gx = self.input_grad(0);
        if (!gx) return;
        const auto& xv = self.inputs[0]->value;
        const auto& yv = self.value;
        const auto& g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
}

inline void check_axis(std::string_view op, std::size_t axis, std::size_t rank) {
    if (axis >= rank) {
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for rank " + std::to_string(rank));
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner) counts.
inline std::array<std::size_t, 3> split_axis(const Shape& shape, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    return {outer, shape[axis], inner};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
        [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
        [](T, T) { return T{-1}; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    for (const T v : b.data()) {
        if (v == T{0}) throw std::domain_error("div: zero divisor");
    }
    return detail::binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
        [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, std::type_identity_t<T> s) {
    return detail::unary_op<T>(
        "add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, std::type_identity_t<T> s) {
    return detail::unary_op<T>(
        "mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return detail::unary_op<T>(
        "neg", a, [](T x) { return -x; }, [](T, T) { return T{-1}; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op<T>(
        "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    for (const T v : a.data()) {
        if (!(v > T{0})) throw std::domain_error("log: nonpositive operand");
    }
    return detail::unary_op<T>(
        "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op<T>(
        "sigmoid", a, [](T x) { return T{1} / (T{1} + std::exp(-x)); },
        [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op<T>(
        "relu", a, [](T x) { return x > T{0} ? x : T{0}; },
        [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

namespace detail {

/// Applies `f` to consecutive blocks copied into aligned buffers, so the
/// packet/scalar split depends on the index only.
template <class T, std::size_t N, class F>
void aligned_blocks(std::size_t n, const std::array<const T*, N>& in, T* out, bool accumulate, F f) {
    constexpr std::size_t kBlock = 512;
    using Map = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>, Eigen::Aligned64>;
    alignas(64) T buf[N + 1][kBlock];
    for (std::size_t start = 0; start < n; start += kBlock) {
        const std::size_t len = std::min(kBlock, n - start);
        for (std::size_t i = 0; i < N; ++i) std::copy_n(in[i] + start, len, buf[i]);
        const auto m = static_cast<Eigen::Index>(len);
        Map result(buf[N], m);
        if constexpr (N == 1) {
            result = f(Map(buf[0], m));
        } else {
            result = f(Map(buf[0], m), Map(buf[1], m));
        }
        if (accumulate) {
            for (std::size_t i = 0; i < len; ++i) out[start + i] += buf[N][i];
        } else {
            std::copy_n(buf[N], len, out + start);
        }
    }
}

}  // namespace detail

/// Exact (erf-based) GELU, vectorized through Eigen's erf.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    static constexpr T inv_sqrt2 = T(0.70710678118654752440);
    static constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    const std::size_t n = a.size();
    std::vector<T> out(n);
    detail::aligned_blocks<T, 1>(n, {a.data().data()}, out.data(), false,
                                 [](const auto& x) { return T(0.5) * x * (T{1} + (x * inv_sqrt2).erf()); });
    return make_result<T>("gelu", a.shape(), std::move(out), {a}, [n](Node<T>& self) {
        T* gx = self.input_grad(0);
        if (!gx) return;
        detail::aligned_blocks<T, 2>(n, {self.inputs[0]->value.data(), self.grad.data()}, gx, true,
                                     [](const auto& x, const auto& g) {
                                         return g * (T(0.5) * (T{1} + (x * inv_sqrt2).erf()) +
                                                     x * inv_sqrt2pi * (T(-0.5) * x * x).exp());
                                     });
    });
}

template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// (m x k) . (k x n) -> (m x n)
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + to_string(a.shape()) +
                                    " and " + to_string(b.shape()));
    }
    const auto m = static_cast<Eigen::Index>(a.extent(0));
    const auto k = static_cast<Eigen::Index>(a.extent(1));
    const auto n = static_cast<Eigen::Index>(b.extent(1));
    std::vector<T> out(static_cast<std::size_t>(m * n));
    MatrixMap<T>(out.data(), m, n).noalias() =
        ConstMatrixMap<T>(a.data().data(), m, k) * ConstMatrixMap<T>(b.data().data(), k, n);
    return make_result<T>("matmul", {a.extent(0), b.extent(1)}, std::move(out), {a, b},
                          [m, k, n](Node<T>& self) {
                              ConstMatrixMap<T> g(self.grad.data(), m, n);
                              if (T* ga = self.input_grad(0)) {
                                  MatrixMap<T>(ga, m, k).noalias() +=
                                      g * ConstMatrixMap<T>(self.inputs[1]->value.data(), k, n)
                                              .transpose();
                              }
                              if (T* gb = self.input_grad(1)) {
                                  MatrixMap<T>(gb, k, n).noalias() +=
                                      ConstMatrixMap<T>(self.inputs[0]->value.data(), m, k)
                                          .transpose() *
                                      g;
                              }
                          });
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double)

/// Sum over one axis; the axis is removed from the shape.
template <class T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
    detail::check_axis("sum", axis, x.rank());
    const auto [outer, len, inner] = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<T> out(outer * inner);
    const T* in = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (std::size_t a = 0; a < len; ++a) acc += in[(o * len + a) * inner + i];
            out[o * inner + i] = static_cast<T>(acc);
        }
    }
    return make_result<T>("sum", std::move(shape), std::move(out), {x},
                          [outer, len, inner](Node<T>& self) {
                              T* gx = self.input_grad(0);
                              if (!gx) return;
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t a = 0; a < len; ++a)
                                      for (std::size_t i = 0; i < inner; ++i)
                                          gx[(o * len + a) * inner + i] +=
                                              self.grad[o * inner + i];
                          });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
    detail::check_axis("mean", axis, x.rank());
    return mul(sum(x, axis), T{1} / static_cast<T>(x.extent(axis)));
}

/// Sum of all elements to a scalar.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0.0;
    for (const T v : x.data()) acc += v;
    return make_result<T>("sum_all", Shape{}, {static_cast<T>(acc)}, {x}, [](Node<T>& self) {
        T* gx = self.input_grad(0);
        if (!gx) return;
        const T g = self.grad[0];
        for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) gx[i] += g;
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul(sum(x), T{1} / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// Softmax family

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    detail::check_axis("softmax", axis, x.rank());
    const auto [outer, len, inner] = detail::split_axis(x.shape(), axis);
    std::vector<T> out(x.size());
    const T* in = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            T top = -std::numeric_limits<T>::infinity();
            for (std::size_t a = 0; a < len; ++a) top = std::max(top, in[base + a * inner]);
            double total = 0.0;
            for (std::size_t a = 0; a < len; ++a) {
                const T e = std::exp(in[base + a * inner] - top);
                out[base + a * inner] = e;
                total += e;
            }
            const double scale = 1.0 / total;
            for (std::size_t a = 0; a < len; ++a) {
                out[base + a * inner] = static_cast<T>(out[base + a * inner] * scale);
            }
        }
    }
    return make_result<T>("softmax", x.shape(), std::move(out), {x},
                          [outer, len, inner](Node<T>& self) {
                              T* gx = self.input_grad(0);
                              if (!gx) return;
                              const T* y = self.value.data();
                              const T* g = self.grad.data();
                              for (std::size_t o = 0; o < outer; ++o) {
                                  for (std::size_t i = 0; i < inner; ++i) {
                                      const std::size_t base = o * len * inner + i;
                                      double dot = 0.0;
                                      for (std::size_t a = 0; a < len; ++a)
                                          dot += double(g[base + a * inner]) * y[base + a * inner];
                                      for (std::size_t a = 0; a < len; ++a) {
                                          const std::size_t j = base + a * inner;
                                          gx[j] += static_cast<T>(y[j] * (g[j] - dot));
                                      }
                                  }
                              }
                          });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
    detail::check_axis("log_softmax", axis, x.rank());
    const auto [outer, len, inner] = detail::split_axis(x.shape(), axis);
    std::vector<T> out(x.size());
    const T* in = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            T top = -std::numeric_limits<T>::infinity();
            for (std::size_t a = 0; a < len; ++a) top = std::max(top, in[base + a * inner]);
            double total = 0.0;
            for (std::size_t a = 0; a < len; ++a) total += std::exp(double(in[base + a * inner] - top));
            const double lse = double(top) + std::log(total);
            for (std::size_t a = 0; a < len; ++a) {
                out[base + a * inner] = static_cast<T>(in[base + a * inner] - lse);
            }
        }
    }
    return make_result<T>("log_softmax", x.shape(), std::move(out), {x},
                          [outer, len, inner](Node<T>& self) {
                              T* gx = self.input_grad(0);
                              if (!gx) return;
                              const T* y = self.value.data();
                              const T* g = self.grad.data();
                              for (std::size_t o = 0; o < outer; ++o) {
                                  for (std::size_t i = 0; i < inner; ++i) {
                                      const std::size_t base = o * len * inner + i;
                                      double total = 0.0;
                                      for (std::size_t a = 0; a < len; ++a) total += g[base + a * inner];
                                      for (std::size_t a = 0; a < len; ++a) {
                                          const std::size_t j = base + a * inner;
                                          gx[j] += static_cast<T>(g[j] - std::exp(double(y[j])) * total);
                                      }
                                  }
                              }
                          });
}

// ---------------------------------------------------------------------------
// Shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + to_string(x.shape()) + " as " +
                                    to_string(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
        T* gx = self.input_grad(0);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
}

/// Concatenates tensors that agree on every axis except `axis`.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& first = parts.front().shape();
    detail::check_axis("concat", axis, first.size());
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != first.size()) throw std::invalid_argument("concat: rank mismatch");
        probe[axis] = first[axis];
        if (probe != first) {
            throw std::invalid_argument("concat: incompatible shapes " + to_string(first) +
                                        " and " + to_string(p.shape()));
        }
        shape[axis] += p.extent(axis);
    }
    const auto [outer, total, inner] = detail::split_axis(shape, axis);
    std::vector<T> out(numel(shape));
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.extent(axis) * inner;
        widths.push_back(w);
        const T* src = p.data().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * w, w, out.data() + o * total * inner + offset);
        }
        offset += w;
    }
    return make_result<T>("concat", std::move(shape), std::move(out), parts,
                          [outer, total, inner, widths](Node<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < widths.size(); ++k) {
                                  if (T* gp = self.input_grad(k)) {
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t j = 0; j < widths[k]; ++j)
                                              gp[o * widths[k] + j] +=
                                                  self.grad[o * total * inner + off + j];
                                  }
                                  off += widths[k];
                              }
                          });
}

}  // namespace mebm
