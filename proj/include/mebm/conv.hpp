#pragma once

// 1D convolution with "same" zero padding, stride 1, dilation and groups.
//
// Layouts: input (B, Cin, T), weight (Cout, Cin / groups, K), bias (Cout),
// output (B, Cout, T). Like most frameworks this is a cross-correlation:
// out[t] = sum_k w[k] * x[t + (k - (K-1)/2) * dilation].

#include "mebm/ops.hpp"
#include "mebm/parallel.hpp"

namespace mebm {

struct Conv1dOptions {
    std::size_t dilation = 1;
    std::size_t groups = 1;
};

namespace detail {

// Samples per work chunk. Fixed so reductions over the batch are
// summed in the same order for any thread count.
inline constexpr std::size_t kConvChunk = 8;

struct ConvGeometry {
    std::size_t batch, c_in, c_out, length, kernel, dilation, groups;
    std::size_t cin_per_group() const { return c_in / groups; }
    std::size_t cout_per_group() const { return c_out / groups; }
    std::ptrdiff_t tap_offset(std::size_t k) const {
        return (static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>((kernel - 1) / 2)) *
               static_cast<std::ptrdiff_t>(dilation);
    }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Conv1dOptions& opt) {
    if (x.size() != 3 || w.size() != 3) {
        throw std::invalid_argument("conv1d: expected input (B, Cin, T) and weight (Cout, Cin/g, K), got " +
                                    to_string(x) + " and " + to_string(w));
    }
    if (opt.dilation < 1 || opt.groups < 1) {
        throw std::invalid_argument("conv1d: dilation and groups must be >= 1");
    }
    ConvGeometry g{x[0], x[1], w[0], x[2], w[2], opt.dilation, opt.groups};
    if (g.c_in % g.groups != 0 || g.c_out % g.groups != 0) {
        throw std::invalid_argument("conv1d: channels (" + std::to_string(g.c_in) + " in, " +
                                    std::to_string(g.c_out) + " out) not divisible by groups " +
                                    std::to_string(g.groups));
    }
    if (w[1] != g.cin_per_group()) {
        throw std::invalid_argument("conv1d: weight expects " + std::to_string(w[1]) +
                                    " input channels per group, input provides " +
                                    std::to_string(g.cin_per_group()));
    }
    if (g.kernel % 2 == 0) {
        throw std::invalid_argument("conv1d: even kernel size " + std::to_string(g.kernel) +
                                    " has no symmetric same padding");
    }
    const std::size_t span = (g.kernel - 1) * g.dilation + 1;
    if (span > g.length + (g.kernel - 1) * g.dilation) {
        throw std::invalid_argument("conv1d: effective kernel exceeds padded input");
    }
    return g;
}

/// col[(ci*K + k), (b - b0)*T + t] = x[b, ci, t + offset(k)] (zero outside).
template <class T>
void im2col(const ConvGeometry& g, const T* x, std::size_t b0, std::size_t b1, T* col) {
    const std::size_t n = b1 - b0;
    const std::size_t width = n * g.length;
    const auto len = static_cast<std::ptrdiff_t>(g.length);
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        for (std::size_t k = 0; k < g.kernel; ++k) {
            T* row = col + (ci * g.kernel + k) * width;
            const std::ptrdiff_t off = g.tap_offset(k);
            const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, len);
            const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(len - off, 0, len);
            for (std::size_t b = b0; b < b1; ++b) {
                const T* src = x + (b * g.c_in + ci) * g.length;
                T* dst = row + (b - b0) * g.length;
                std::fill(dst, dst + lo, T{0});
                std::copy(src + lo + off, src + hi + off, dst + lo);
                std::fill(dst + std::max(lo, hi), dst + len, T{0});
            }
        }
    }
}

/// Adds col back into dx (the adjoint of im2col).
template <class T>
void col2im_add(const ConvGeometry& g, const T* col, std::size_t b0, std::size_t b1, T* dx) {
    const std::size_t n = b1 - b0;
    const std::size_t width = n * g.length;
    const auto len = static_cast<std::ptrdiff_t>(g.length);
    for (std::size_t b = b0; b < b1; ++b) {
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
            T* dst = dx + (b * g.c_in + ci) * g.length;
            for (std::size_t k = 0; k < g.kernel; ++k) {
                const T* row = col + (ci * g.kernel + k) * width + (b - b0) * g.length;
                const std::ptrdiff_t off = g.tap_offset(k);
                const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, len);
                const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(len - off, 0, len);
                for (std::ptrdiff_t t = lo; t < hi; ++t) dst[t + off] += row[t];
            }
        }
    }
}

template <class T>
std::vector<T> conv_dense_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias) {
    std::vector<T> out(g.batch * g.c_out * g.length);
    const auto rows = static_cast<Eigen::Index>(g.c_in * g.kernel);
    const auto cout = static_cast<Eigen::Index>(g.c_out);
    ConstMatrixMap<T> weight(w, cout, rows);
    parallel_chunks(g.batch, kConvChunk, [&](std::size_t b0, std::size_t b1) {
        const auto width = static_cast<Eigen::Index>((b1 - b0) * g.length);
        std::vector<T> col(static_cast<std::size_t>(rows * width));
        im2col(g, x, b0, b1, col.data());
        RowMatrix<T> y = weight * ConstMatrixMap<T>(col.data(), rows, width);
        for (std::size_t b = b0; b < b1; ++b) {
            for (std::size_t co = 0; co < g.c_out; ++co) {
                const T* src = y.data() + co * width + (b - b0) * g.length;
                T* dst = out.data() + (b * g.c_out + co) * g.length;
                const T shift = bias ? bias[co] : T{0};
                for (std::size_t t = 0; t < g.length; ++t) dst[t] = src[t] + shift;
            }
        }
    });
    return out;
}

template <class T>
void conv_dense_backward(const ConvGeometry& g, const T* x, const T* w, const T* gy, T* gx,
                         T* gw, T* gb) {
    const auto rows = static_cast<Eigen::Index>(g.c_in * g.kernel);
    const auto cout = static_cast<Eigen::Index>(g.c_out);
    ConstMatrixMap<T> weight(w, cout, rows);
    const std::size_t n_chunks = (g.batch + kConvChunk - 1) / kConvChunk;
    std::vector<RowMatrix<T>> gw_parts(gw ? n_chunks : 0);
    std::vector<std::vector<double>> gb_parts(gb ? n_chunks : 0);
    parallel_chunks(g.batch, kConvChunk, [&](std::size_t b0, std::size_t b1) {
        const std::size_t chunk = b0 / kConvChunk;
        const auto width = static_cast<Eigen::Index>((b1 - b0) * g.length);
        RowMatrix<T> dy(cout, width);
        for (std::size_t b = b0; b < b1; ++b) {
            for (std::size_t co = 0; co < g.c_out; ++co) {
                std::copy_n(gy + (b * g.c_out + co) * g.length, g.length,
                            dy.data() + co * width + (b - b0) * g.length);
            }
        }
        if (gb) {
            auto& part = gb_parts[chunk];
            part.assign(g.c_out, 0.0);
            for (std::size_t co = 0; co < g.c_out; ++co) {
                double acc = 0.0;
                const T* row = dy.data() + co * width;
                for (Eigen::Index t = 0; t < width; ++t) acc += row[t];
                part[co] = acc;
            }
        }
        if (gw) {
            std::vector<T> col(static_cast<std::size_t>(rows * width));
            im2col(g, x, b0, b1, col.data());
            gw_parts[chunk] = dy * ConstMatrixMap<T>(col.data(), rows, width).transpose();
        }
        if (gx) {
            RowMatrix<T> dcol = weight.transpose() * dy;
            col2im_add(g, dcol.data(), b0, b1, gx);
        }
    });
    if (gw) {
        MatrixMap<T> acc(gw, cout, rows);
        for (const auto& part : gw_parts) acc += part;
    }
    if (gb) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            double acc = 0.0;
            for (const auto& part : gb_parts) acc += part[co];
            gb[co] += static_cast<T>(acc);
        }
    }
}

template <class T>
std::vector<T> conv_grouped_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias) {
    std::vector<T> out(g.batch * g.c_out * g.length);
    const std::size_t cig = g.cin_per_group(), cog = g.cout_per_group();
    const auto len = static_cast<std::ptrdiff_t>(g.length);
    parallel_for(g.batch, [&](std::size_t b) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            const std::size_t group = co / cog;
            T* dst = out.data() + (b * g.c_out + co) * g.length;
            std::fill(dst, dst + g.length, bias ? bias[co] : T{0});
            for (std::size_t cl = 0; cl < cig; ++cl) {
                const std::size_t ci = group * cig + cl;
                const T* src = x + (b * g.c_in + ci) * g.length;
                const T* taps = w + (co * cig + cl) * g.kernel;
                for (std::size_t k = 0; k < g.kernel; ++k) {
                    const std::ptrdiff_t off = g.tap_offset(k);
                    const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, len);
                    const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(len - off, 0, len);
                    for (std::ptrdiff_t t = lo; t < hi; ++t) dst[t] += taps[k] * src[t + off];
                }
            }
        }
    });
    return out;
}

template <class T>
void conv_grouped_backward(const ConvGeometry& g, const T* x, const T* w, const T* gy, T* gx,
                           T* gw, T* gb) {
    const std::size_t cig = g.cin_per_group(), cog = g.cout_per_group();
    const auto len = static_cast<std::ptrdiff_t>(g.length);
    const std::size_t n_chunks = (g.batch + kConvChunk - 1) / kConvChunk;
    const std::size_t w_size = g.c_out * cig * g.kernel;
    std::vector<std::vector<double>> gw_parts(gw ? n_chunks : 0);
    std::vector<std::vector<double>> gb_parts(gb ? n_chunks : 0);
    parallel_chunks(g.batch, kConvChunk, [&](std::size_t b0, std::size_t b1) {
        const std::size_t chunk = b0 / kConvChunk;
        if (gw) gw_parts[chunk].assign(w_size, 0.0);
        if (gb) gb_parts[chunk].assign(g.c_out, 0.0);
        for (std::size_t b = b0; b < b1; ++b) {
            for (std::size_t co = 0; co < g.c_out; ++co) {
                const std::size_t group = co / cog;
                const T* dy = gy + (b * g.c_out + co) * g.length;
                if (gb) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < g.length; ++t) acc += dy[t];
                    gb_parts[chunk][co] += acc;
                }
                for (std::size_t cl = 0; cl < cig; ++cl) {
                    const std::size_t ci = group * cig + cl;
                    const T* src = x + (b * g.c_in + ci) * g.length;
                    T* dsrc = gx ? gx + (b * g.c_in + ci) * g.length : nullptr;
                    const std::size_t wbase = (co * cig + cl) * g.kernel;
                    for (std::size_t k = 0; k < g.kernel; ++k) {
                        const std::ptrdiff_t off = g.tap_offset(k);
                        const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-off, 0, len);
                        const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(len - off, 0, len);
                        if (gw) {
                            double acc = 0.0;
                            for (std::ptrdiff_t t = lo; t < hi; ++t) acc += double(dy[t]) * src[t + off];
                            gw_parts[chunk][wbase + k] += acc;
                        }
                        if (dsrc) {
                            const T tap = w[wbase + k];
                            for (std::ptrdiff_t t = lo; t < hi; ++t) dsrc[t + off] += tap * dy[t];
                        }
                    }
                }
            }
        }
    });
    if (gw) {
        for (std::size_t i = 0; i < w_size; ++i) {
            double acc = 0.0;
            for (const auto& part : gw_parts) acc += part[i];
            gw[i] += static_cast<T>(acc);
        }
    }
    if (gb) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            double acc = 0.0;
            for (const auto& part : gb_parts) acc += part[co];
            gb[co] += static_cast<T>(acc);
        }
    }
}

}  // namespace detail

/// Same-padded 1D convolution. Pass an undefined tensor for no bias.
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv1dOptions opt = {}) {
    const auto g = detail::conv_geometry(x.shape(), weight.shape(), opt);
    if (bias.defined() && bias.shape() != Shape{g.c_out}) {
        throw std::invalid_argument("conv1d: bias shape " + to_string(bias.shape()) +
                                    " does not match Cout " + std::to_string(g.c_out));
    }
    const T* pb = bias.defined() ? bias.data().data() : nullptr;
    auto out = g.groups == 1
                   ? detail::conv_dense_forward(g, x.data().data(), weight.data().data(), pb)
                   : detail::conv_grouped_forward(g, x.data().data(), weight.data().data(), pb);
    std::vector<Tensor<T>> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>("conv1d", {g.batch, g.c_out, g.length}, std::move(out),
                          std::move(inputs), [g](Node<T>& self) {
                              const T* xv = self.inputs[0]->value.data();
                              const T* wv = self.inputs[1]->value.data();
                              T* gx = self.input_grad(0);
                              T* gw = self.input_grad(1);
                              T* gb = self.inputs.size() > 2 ? self.input_grad(2) : nullptr;
                              if (g.groups == 1) {
                                  detail::conv_dense_backward(g, xv, wv, self.grad.data(), gx, gw, gb);
                              } else {
                                  detail::conv_grouped_backward(g, xv, wv, self.grad.data(), gx, gw, gb);
                              }
                          });
}

template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, Conv1dOptions opt = {}) {
    return conv1d(x, weight, Tensor<T>{}, opt);
}

/// Sums kernels of different odd widths, each centered in the widest one.
///
/// conv(x, merge({w3, w5, w7})) equals conv(x, w3) + conv(x, w5) + conv(x, w7)
/// under same padding with a shared dilation.
template <class T>
Tensor<T> merge_centered_kernels(const std::vector<Tensor<T>>& kernels) {
    if (kernels.empty()) throw std::invalid_argument("merge_centered_kernels: no kernels");
    std::size_t widest = 0;
    for (const auto& k : kernels) {
        if (k.rank() != 3 || k.extent(2) % 2 == 0) {
            throw std::invalid_argument("merge_centered_kernels: expected odd (Cout, Cin, K) kernels");
        }
        if (k.extent(0) != kernels[0].extent(0) || k.extent(1) != kernels[0].extent(1)) {
            throw std::invalid_argument("merge_centered_kernels: channel extents differ");
        }
        widest = std::max(widest, k.extent(2));
    }
    const std::size_t pairs = kernels[0].extent(0) * kernels[0].extent(1);
    std::vector<T> out(pairs * widest, T{0});
    for (const auto& k : kernels) {
        const std::size_t width = k.extent(2), pad = (widest - width) / 2;
        const T* src = k.data().data();
        for (std::size_t p = 0; p < pairs; ++p)
            for (std::size_t j = 0; j < width; ++j) out[p * widest + pad + j] += src[p * width + j];
    }
    return make_result<T>("merge_kernels", {kernels[0].extent(0), kernels[0].extent(1), widest},
                          std::move(out), kernels, [pairs, widest](Node<T>& self) {
                              for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                                  T* gk = self.input_grad(i);
                                  if (!gk) continue;
                                  const std::size_t width = self.inputs[i]->shape[2];
                                  const std::size_t pad = (widest - width) / 2;
                                  for (std::size_t p = 0; p < pairs; ++p)
                                      for (std::size_t j = 0; j < width; ++j)
                                          gk[p * width + j] += self.grad[p * widest + pad + j];
                              }
                          });
}

}  // namespace mebm
