#pragma once

// Normalization, dropout and gating ops used by the network blocks.

#include "mebm/ops.hpp"
#include "mebm/rng.hpp"

namespace mebm {

enum class Activation { gelu, relu };

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation kind) {
    return kind == Activation::gelu ? gelu(x) : relu(x);
}

/// Running statistics of one batch-norm layer (constant leaves).
template <class T>
struct BatchNormStats {
    Tensor<T> mean;
    Tensor<T> var;

    static BatchNormStats create(std::size_t channels) {
        return {Tensor<T>::zeros({channels}), Tensor<T>::full({channels}, T{1})};
    }
};

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel normalization of (B, C, T) over the batch and time axes.
///
/// Training mode normalizes with biased batch statistics and folds the
/// batch mean / unbiased variance into `stats`; evaluation mode uses
/// `stats` only.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, bool training, BatchNormOptions opt = {}) {
    if (x.rank() != 3) throw std::invalid_argument("batch_norm: expected (B, C, T), got " + to_string(x.shape()));
    const std::size_t B = x.extent(0), C = x.extent(1), L = x.extent(2);
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        throw std::invalid_argument("batch_norm: affine parameters must have shape (" +
                                    std::to_string(C) + ")");
    }
    const std::size_t count = B * L;
    if (training && count < 2) {
        throw std::invalid_argument("batch_norm: training needs at least two values per channel");
    }
    const T* in = x.data().data();
    std::vector<T> shift(C), inv_std(C);
    if (training) {
        auto rm = stats.mean.mutable_data();
        auto rv = stats.var.mutable_data();
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* row = in + (b * C + c) * L;
                for (std::size_t t = 0; t < L; ++t) s += row[t];
            }
            const double mu = s / double(count);
            double ss = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* row = in + (b * C + c) * L;
                for (std::size_t t = 0; t < L; ++t) {
                    const double d = row[t] - mu;
                    ss += d * d;
                }
            }
            const double var = ss / double(count);
            shift[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
            rm[c] = static_cast<T>((1.0 - opt.momentum) * rm[c] + opt.momentum * mu);
            rv[c] = static_cast<T>((1.0 - opt.momentum) * rv[c] +
                                   opt.momentum * var * double(count) / double(count - 1));
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            shift[c] = stats.mean[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(double(stats.var[c]) + opt.eps));
        }
    }
    std::vector<T> out(x.size());
    const T* gm = gamma.data().data();
    const T* bt = beta.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const T* row = in + (b * C + c) * L;
            T* dst = out.data() + (b * C + c) * L;
            const T scale = gm[c] * inv_std[c];
            for (std::size_t t = 0; t < L; ++t) dst[t] = (row[t] - shift[c]) * scale + bt[c];
        }
    }
    return make_result<T>(
        "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
        [B, C, L, count, training, shift = std::move(shift),
         inv_std = std::move(inv_std)](Node<T>& self) {
            const T* xv = self.inputs[0]->value.data();
            const T* gm = self.inputs[1]->value.data();
            const T* gy = self.grad.data();
            T* gx = self.input_grad(0);
            T* gg = self.input_grad(1);
            T* gbeta = self.input_grad(2);
            for (std::size_t c = 0; c < C; ++c) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t base = (b * C + c) * L;
                    for (std::size_t t = 0; t < L; ++t) {
                        const double xhat = double(xv[base + t] - shift[c]) * inv_std[c];
                        sum_dy += gy[base + t];
                        sum_dy_xhat += double(gy[base + t]) * xhat;
                    }
                }
                if (gg) gg[c] += static_cast<T>(sum_dy_xhat);
                if (gbeta) gbeta[c] += static_cast<T>(sum_dy);
                if (!gx) continue;
                const double scale = double(gm[c]) * inv_std[c];
                if (!training) {
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t base = (b * C + c) * L;
                        for (std::size_t t = 0; t < L; ++t) gx[base + t] += static_cast<T>(gy[base + t] * scale);
                    }
                    continue;
                }
                const double mean_dy = sum_dy / double(count);
                const double mean_dy_xhat = sum_dy_xhat / double(count);
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t base = (b * C + c) * L;
                    for (std::size_t t = 0; t < L; ++t) {
                        const double xhat = double(xv[base + t] - shift[c]) * inv_std[c];
                        gx[base + t] += static_cast<T>(
                            scale * (gy[base + t] - mean_dy - xhat * mean_dy_xhat));
                    }
                }
            }
        });
}

/// Identifies one dropout application: the mask is a pure function of
/// (seed, layer, step, element index).
struct DropoutKey {
    std::uint64_t seed = 0;
    std::uint64_t layer = 0;
    std::uint64_t step = 0;
};

inline bool dropout_keeps(const DropoutKey& key, std::size_t index, double p) {
    return unit_double(mix64(key.seed, key.layer, key.step, index)) >= p;
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, const DropoutKey& key) {
    if (!(p >= 0.0) || p >= 1.0) {
        throw std::invalid_argument("dropout: probability must lie in [0, 1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) return x;
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(x.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = dropout_keeps(key, i, p) ? scale : T{0};
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    return make_result<T>("dropout", x.shape(), std::move(out), {x},
                          [mask = std::move(mask)](Node<T>& self) {
                              T* gx = self.input_grad(0);
                              if (!gx) return;
                              for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
                          });
}

/// Gated linear unit over the channel axis of (B, 2C, T): a * sigmoid(b).
template <class T>
Tensor<T> glu(const Tensor<T>& x) {
    if (x.rank() != 3 || x.extent(1) % 2 != 0) {
        throw std::invalid_argument("glu: expected (B, 2C, T), got " + to_string(x.shape()));
    }
    const std::size_t B = x.extent(0), C = x.extent(1) / 2, L = x.extent(2);
    std::vector<T> out(B * C * L);
    const T* in = x.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const T* a = in + (b * 2 * C + c) * L;
            const T* gate = in + (b * 2 * C + C + c) * L;
            T* dst = out.data() + (b * C + c) * L;
            for (std::size_t t = 0; t < L; ++t) dst[t] = a[t] / (T{1} + std::exp(-gate[t]));
        }
    }
    return make_result<T>("glu", {B, C, L}, std::move(out), {x}, [B, C, L](Node<T>& self) {
        T* gx = self.input_grad(0);
        if (!gx) return;
        const T* in = self.inputs[0]->value.data();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t ia = (b * 2 * C + c) * L, ig = (b * 2 * C + C + c) * L;
                const T* g = self.grad.data() + (b * C + c) * L;
                for (std::size_t t = 0; t < L; ++t) {
                    const T s = T{1} / (T{1} + std::exp(-in[ig + t]));
                    gx[ia + t] += g[t] * s;
                    gx[ig + t] += g[t] * in[ia + t] * s * (T{1} - s);
                }
            }
        }
    });
}

}  // namespace mebm
