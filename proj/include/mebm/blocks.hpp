#pragma once

// Network building blocks: spatial attention, multi-scale convolution,
// BM encoder, depthwise-separable fusion, convolutional attention pooling
// and the classifier head.

#include "mebm/conv.hpp"
#include "mebm/nn.hpp"

#include <cmath>
#include <map>
#include <set>

namespace mebm {

enum class NormKind { batch, none };

/// Named parameter handles. Trainable tensors are updated by the
/// optimizer; buffers hold running statistics.
template <class T>
class ParameterSet {
public:
    using Entry = std::pair<std::string, Tensor<T>>;

    void add_trainable(std::string name, Tensor<T> tensor) { add(trainable_, std::move(name), std::move(tensor)); }
    void add_buffer(std::string name, Tensor<T> tensor) { add(buffers_, std::move(name), std::move(tensor)); }

    const std::vector<Entry>& trainable() const { return trainable_; }
    const std::vector<Entry>& buffers() const { return buffers_; }

    /// Trainable tensors followed by buffers, in registration order.
    std::vector<Entry> all() const {
        std::vector<Entry> out = trainable_;
        out.insert(out.end(), buffers_.begin(), buffers_.end());
        return out;
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : trainable_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : trainable_) t.zero_grad();
    }

private:
    void add(std::vector<Entry>& list, std::string name, Tensor<T> tensor) {
        if (!names_.insert(name).second) {
            throw std::logic_error("duplicate parameter name: " + name);
        }
        list.emplace_back(std::move(name), std::move(tensor));
    }

    std::vector<Entry> trainable_;
    std::vector<Entry> buffers_;
    std::set<std::string> names_;
};

/// Draws initial values. Each tensor has its own stream keyed by its
/// name, so adding or ablating a block leaves the others unchanged.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : seed_(seed) {}

    /// Kaiming-uniform with fan-in scaling: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    template <class T>
    Tensor<T> kaiming(const std::string& name, Shape shape, std::size_t fan_in) const {
        Rng rng = make_stream(seed_, "init:" + name);
        const double bound = std::sqrt(6.0 / double(fan_in));
        std::vector<T> values(numel(shape));
        for (auto& v : values) v = static_cast<T>(bound * (2.0 * rng.uniform() - 1.0));
        return Tensor<T>::from(std::move(shape), std::move(values), true);
    }

    template <class T>
    static Tensor<T> zeros(Shape shape) {
        return Tensor<T>::zeros(std::move(shape), true);
    }

    template <class T>
    static Tensor<T> ones(Shape shape) {
        return Tensor<T>::full(std::move(shape), T{1}, true);
    }

private:
    std::uint64_t seed_;
};

/// Options shared by every block forward call.
struct BlockContext {
    bool training = false;
    Activation activation = Activation::gelu;
    NormKind norm = NormKind::batch;
};

/// Optional batch norm with affine parameters.
template <class T>
struct Norm {
    Tensor<T> gamma, beta;
    BatchNormStats<T> stats;

    static Norm create(std::size_t channels) {
        return {Initializer::ones<T>({channels}), Initializer::zeros<T>({channels}),
                BatchNormStats<T>::create(channels)};
    }

    Tensor<T> operator()(const Tensor<T>& x, const BlockContext& ctx) {
        if (ctx.norm == NormKind::none) {
            const std::size_t c = gamma.size();
            return x * reshape(gamma, {1, c, 1}) + reshape(beta, {1, c, 1});
        }
        return batch_norm(x, gamma, beta, stats, ctx.training);
    }

    void collect(const std::string& prefix, ParameterSet<T>& set) const {
        set.add_trainable(prefix + ".gamma", gamma);
        set.add_trainable(prefix + ".beta", beta);
        set.add_buffer(prefix + ".running_mean", stats.mean);
        set.add_buffer(prefix + ".running_var", stats.var);
    }
};

/// Convolutions feeding a batch norm carry no bias (the normalization
/// removes any per-channel constant).
template <class T>
Tensor<T> pre_norm_bias(std::size_t channels, NormKind norm) {
    return norm == NormKind::batch ? Tensor<T>{} : Initializer::zeros<T>({channels});
}

template <class T>
void add_if_defined(ParameterSet<T>& set, const std::string& name, const Tensor<T>& t) {
    if (t.defined()) set.add_trainable(name, t);
}

// ---------------------------------------------------------------------------

/// Sensor re-weighting followed by a pointwise projection to D features.
///
/// Relevance logits come from each sensor's time-mean through a learned
/// C x C map; a softmax over sensors scaled by C gives weights that average
/// to one, so a zero map leaves the input unscaled.
template <class T>
struct SpatialAttention {
    std::size_t sensors = 0, features = 0;
    Tensor<T> logit_weight;  // (C, C), logits = mean_t(x) . W
    Tensor<T> logit_bias;    // (C)
    Tensor<T> proj_weight;   // (D, C, 1)
    Tensor<T> proj_bias;     // (D)

    static SpatialAttention create(std::size_t sensors, std::size_t features, const Initializer& init,
                                   const std::string& name) {
        SpatialAttention s;
        s.sensors = sensors;
        s.features = features;
        s.logit_weight = Initializer::zeros<T>({sensors, sensors});
        s.logit_bias = Initializer::zeros<T>({sensors});
        s.proj_weight = init.kaiming<T>(name + ".proj.weight", {features, sensors, 1}, sensors);
        s.proj_bias = Initializer::zeros<T>({features});
        return s;
    }

    /// Per-sample sensor weights (B, C); each row sums to C.
    Tensor<T> sensor_weights(const Tensor<T>& x) const {
        check_input(x);
        auto logits = matmul(mean(x, 2), logit_weight) + logit_bias;
        return mul(softmax(logits, 1), static_cast<T>(sensors));
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        auto weights = sensor_weights(x);
        auto weighted = x * reshape(weights, {x.extent(0), sensors, 1});
        return conv1d(weighted, proj_weight, proj_bias);
    }

    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.extent(1) != sensors) {
            throw std::invalid_argument("spatial attention: expected (B, " + std::to_string(sensors) +
                                        ", T) input, got " + to_string(x.shape()));
        }
    }

    void collect(const std::string& prefix, ParameterSet<T>& set) const {
        set.add_trainable(prefix + ".logit.weight", logit_weight);
        set.add_trainable(prefix + ".logit.bias", logit_bias);
        set.add_trainable(prefix + ".proj.weight", proj_weight);
        set.add_trainable(prefix + ".proj.bias", proj_bias);
    }
};

/// Parallel same-padded convolutions of several widths sharing one
/// dilation, summed, normalized, activated, plus the residual input.
template <class T>
struct MultiScaleBlock {
    std::size_t dilation = 1;
    std::vector<std::size_t> kernels;
    std::vector<Tensor<T>> weights;  // (D, D, K_i)
    std::vector<Tensor<T>> biases;   // (D), only without batch norm
    Norm<T> norm;

    /// Dilation of block `index`: 2^(index mod cycle).
    static std::size_t dilation_for(std::size_t index, std::size_t cycle = 3) {
        return std::size_t{1} << (index % cycle);
    }

    static MultiScaleBlock create(std::size_t channels, std::size_t index,
                                  const std::vector<std::size_t>& kernels, std::size_t cycle,
                                  const Initializer& init, const std::string& name,
                                  NormKind norm = NormKind::batch) {
        MultiScaleBlock blk;
        blk.dilation = dilation_for(index, cycle);
        blk.kernels = kernels;
        for (auto k : kernels) {
            const std::string branch = name + ".k" + std::to_string(k);
            blk.weights.push_back(init.kaiming<T>(branch + ".weight", {channels, channels, k}, channels * k));
            if (norm != NormKind::batch) blk.biases.push_back(Initializer::zeros<T>({channels}));
        }
        blk.norm = Norm<T>::create(channels);
        return blk;
    }

    /// Sum of the branch convolutions (computed as one conv with the
    /// centered kernels merged, which is algebraically identical).
    Tensor<T> branches(const Tensor<T>& h) const {
        Tensor<T> bias;
        for (const auto& b : biases) bias = bias.defined() ? bias + b : b;
        return conv1d(h, merge_centered_kernels(weights), bias, {dilation, 1});
    }

    Tensor<T> operator()(const Tensor<T>& h, const BlockContext& ctx) {
        return h + activate(norm(branches(h), ctx), ctx.activation);
    }

    void collect(const std::string& prefix, ParameterSet<T>& set) const {
        for (std::size_t i = 0; i < kernels.size(); ++i) {
            const std::string branch = prefix + ".k" + std::to_string(kernels[i]);
            set.add_trainable(branch + ".weight", weights[i]);
            if (i < biases.size()) set.add_trainable(branch + ".bias", biases[i]);
        }
        norm.collect(prefix + ".norm", set);
    }
};

/// Residual block of two dilated convolutions and a gated linear unit.
template <class T>
struct BmEncoderBlock {
    std::size_t dilation1 = 1, dilation2 = 1;
    Tensor<T> w1, b1, w2, b2, w_gate, b_gate;
    Norm<T> norm1, norm2;

    /// Dilations 2^((2i) mod m) and 2^((2i+1) mod m) for block i.
    static std::pair<std::size_t, std::size_t> dilations_for(std::size_t index, std::size_t modulus = 5) {
        return {std::size_t{1} << ((2 * index) % modulus), std::size_t{1} << ((2 * index + 1) % modulus)};
    }

    static BmEncoderBlock create(std::size_t channels, std::size_t index, std::size_t kernel,
                                 std::size_t modulus, const Initializer& init, const std::string& name,
                                 NormKind norm = NormKind::batch) {
        BmEncoderBlock blk;
        std::tie(blk.dilation1, blk.dilation2) = dilations_for(index, modulus);
        blk.w1 = init.kaiming<T>(name + ".conv1.weight", {channels, channels, kernel}, channels * kernel);
        blk.b1 = pre_norm_bias<T>(channels, norm);
        blk.w2 = init.kaiming<T>(name + ".conv2.weight", {channels, channels, kernel}, channels * kernel);
        blk.b2 = pre_norm_bias<T>(channels, norm);
        blk.w_gate = init.kaiming<T>(name + ".gate.weight", {2 * channels, channels, 1}, channels);
        blk.b_gate = Initializer::zeros<T>({2 * channels});
        blk.norm1 = Norm<T>::create(channels);
        blk.norm2 = Norm<T>::create(channels);
        return blk;
    }

    Tensor<T> operator()(const Tensor<T>& h, const BlockContext& ctx) {
        auto y = activate(norm1(conv1d(h, w1, b1, {dilation1, 1}), ctx), ctx.activation);
        y = activate(norm2(conv1d(y, w2, b2, {dilation2, 1}), ctx), ctx.activation);
        return h + glu(conv1d(y, w_gate, b_gate));
    }

    void collect(const std::string& prefix, ParameterSet<T>& set) const {
        set.add_trainable(prefix + ".conv1.weight", w1);
        add_if_defined(set, prefix + ".conv1.bias", b1);
        norm1.collect(prefix + ".norm1", set);
        set.add_trainable(prefix + ".conv2.weight", w2);
        add_if_defined(set, prefix + ".conv2.bias", b2);
        norm2.collect(prefix + ".norm2", set);
        set.add_trainable(prefix + ".gate.weight", w_gate);
        set.add_trainable(prefix + ".gate.bias", b_gate);
    }
};

/// Depthwise (K=3) then pointwise convolution from C to D channels.
template <class T>
struct DepthwiseSeparableFusion {
    std::size_t in_channels = 0, out_channels = 0;
    Tensor<T> dw_weight;  // (C, 1, 3)
    Tensor<T> dw_bias;    // (C), only without batch norm
    Tensor<T> pw_weight;  // (D, C, 1)
    Tensor<T> pw_bias;    // (D), only without batch norm
    Norm<T> norm;

    static DepthwiseSeparableFusion create(std::size_t in_channels, std::size_t out_channels,
                                           const Initializer& init, const std::string& name,
                                           NormKind norm = NormKind::batch) {
        DepthwiseSeparableFusion f;
        f.in_channels = in_channels;
        f.out_channels = out_channels;
        f.dw_weight = init.kaiming<T>(name + ".depthwise.weight", {in_channels, 1, 3}, 3);
        f.dw_bias = pre_norm_bias<T>(in_channels, norm);
        f.pw_weight = init.kaiming<T>(name + ".pointwise.weight", {out_channels, in_channels, 1}, in_channels);
        f.pw_bias = pre_norm_bias<T>(out_channels, norm);
        f.norm = Norm<T>::create(out_channels);
        return f;
    }

    Tensor<T> depthwise(const Tensor<T>& h) const {
        if (h.rank() != 3 || h.extent(1) != in_channels) {
            throw std::invalid_argument("fusion: expected " + std::to_string(in_channels) +
                                        " input channels, got " + to_string(h.shape()));
        }
        return conv1d(h, dw_weight, dw_bias, {1, in_channels});
    }

    Tensor<T> operator()(const Tensor<T>& h, const BlockContext& ctx) {
        return activate(norm(conv1d(depthwise(h), pw_weight, pw_bias), ctx), ctx.activation);
    }

    void collect(const std::string& prefix, ParameterSet<T>& set) const {
        set.add_trainable(prefix + ".depthwise.weight", dw_weight);
        add_if_defined(set, prefix + ".depthwise.bias", dw_bias);
        set.add_trainable(prefix + ".pointwise.weight", pw_weight);
        add_if_defined(set, prefix + ".pointwise.bias", pw_bias);
        norm.collect(prefix + ".norm", set);
    }
};

/// Conv (D -> 1) scores, softmax over time, weighted sum over time.
/// The score conv has no bias: softmax ignores a constant shift.
template <class T>
struct ConvAttentionPool {
    Tensor<T> weight;  // (1, D, 1)

    static ConvAttentionPool create(std::size_t channels) { return {Initializer::zeros<T>({1, channels, 1})}; }

    /// Attention weights over time, shape (B, 1, T).
    Tensor<T> time_weights(const Tensor<T>& h) const { return softmax(conv1d(h, weight), 2); }

    Tensor<T> operator()(const Tensor<T>& h) const { return sum(h * time_weights(h), 2); }

    void collect(const std::string& prefix, ParameterSet<T>& set) const {
        set.add_trainable(prefix + ".weight", weight);
    }
};

/// Affine map D -> classes; `logits` feeds the loss, `operator()` gives
/// class probabilities.
template <class T>
struct ClassifierHead {
    Tensor<T> weight;  // (D, classes)
    Tensor<T> bias;    // (classes)

    static ClassifierHead create(std::size_t features, std::size_t classes, const Initializer& init,
                                 const std::string& name) {
        return {init.kaiming<T>(name + ".weight", {features, classes}, features),
                Initializer::zeros<T>({classes})};
    }

    Tensor<T> logits(const Tensor<T>& z) const {
        if (z.rank() != 2 || z.extent(1) != weight.extent(0)) {
            throw std::invalid_argument("classifier head: expected (B, " + std::to_string(weight.extent(0)) +
                                        ") features, got " + to_string(z.shape()));
        }
        return matmul(z, weight) + bias;
    }

    Tensor<T> operator()(const Tensor<T>& z) const { return softmax(logits(z), 1); }

    void collect(const std::string& prefix, ParameterSet<T>& set) const {
        set.add_trainable(prefix + ".weight", weight);
        set.add_trainable(prefix + ".bias", bias);
    }
};

}  // namespace mebm
