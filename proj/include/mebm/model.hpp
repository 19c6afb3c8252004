#pragma once

// End-to-end phoneme decoder and its ablation variants.
//
//   x (B, C_in, T) -> spatial attention -> H_s (B, D, T)
//     -> [multi-scale stack ; BM encoder stack] concatenated on channels
//     -> depthwise-separable fusion -> H_fused (B, D, T)
//     -> convolutional attention pooling (or plain sum over time) -> (B, D)
//     -> linear head -> softmax (B, classes)

#include "mebm/blocks.hpp"

#include <sstream>

namespace mebm {

struct ModelConfig {
    std::size_t c_in = 306;
    std::size_t t = 125;
    std::size_t d = 128;
    std::size_t n_classes = 39;
    std::size_t n_multiscale_blocks = 12;
    std::size_t n_bm_blocks = 3;
    double dropout = 0.02;
    Activation activation = Activation::gelu;
    NormKind norm = NormKind::batch;
    // Block internals.
    std::vector<std::size_t> multiscale_kernels{3, 5, 7};
    std::size_t multiscale_dilation_cycle = 3;
    std::size_t bm_kernel = 3;
    std::size_t bm_dilation_modulus = 5;

    void validate() const {
        if (c_in == 0 || t == 0 || d == 0 || n_classes == 0) {
            throw std::invalid_argument("model config: extents must be positive");
        }
        if (!(dropout >= 0.0) || dropout >= 1.0) {
            throw std::invalid_argument("model config: dropout must lie in [0, 1)");
        }
        if (multiscale_kernels.empty()) throw std::invalid_argument("model config: no multi-scale kernels");
        for (auto k : multiscale_kernels) {
            if (k % 2 == 0) throw std::invalid_argument("model config: multi-scale kernels must be odd");
        }
        if (bm_kernel % 2 == 0) throw std::invalid_argument("model config: BM kernel must be odd");
        if (multiscale_dilation_cycle == 0 || bm_dilation_modulus == 0) {
            throw std::invalid_argument("model config: dilation cycle/modulus must be positive");
        }
    }
};

/// Switches for the ablation variants.
struct AblationFlags {
    bool use_weighted_loss = true;
    bool use_multiscale = true;
    bool use_bm_encoder = true;
    bool use_conv_attention = true;

    void validate() const {
        if (!use_multiscale && !use_bm_encoder) {
            throw std::invalid_argument("ablation flags: at least one temporal stream must be enabled");
        }
    }
};

inline std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }
inline std::string to_string(NormKind n) { return n == NormKind::batch ? "batch" : "none"; }

/// Digest of every field that changes the parameter layout or the math.
inline std::uint64_t config_digest(const ModelConfig& cfg, const AblationFlags& flags) {
    std::ostringstream text;
    text << "c_in=" << cfg.c_in << ";t=" << cfg.t << ";d=" << cfg.d << ";classes=" << cfg.n_classes
         << ";ms=" << cfg.n_multiscale_blocks << ";bm=" << cfg.n_bm_blocks
         << ";act=" << to_string(cfg.activation) << ";norm=" << to_string(cfg.norm) << ";ms_kernels=";
    for (auto k : cfg.multiscale_kernels) text << k << ',';
    text << ";ms_cycle=" << cfg.multiscale_dilation_cycle << ";bm_kernel=" << cfg.bm_kernel
         << ";bm_mod=" << cfg.bm_dilation_modulus << ";use_ms=" << flags.use_multiscale
         << ";use_bm=" << flags.use_bm_encoder << ";use_att=" << flags.use_conv_attention;
    return fnv1a64(text.str());
}

struct ForwardContext {
    bool training = false;
    std::uint64_t dropout_seed = 0;
    std::uint64_t step = 0;
};

template <class T>
class Model {
public:
    static Model build(const ModelConfig& cfg, const AblationFlags& flags, std::uint64_t seed) {
        cfg.validate();
        flags.validate();
        Model m;
        m.cfg_ = cfg;
        m.flags_ = flags;
        const Initializer init(seed);
        m.spatial_ = SpatialAttention<T>::create(cfg.c_in, cfg.d, init, "spatial");
        if (flags.use_multiscale) {
            for (std::size_t b = 0; b < cfg.n_multiscale_blocks; ++b) {
                m.multiscale_.push_back(MultiScaleBlock<T>::create(
                    cfg.d, b, cfg.multiscale_kernels, cfg.multiscale_dilation_cycle, init,
                    "multiscale." + std::to_string(b), cfg.norm));
            }
        }
        if (flags.use_bm_encoder) {
            for (std::size_t b = 0; b < cfg.n_bm_blocks; ++b) {
                m.bm_.push_back(BmEncoderBlock<T>::create(cfg.d, b, cfg.bm_kernel, cfg.bm_dilation_modulus,
                                                          init, "bm." + std::to_string(b), cfg.norm));
            }
        }
        const std::size_t streams = (flags.use_multiscale ? 1 : 0) + (flags.use_bm_encoder ? 1 : 0);
        m.fusion_ = DepthwiseSeparableFusion<T>::create(streams * cfg.d, cfg.d, init, "fusion", cfg.norm);
        if (flags.use_conv_attention) m.attention_ = ConvAttentionPool<T>::create(cfg.d);
        m.head_ = ClassifierHead<T>::create(cfg.d, cfg.n_classes, init, "head");
        m.register_parameters();
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    const AblationFlags& flags() const { return flags_; }
    ParameterSet<T>& parameters() { return params_; }
    const ParameterSet<T>& parameters() const { return params_; }
    std::size_t trainable_count() const { return params_.trainable_count(); }
    std::uint64_t digest() const { return config_digest(cfg_, flags_); }

    SpatialAttention<T>& spatial() { return spatial_; }
    std::vector<MultiScaleBlock<T>>& multiscale() { return multiscale_; }
    std::vector<BmEncoderBlock<T>>& bm_encoders() { return bm_; }
    DepthwiseSeparableFusion<T>& fusion() { return fusion_; }
    ConvAttentionPool<T>& attention() { return attention_; }
    ClassifierHead<T>& head() { return head_; }

    /// Fused temporal representation (B, D, T).
    Tensor<T> fused(const Tensor<T>& x, const ForwardContext& ctx) {
        check_input(x);
        const BlockContext bctx{ctx.training, cfg_.activation, cfg_.norm};
        auto hs = dropout(spatial_(x), cfg_.dropout, ctx.training, {ctx.dropout_seed, 0, ctx.step});
        std::vector<Tensor<T>> streams;
        if (flags_.use_multiscale) {
            auto h = hs;
            for (auto& blk : multiscale_) h = blk(h, bctx);
            streams.push_back(h);
        }
        if (flags_.use_bm_encoder) {
            auto h = hs;
            for (auto& blk : bm_) h = blk(h, bctx);
            streams.push_back(h);
        }
        auto cat = streams.size() == 1 ? streams[0] : concat(streams, 1);
        return fusion_(cat, bctx);
    }

    /// Pooled features (B, D).
    Tensor<T> pooled(const Tensor<T>& x, const ForwardContext& ctx) {
        auto h = fused(x, ctx);
        return flags_.use_conv_attention ? attention_(h) : sum(h, 2);
    }

    Tensor<T> logits(const Tensor<T>& x, const ForwardContext& ctx) {
        auto z = dropout(pooled(x, ctx), cfg_.dropout, ctx.training, {ctx.dropout_seed, 1, ctx.step});
        return head_.logits(z);
    }

    /// Class probabilities (B, classes).
    Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx = {}) {
        return softmax(logits(x, ctx), 1);
    }

    /// Deep copy of every parameter and buffer value.
    std::vector<std::vector<T>> snapshot() const {
        std::vector<std::vector<T>> out;
        for (const auto& [name, t] : params_.all()) out.emplace_back(t.data().begin(), t.data().end());
        return out;
    }

    void restore(const std::vector<std::vector<T>>& values) {
        auto entries = params_.all();
        if (values.size() != entries.size()) throw std::invalid_argument("restore: snapshot size mismatch");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            auto dst = entries[i].second.mutable_data();
            if (dst.size() != values[i].size()) {
                throw std::invalid_argument("restore: size mismatch for " + entries[i].first);
            }
            std::copy(values[i].begin(), values[i].end(), dst.begin());
        }
    }

private:
    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.extent(1) != cfg_.c_in || x.extent(2) != cfg_.t) {
            throw std::invalid_argument("model: expected input (B, " + std::to_string(cfg_.c_in) + ", " +
                                        std::to_string(cfg_.t) + "), got " + to_string(x.shape()));
        }
        check_finite<T>("model input", x.data());
    }

    void register_parameters() {
        spatial_.collect("spatial", params_);
        for (std::size_t b = 0; b < multiscale_.size(); ++b) {
            multiscale_[b].collect("multiscale." + std::to_string(b), params_);
        }
        for (std::size_t b = 0; b < bm_.size(); ++b) bm_[b].collect("bm." + std::to_string(b), params_);
        fusion_.collect("fusion", params_);
        if (flags_.use_conv_attention) attention_.collect("attention", params_);
        head_.collect("head", params_);
    }

    ModelConfig cfg_;
    AblationFlags flags_;
    SpatialAttention<T> spatial_;
    std::vector<MultiScaleBlock<T>> multiscale_;
    std::vector<BmEncoderBlock<T>> bm_;
    DepthwiseSeparableFusion<T> fusion_;
    ConvAttentionPool<T> attention_;
    ClassifierHead<T> head_;
    ParameterSet<T> params_;
};

template <class T = float>
Model<T> build_model(const ModelConfig& cfg, const AblationFlags& flags, std::uint64_t seed) {
    return Model<T>::build(cfg, flags, seed);
}

}  // namespace mebm
