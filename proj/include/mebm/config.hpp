#pragma once

// JSON run configuration: model, training, ablation switches, data paths.
// Every object is checked for unknown keys before values are read.

#include "mebm/training.hpp"

#include <nlohmann/json.hpp>

#include <set>

namespace mebm {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::string& where,
                                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw std::invalid_argument("config: \"" + where + "\" must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw std::invalid_argument("config: unknown key \"" + where + "." + key + "\"");
    }
}

template <class U>
void read_if(const nlohmann::json& j, const char* key, U& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<U>();
    } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument("config: \"" + where + "." + key + "\" has the wrong type");
    }
}

}  // namespace detail

inline Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "relu") return Activation::relu;
    throw std::invalid_argument("config: unknown activation \"" + s + "\"");
}

inline NormKind parse_norm(const std::string& s) {
    if (s == "batch") return NormKind::batch;
    if (s == "none") return NormKind::none;
    throw std::invalid_argument("config: unknown norm \"" + s + "\"");
}

/// "0..5" (inclusive) or "0,1,4".
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    auto to_u64 = [&](const std::string& s) {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
            throw std::invalid_argument("bad seed list \"" + text + "\"");
        }
        return std::stoull(s);
    };
    if (const auto dots = text.find(".."); dots != std::string::npos) {
        const auto lo = to_u64(text.substr(0, dots)), hi = to_u64(text.substr(dots + 2));
        if (hi < lo) throw std::invalid_argument("bad seed range \"" + text + "\"");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
        return out;
    }
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        out.push_back(to_u64(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::filesystem::path manifest;
    std::filesystem::path output_dir = "run";
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5};
    std::optional<nlohmann::json> loss_weights;  // label -> weight overrides

    LossWeights weights(const PhonemeVocab& vocab) const {
        return loss_weights ? LossWeights::from_json(*loss_weights, vocab) : LossWeights::defaults(vocab);
    }

    void validate() const {
        model.validate();
        train.validate();
        if (model.n_classes != kNumClasses) throw std::invalid_argument("config: training needs 39 classes");
        if (model.c_in != kSensors || model.t != kWindowSamples) {
            throw std::invalid_argument("config: recordings provide 306 x 125 windows");
        }
        if (seeds.empty()) throw std::invalid_argument("config: empty seed list");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["manifest"] = manifest.generic_string();
        j["output_dir"] = output_dir.generic_string();
        j["seeds"] = seeds;
        j["model"] = {{"c_in", model.c_in},
                      {"t", model.t},
                      {"d", model.d},
                      {"n_classes", model.n_classes},
                      {"n_multiscale_blocks", model.n_multiscale_blocks},
                      {"n_bm_blocks", model.n_bm_blocks},
                      {"dropout", model.dropout},
                      {"activation", to_string(model.activation)},
                      {"norm", to_string(model.norm)},
                      {"multiscale_kernels", model.multiscale_kernels},
                      {"multiscale_dilation_cycle", model.multiscale_dilation_cycle},
                      {"bm_kernel", model.bm_kernel},
                      {"bm_dilation_modulus", model.bm_dilation_modulus}};
        j["train"] = {{"epochs", train.epochs},
                      {"lr", train.lr},
                      {"batch_size", train.batch_size},
                      {"samples_per_epoch", train.samples_per_epoch},
                      {"seed", train.seed},
                      {"validation_seed", train.validation_seed},
                      {"beta1", train.beta1},
                      {"beta2", train.beta2},
                      {"adam_eps", train.adam_eps},
                      {"weight_decay", train.weight_decay},
                      {"max_jitter", train.sampling.max_jitter},
                      {"validation_iterations", train.sampling.validation_iterations},
                      {"min_validation_events", train.sampling.min_validation_events},
                      {"per_session_train_draws", train.sampling.per_session_train_draws}};
        j["ablation"] = {{"use_weighted_loss", train.flags.use_weighted_loss},
                         {"use_multiscale", train.flags.use_multiscale},
                         {"use_bm_encoder", train.flags.use_bm_encoder},
                         {"use_conv_attention", train.flags.use_conv_attention}};
        if (loss_weights) j["loss_weights"] = *loss_weights;
        return j;
    }

    /// Relative manifest / output paths resolve against `base`.
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
        using detail::read_if;
        detail::reject_unknown_keys(j, "config", {"manifest", "output_dir", "seeds", "model", "train", "ablation",
                                                  "loss_weights"});
        RunConfig c;
        auto resolve = [&](const std::filesystem::path& p) { return p.is_relative() && !base.empty() ? base / p : p; };
        std::string text;
        if (j.contains("manifest")) {
            read_if(j, "manifest", text, "config");
            c.manifest = resolve(text);
        }
        if (j.contains("output_dir")) {
            read_if(j, "output_dir", text, "config");
            c.output_dir = resolve(text);
        }
        read_if(j, "seeds", c.seeds, "config");
        if (j.contains("model")) {
            const auto& m = j["model"];
            detail::reject_unknown_keys(m, "model",
                                        {"c_in", "t", "d", "n_classes", "n_multiscale_blocks", "n_bm_blocks", "dropout",
                                         "activation", "norm", "multiscale_kernels", "multiscale_dilation_cycle",
                                         "bm_kernel", "bm_dilation_modulus"});
            read_if(m, "c_in", c.model.c_in, "model");
            read_if(m, "t", c.model.t, "model");
            read_if(m, "d", c.model.d, "model");
            read_if(m, "n_classes", c.model.n_classes, "model");
            read_if(m, "n_multiscale_blocks", c.model.n_multiscale_blocks, "model");
            read_if(m, "n_bm_blocks", c.model.n_bm_blocks, "model");
            read_if(m, "dropout", c.model.dropout, "model");
            if (m.contains("activation")) {
                read_if(m, "activation", text, "model");
                c.model.activation = parse_activation(text);
            }
            if (m.contains("norm")) {
                read_if(m, "norm", text, "model");
                c.model.norm = parse_norm(text);
            }
            read_if(m, "multiscale_kernels", c.model.multiscale_kernels, "model");
            read_if(m, "multiscale_dilation_cycle", c.model.multiscale_dilation_cycle, "model");
            read_if(m, "bm_kernel", c.model.bm_kernel, "model");
            read_if(m, "bm_dilation_modulus", c.model.bm_dilation_modulus, "model");
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            detail::reject_unknown_keys(t, "train",
                                        {"epochs", "lr", "batch_size", "samples_per_epoch", "seed", "validation_seed",
                                         "beta1", "beta2", "adam_eps", "weight_decay", "max_jitter",
                                         "validation_iterations", "min_validation_events", "per_session_train_draws"});
            read_if(t, "epochs", c.train.epochs, "train");
            read_if(t, "lr", c.train.lr, "train");
            read_if(t, "batch_size", c.train.batch_size, "train");
            read_if(t, "samples_per_epoch", c.train.samples_per_epoch, "train");
            read_if(t, "seed", c.train.seed, "train");
            read_if(t, "validation_seed", c.train.validation_seed, "train");
            read_if(t, "beta1", c.train.beta1, "train");
            read_if(t, "beta2", c.train.beta2, "train");
            read_if(t, "adam_eps", c.train.adam_eps, "train");
            read_if(t, "weight_decay", c.train.weight_decay, "train");
            read_if(t, "max_jitter", c.train.sampling.max_jitter, "train");
            read_if(t, "validation_iterations", c.train.sampling.validation_iterations, "train");
            read_if(t, "min_validation_events", c.train.sampling.min_validation_events, "train");
            read_if(t, "per_session_train_draws", c.train.sampling.per_session_train_draws, "train");
        }
        if (j.contains("ablation")) {
            const auto& a = j["ablation"];
            detail::reject_unknown_keys(a, "ablation",
                                        {"use_weighted_loss", "use_multiscale", "use_bm_encoder", "use_conv_attention"});
            read_if(a, "use_weighted_loss", c.train.flags.use_weighted_loss, "ablation");
            read_if(a, "use_multiscale", c.train.flags.use_multiscale, "ablation");
            read_if(a, "use_bm_encoder", c.train.flags.use_bm_encoder, "ablation");
            read_if(a, "use_conv_attention", c.train.flags.use_conv_attention, "ablation");
        }
        if (j.contains("loss_weights")) {
            if (!j["loss_weights"].is_object()) throw std::invalid_argument("config: loss_weights must be an object");
            c.loss_weights = j["loss_weights"];
        }
        return c;
    }

    static RunConfig load(const std::filesystem::path& path) {
        if (!std::filesystem::exists(path)) throw std::runtime_error("config not found: " + path.string());
        const auto data = read_file(path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(data.begin(), data.end());
        } catch (const nlohmann::json::parse_error& e) {
            throw std::invalid_argument("config " + path.string() + ": " + e.what());
        }
        return from_json(j, path.parent_path());
    }
};

}  // namespace mebm
