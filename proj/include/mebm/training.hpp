#pragma once

// Weighted cross-entropy, AdamW, evaluation, and the training loop.

#include "mebm/metrics.hpp"
#include "mebm/model.hpp"
#include "mebm/sampling.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>

namespace mebm {

// ---------------------------------------------------------------------------
// Loss

/// Per-class loss weights, indexed by class id.
struct LossWeights {
    std::array<double, kNumClasses> values;

    static LossWeights uniform() {
        LossWeights w;
        w.values.fill(1.0);
        return w;
    }

    /// Tuned weights for the imbalanced phoneme classes; everything else 1.
    static LossWeights defaults(const PhonemeVocab& vocab = PhonemeVocab::standard()) {
        auto w = uniform();
        const std::pair<const char*, double> tuned[] = {{"ey", 0.05}, {"ay", 3.00}, {"uh", 10.00}, {"uw", 3.00},
                                                         {"s", 0.80},  {"sh", 3.00}, {"m", 3.00},   {"ae", 3.00},
                                                         {"jh", 1.50}, {"ah", 2.00}};
        for (const auto& [label, value] : tuned) w.values[vocab.id(label)] = value;
        return w;
    }

    double operator[](std::size_t c) const { return values.at(c); }

    void validate() const {
        for (double v : values) {
            if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be positive");
        }
    }

    nlohmann::json to_json(const PhonemeVocab& vocab) const {
        nlohmann::json j = nlohmann::json::object();
        for (std::size_t c = 0; c < kNumClasses; ++c) j[vocab.label(c)] = values[c];
        return j;
    }

    /// Labels not mentioned keep their default weight.
    static LossWeights from_json(const nlohmann::json& j, const PhonemeVocab& vocab) {
        auto w = defaults(vocab);
        for (const auto& [label, value] : j.items()) w.values[vocab.id(label)] = value.get<double>();
        w.validate();
        return w;
    }
};

namespace detail {

inline void check_targets(std::span<const PhonemeId> targets, std::size_t rows, std::size_t classes) {
    if (targets.size() != rows) throw std::invalid_argument("cross_entropy: one target per row required");
    for (auto y : targets) {
        if (y >= classes) throw std::out_of_range("cross_entropy: target " + std::to_string(y) + " out of range");
    }
}

}  // namespace detail

/// Weighted-mean cross entropy taken from logits through log-softmax:
/// sum_i w[y_i] * (-log p_i[y_i]) / sum_i w[y_i].
template <class T>
Tensor<T> weighted_cross_entropy_logits(const Tensor<T>& logits, std::span<const PhonemeId> targets,
                                        const LossWeights& weights) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be (B, classes)");
    const std::size_t b = logits.extent(0), k = logits.extent(1);
    if (k > kNumClasses) throw std::invalid_argument("cross_entropy: too many classes");
    detail::check_targets(targets, b, k);
    const auto z = logits.data();
    std::vector<double> probs(b * k);
    double total = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const T* row = z.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double se = 0.0;
        for (std::size_t c = 0; c < k; ++c) se += std::exp(double(row[c]) - mx);
        const double lse = mx + std::log(se);
        for (std::size_t c = 0; c < k; ++c) probs[i * k + c] = std::exp(double(row[c]) - lse);
        const double w = weights[targets[i]];
        total += w * (lse - double(row[targets[i]]));
        wsum += w;
    }
    std::vector<PhonemeId> ys(targets.begin(), targets.end());
    return make_result<T>("weighted_cross_entropy", {}, {static_cast<T>(total / wsum)}, {logits},
                          [probs = std::move(probs), ys = std::move(ys), weights, wsum, k](Node<T>& self) {
                              T* gz = self.input_grad(0);
                              if (!gz) return;
                              const double g = double(self.grad[0]) / wsum;
                              for (std::size_t i = 0; i < ys.size(); ++i) {
                                  const double s = g * weights[ys[i]];
                                  for (std::size_t c = 0; c < k; ++c) {
                                      const double onehot = c == ys[i] ? 1.0 : 0.0;
                                      gz[i * k + c] += static_cast<T>(s * (probs[i * k + c] - onehot));
                                  }
                              }
                          });
}

/// Same loss taken from probabilities (rows summing to 1).
template <class T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& probs, std::span<const PhonemeId> targets,
                                 const LossWeights& weights) {
    if (probs.rank() != 2) throw std::invalid_argument("cross_entropy: probs must be (B, classes)");
    const std::size_t b = probs.extent(0), k = probs.extent(1);
    detail::check_targets(targets, b, k);
    const auto p = probs.data();
    double total = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double pi = p[i * k + targets[i]];
        if (!(pi > 0.0)) throw std::domain_error("cross_entropy: zero probability on the target class");
        const double w = weights[targets[i]];
        total -= w * std::log(pi);
        wsum += w;
    }
    std::vector<PhonemeId> ys(targets.begin(), targets.end());
    return make_result<T>("weighted_cross_entropy", {}, {static_cast<T>(total / wsum)}, {probs},
                          [ys = std::move(ys), weights, wsum, k](Node<T>& self) {
                              T* gp = self.input_grad(0);
                              if (!gp) return;
                              const auto& pv = self.inputs[0]->value;
                              const double g = double(self.grad[0]) / wsum;
                              for (std::size_t i = 0; i < ys.size(); ++i) {
                                  const std::size_t at = i * k + ys[i];
                                  gp[at] += static_cast<T>(-g * weights[ys[i]] / double(pv[at]));
                              }
                          });
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("adamw: lr must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw std::invalid_argument("adamw: betas must lie in [0, 1)");
        }
        if (!(eps > 0.0)) throw std::invalid_argument("adamw: eps must be positive");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("adamw: weight_decay must be >= 0");
    }
};

struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;

    template <class T>
    static OptimizerState create(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
        OptimizerState s;
        for (const auto& [name, t] : params) {
            s.m.emplace_back(t.size(), 0.0);
            s.v.emplace_back(t.size(), 0.0);
        }
        return s;
    }
};

/// One decoupled-weight-decay Adam step. A parameter with no gradient
/// buffer is treated as having a zero gradient.
template <class T>
void adamw_step(const std::vector<std::pair<std::string, Tensor<T>>>& params, OptimizerState& state,
                const AdamWConfig& cfg) {
    if (state.m.size() != params.size()) throw std::invalid_argument("adamw: optimizer state does not match parameters");
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& [name, t] = params[p];
        if (state.m[p].size() != t.size()) throw std::invalid_argument("adamw: moment shape mismatch for " + name);
        const auto g = t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NonFiniteError("adamw: non-finite gradient in " + name + " at index " + std::to_string(i) +
                                     " (step " + std::to_string(state.step + 1) + ")");
            }
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<T> t = params[p].second;
        const auto g = t.grad();
        auto w = t.mutable_data();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.empty() ? 0.0 : double(g[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] = static_cast<T>(double(w[i]) * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Packs samples [begin, end) into a (B, channels, window) tensor.
template <class T>
Tensor<T> batch_tensor(std::span<const AveragedSample> samples, std::size_t channels) {
    const std::size_t per = channels * kWindowSamples;
    std::vector<T> values(samples.size() * per);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].features.size() != per) throw std::invalid_argument("batch: sample has the wrong size");
        std::copy(samples[i].features.begin(), samples[i].features.end(), values.begin() + std::ptrdiff_t(i * per));
    }
    return Tensor<T>::from({samples.size(), channels, kWindowSamples}, std::move(values));
}

/// Eval-mode probabilities, row-major (N x classes).
template <class T>
std::vector<double> predict(Model<T>& model, std::span<const AveragedSample> samples, std::size_t chunk = 64) {
    if (samples.empty()) throw std::invalid_argument("predict: no samples");
    std::vector<double> probs;
    probs.reserve(samples.size() * model.config().n_classes);
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const auto part = samples.subspan(begin, std::min(chunk, samples.size() - begin));
        const auto out = model.forward(batch_tensor<T>(part, model.config().c_in), ForwardContext{});
        probs.insert(probs.end(), out.data().begin(), out.data().end());
    }
    return probs;
}

template <class T>
MetricsReport evaluate(Model<T>& model, std::span<const AveragedSample> samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    if (model.config().n_classes != kNumClasses) throw std::invalid_argument("evaluate: model must have 39 classes");
    std::vector<PhonemeId> truth(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) truth[i] = samples[i].phoneme;
    const auto probs = predict(model, samples);
    return MetricsReport::compute(truth, probs);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
    std::size_t epochs = 80;
    double lr = 1e-3;
    std::size_t batch_size = 256;
    std::size_t samples_per_epoch = 40000;
    std::uint64_t seed = 0;
    std::uint64_t validation_seed = 0;  // validation set draws, shared across training seeds
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    AblationFlags flags;
    SamplingOptions sampling;

    /// Full batches only: floor(samples_per_epoch / batch_size).
    std::size_t batches_per_epoch() const { return samples_per_epoch / batch_size; }

    AdamWConfig adamw() const { return {lr, beta1, beta2, adam_eps, weight_decay}; }

    void validate() const {
        if (epochs == 0 || batch_size == 0) throw std::invalid_argument("train config: epochs and batch_size must be positive");
        if (batches_per_epoch() == 0) {
            throw std::invalid_argument("train config: samples_per_epoch smaller than one batch");
        }
        adamw().validate();
        flags.validate();
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_f1_macro = 0.0;
    double val_top3 = 0.0;
    double val_top5 = 0.0;
};

/// CSV with header epoch,train_loss,val_f1_macro,val_top3,val_top5.
inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,val_f1_macro,val_top3,val_top5\n";
    char line[160];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_f1_macro,
                      r.val_top3, r.val_top5);
        out += line;
    }
    return out;
}

template <class T>
struct FitResult {
    Model<T> model;  // restored to the best-F1 epoch
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    MetricsReport best_report;
};

using EpochCallback = std::function<void(const EpochRecord&, double seconds)>;

/// Deterministic batch of training samples for (epoch, batch).
inline std::vector<AveragedSample> make_training_batch(const TrainingPool& pool, const TrainConfig& cfg,
                                                       std::size_t epoch, std::size_t batch) {
    std::vector<AveragedSample> out(cfg.batch_size);
    parallel_for(out.size(), [&](std::size_t j) {
        Rng rng = make_stream(cfg.seed, "train-sample", epoch, batch * cfg.batch_size + j);
        out[j] = make_training_sample(pool, rng, cfg.sampling);
    });
    return out;
}

/// Trains on already-loaded, session-normalized training recordings.
template <class T = float>
FitResult<T> fit(const std::vector<SessionRecording>& train_sessions, const std::vector<AveragedSample>& validation,
                 const ModelConfig& model_cfg, const TrainConfig& cfg, const LossWeights& weights = LossWeights::defaults(),
                 const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (validation.empty()) throw std::invalid_argument("fit: empty validation set");
    const auto pool = TrainingPool::build(train_sessions);
    auto model = Model<T>::build(model_cfg, cfg.flags, cfg.seed);
    const auto& params = model.parameters().trainable();
    auto state = OptimizerState::create(params);
    const auto adam = cfg.adamw();
    const auto loss_weights = cfg.flags.use_weighted_loss ? weights : LossWeights::uniform();
    const std::uint64_t dropout_seed = mix64(cfg.seed, fnv1a64("dropout"), 0, 0);

    FitResult<T> result;
    std::optional<std::vector<std::vector<T>>> best;
    double best_f1 = -1.0;
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < cfg.batches_per_epoch(); ++b) {
            const auto batch = make_training_batch(pool, cfg, epoch, b);
            std::vector<PhonemeId> targets(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) targets[i] = batch[i].phoneme;
            const auto x = batch_tensor<T>(batch, model_cfg.c_in);
            model.parameters().zero_grad();
            const auto logits = model.logits(x, ForwardContext{true, dropout_seed, step});
            const auto loss = weighted_cross_entropy_logits(logits, targets, loss_weights);
            backward(loss);
            adamw_step(params, state, adam);
            loss_sum += double(loss.item());
            ++step;
        }
        const auto report = evaluate(model, std::span<const AveragedSample>(validation));
        EpochRecord rec{epoch + 1, loss_sum / double(cfg.batches_per_epoch()), report.f1_macro, report.top3_macro,
                        report.top5_macro};
        result.history.push_back(rec);
        if (report.f1_macro > best_f1) {
            best_f1 = report.f1_macro;
            best = model.snapshot();
            result.best_epoch = epoch + 1;
            result.best_report = report;
        }
        if (on_epoch) {
            on_epoch(rec, std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
        }
    }
    model.restore(*best);
    result.model = std::move(model);
    return result;
}

/// Loads and session-normalizes recordings, one after another.
inline std::vector<SessionRecording> load_sessions(const std::vector<std::filesystem::path>& paths) {
    std::vector<SessionRecording> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(session_normalize(read_megb(p)));
    return out;
}

/// Builds the validation set from the manifest's validation sessions,
/// releases them, then loads the training sessions and trains.
template <class T = float>
FitResult<T> fit(const DatasetManifest& manifest, const ModelConfig& model_cfg, const TrainConfig& cfg,
                 const LossWeights& weights = LossWeights::defaults(), const EpochCallback& on_epoch = {},
                 ValidationSet* validation_out = nullptr) {
    manifest.validate_for_training();
    cfg.validate();
    ValidationSet validation;
    {
        const auto sessions = load_sessions(manifest.paths(SessionRole::validation));
        validation = build_validation_set(sessions, cfg.validation_seed, cfg.sampling);
    }
    if (validation.samples.empty()) throw std::invalid_argument("fit: every class was discarded from validation");
    const auto train = load_sessions(manifest.paths(SessionRole::train));
    auto result = fit<T>(train, validation.samples, model_cfg, cfg, weights, on_epoch);
    if (validation_out) *validation_out = std::move(validation);
    return result;
}

}  // namespace mebm
