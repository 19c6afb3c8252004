#pragma once

// Named finite-difference checks over every differentiable op, the network
// blocks, and a tiny end-to-end model, all in double precision.

#include "mebm/gradcheck.hpp"
#include "mebm/training.hpp"

#include <iomanip>
#include <sstream>

namespace mebm {

struct GradCheckCase {
    std::string name;
    double tolerance = 1e-5;
    std::size_t trials = 20;
    // Max relative error of one randomized trial.
    std::function<double(std::uint64_t trial)> run;
};

struct GradCheckRow {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::size_t trials = 0;
    bool passed = false;
    std::string error;  // set when a trial threw
};

struct GradCheckReport {
    std::vector<GradCheckRow> rows;

    bool passed() const {
        return std::all_of(rows.begin(), rows.end(), [](const GradCheckRow& r) { return r.passed; });
    }

    std::vector<std::string> failures() const {
        std::vector<std::string> out;
        for (const auto& r : rows) {
            if (!r.passed) out.push_back(r.name);
        }
        return out;
    }

    std::string to_text() const {
        std::ostringstream out;
        out << std::left << std::setw(28) << "op" << std::setw(8) << "trials" << std::setw(14) << "max rel err"
            << std::setw(12) << "tolerance" << "result\n";
        for (const auto& r : rows) {
            out << std::left << std::setw(28) << r.name << std::setw(8) << r.trials << std::setw(14)
                << std::scientific << std::setprecision(3) << r.max_rel_error << std::setw(12) << r.tolerance
                << std::defaultfloat << (r.passed ? "PASS" : "FAIL");
            if (!r.error.empty()) out << " (" << r.error << ")";
            out << "\n";
        }
        return out.str();
    }
};

inline GradCheckReport run_gradcheck(const std::vector<GradCheckCase>& cases) {
    GradCheckReport report;
    for (const auto& c : cases) {
        GradCheckRow row{c.name, 0.0, c.tolerance, c.trials, false, {}};
        try {
            for (std::size_t t = 0; t < c.trials; ++t) row.max_rel_error = std::max(row.max_rel_error, c.run(t));
            row.passed = row.max_rel_error < c.tolerance;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

namespace gradcheck {

using D = Tensor<double>;

inline D random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return D::from(std::move(shape), std::move(v));
}

/// Values with magnitude in [lo, hi] and random sign.
inline D random_away_from_zero(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (lo + (hi - lo) * rng.uniform());
    return D::from(std::move(shape), std::move(v));
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(rng.uniform_int(std::int64_t(lo), std::int64_t(hi)));
}

/// sum(y * w) with w fixed by `seed`, so every coordinate of y matters.
inline D probe(const D& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(y * random_tensor(rng, y.shape()));
}

/// Max error over every input of f, checking one input at a time.
inline double check_all(const std::function<D(const std::vector<D>&)>& f, const std::vector<D>& inputs,
                        double eps = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto g = [&, i](const D& xi) {
            auto args = inputs;
            args[i] = xi;
            return f(args);
        };
        worst = std::max(worst, finite_diff_check<double>(g, inputs[i], eps));
    }
    return worst;
}

inline Rng trial_rng(const std::string& name, std::uint64_t trial) { return make_stream(2024, "gradcheck:" + name, trial); }

inline GradCheckCase make_case(std::string name, std::function<double(Rng&, std::uint64_t seed)> body,
                               double tolerance = 1e-5, std::size_t trials = 20) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tolerance;
    c.trials = trials;
    c.run = [name, body = std::move(body)](std::uint64_t trial) {
        Rng rng = trial_rng(name, trial);
        return body(rng, rng.state()[0]);
    };
    return c;
}

template <class Op>
GradCheckCase binary_case(std::string name, Op op, bool positive_b = false) {
    return make_case(name, [op, positive_b](Rng& rng, std::uint64_t seed) {
        const Shape full{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5)};
        // Alternate between equal shapes and leading-1 broadcasting.
        const Shape bshape = rng.uniform() < 0.5 ? full : Shape{1, full[1], full[2]};
        const D a = random_tensor(rng, full);
        const D b = positive_b ? random_away_from_zero(rng, bshape, 0.5, 2.0) : random_tensor(rng, bshape);
        return check_all([&](const std::vector<D>& in) { return probe(op(in[0], in[1]), seed); }, {a, b});
    });
}

template <class Op>
GradCheckCase unary_case(std::string name, Op op, double lo = -1.0, double hi = 1.0, bool away_from_zero = false) {
    return make_case(name, [op, lo, hi, away_from_zero](Rng& rng, std::uint64_t seed) {
        const Shape s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 2, 6)};
        const D x = away_from_zero ? random_away_from_zero(rng, s, lo, hi) : random_tensor(rng, s, lo, hi);
        return check_all([&](const std::vector<D>& in) { return probe(op(in[0]), seed); }, {x});
    });
}

using ConvFn = std::function<D(const D&, const D&, const D&, Conv1dOptions)>;

inline double conv_trial(Rng& rng, std::uint64_t seed, const ConvFn& conv, bool grouped) {
    const std::size_t groups = grouped ? pick(rng, 2, 3) : 1;
    const std::size_t cin = groups * pick(rng, 1, 2);
    const std::size_t cout = groups * pick(rng, 1, 2);
    const std::size_t k = 2 * pick(rng, 0, 3) + 1;
    const std::size_t dilation = pick(rng, 1, 3);
    const std::size_t t = std::max<std::size_t>(pick(rng, 4, 9), (k - 1) * dilation);
    const D x = random_tensor(rng, {pick(rng, 1, 3), cin, t});
    const D w = random_tensor(rng, {cout, cin / groups, k});
    const D b = random_tensor(rng, {cout});
    const Conv1dOptions opt{dilation, groups};
    return check_all([&](const std::vector<D>& in) { return probe(conv(in[0], in[1], in[2], opt), seed); },
                     {x, w, b});
}

inline ConvFn default_conv() {
    return [](const D& x, const D& w, const D& b, Conv1dOptions opt) { return conv1d(x, w, b, opt); };
}

struct TinyModel {
    Model<double> model;
    D x;
    std::vector<PhonemeId> targets;
};

/// Small instance of the full architecture. Parameters that start at
/// zero or one are jittered so no gradient is trivially zero.
inline TinyModel tiny_model(Rng& rng, std::size_t batch = 3) {
    ModelConfig cfg;
    cfg.c_in = 6;
    cfg.t = 16;
    cfg.d = 8;
    cfg.n_classes = 5;
    cfg.n_multiscale_blocks = 2;
    cfg.n_bm_blocks = 1;
    TinyModel tm{Model<double>::build(cfg, AblationFlags{}, rng.state()[0]), {}, {}};
    for (auto& [name, p] : tm.model.parameters().trainable()) {
        auto values = Tensor<double>(p).mutable_data();
        for (auto& v : values) {
            if (v == 0.0 || v == 1.0) v += 0.2 * (2.0 * rng.uniform() - 1.0);
        }
    }
    tm.x = random_tensor(rng, {batch, cfg.c_in, cfg.t});
    for (std::size_t i = 0; i < batch; ++i) tm.targets.push_back(static_cast<PhonemeId>(pick(rng, 0, 4)));
    return tm;
}

}  // namespace gradcheck

/// Every differentiable op in isolation, each block, and the tiny model.
/// `conv` replaces the convolution under test (used to exercise failures).
inline std::vector<GradCheckCase> default_gradcheck_cases(gradcheck::ConvFn conv = gradcheck::default_conv()) {
    using namespace gradcheck;
    std::vector<GradCheckCase> cases;
    cases.push_back(binary_case("add", [](const D& a, const D& b) { return a + b; }));
    cases.push_back(binary_case("sub", [](const D& a, const D& b) { return a - b; }));
    cases.push_back(binary_case("mul", [](const D& a, const D& b) { return a * b; }));
    cases.push_back(binary_case("div", [](const D& a, const D& b) { return a / b; }, true));
    cases.push_back(unary_case("add_scalar", [](const D& a) { return add(a, 0.75); }));
    cases.push_back(unary_case("mul_scalar", [](const D& a) { return mul(a, -1.5); }));
    cases.push_back(unary_case("neg", [](const D& a) { return -a; }));
    cases.push_back(unary_case("exp", [](const D& a) { return exp(a); }));
    cases.push_back(unary_case("log", [](const D& a) { return log(a); }, 0.5, 2.0));
    cases.push_back(unary_case("sigmoid", [](const D& a) { return sigmoid(a); }, -3.0, 3.0));
    cases.push_back(unary_case("relu", [](const D& a) { return relu(a); }, 0.1, 1.0, true));
    cases.push_back(unary_case("gelu", [](const D& a) { return gelu(a); }, -3.0, 3.0));
    cases.push_back(make_case("matmul", [](Rng& rng, std::uint64_t seed) {
        const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
        return check_all([&](const std::vector<D>& in) { return probe(matmul(in[0], in[1]), seed); },
                         {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})});
    }));
    for (std::size_t axis = 0; axis < 3; ++axis) {
        cases.push_back(unary_case("sum_axis" + std::to_string(axis), [axis](const D& a) { return sum(a, axis); }));
        cases.push_back(unary_case("mean_axis" + std::to_string(axis), [axis](const D& a) { return mean(a, axis); }));
        cases.push_back(unary_case("softmax_axis" + std::to_string(axis),
                                   [axis](const D& a) { return softmax(a, axis); }, -2.0, 2.0));
        cases.push_back(unary_case("log_softmax_axis" + std::to_string(axis),
                                   [axis](const D& a) { return log_softmax(a, axis); }, -2.0, 2.0));
    }
    cases.push_back(unary_case("sum_all", [](const D& a) { return mul(sum(a), 0.3); }));
    cases.push_back(unary_case("mean_all", [](const D& a) { return mul(mean(a), 0.3); }));
    cases.push_back(unary_case("reshape", [](const D& a) { return reshape(a, {a.size()}); }));
    cases.push_back(make_case("concat", [](Rng& rng, std::uint64_t seed) {
        const std::size_t b = pick(rng, 1, 3), t = pick(rng, 2, 5);
        return check_all([&](const std::vector<D>& in) { return probe(concat(in, 1), seed); },
                         {random_tensor(rng, {b, pick(rng, 1, 3), t}), random_tensor(rng, {b, pick(rng, 1, 3), t})});
    }));
    cases.push_back(make_case("conv1d", [conv](Rng& rng, std::uint64_t seed) { return conv_trial(rng, seed, conv, false); }));
    cases.push_back(
        make_case("conv1d_grouped", [conv](Rng& rng, std::uint64_t seed) { return conv_trial(rng, seed, conv, true); }));
    cases.push_back(make_case("merge_kernels", [](Rng& rng, std::uint64_t seed) {
        const std::size_t co = pick(rng, 1, 3), ci = pick(rng, 1, 3);
        return check_all([&](const std::vector<D>& in) { return probe(merge_centered_kernels(in), seed); },
                         {random_tensor(rng, {co, ci, 3}), random_tensor(rng, {co, ci, 5}), random_tensor(rng, {co, ci, 7})});
    }));
    for (bool training : {true, false}) {
        cases.push_back(make_case(training ? "batch_norm_train" : "batch_norm_eval", [training](Rng& rng, std::uint64_t seed) {
            const std::size_t c = pick(rng, 1, 3);
            const Shape s{pick(rng, 2, 3), c, pick(rng, 3, 6)};
            auto stats = BatchNormStats<double>::create(c);
            stats.mean = random_tensor(rng, {c});
            stats.var = random_tensor(rng, {c}, 0.5, 2.0);
            return check_all(
                [&](const std::vector<D>& in) {
                    auto local = stats;
                    local.mean = stats.mean.detach();
                    local.var = stats.var.detach();
                    return probe(batch_norm(in[0], in[1], in[2], local, training), seed);
                },
                {random_tensor(rng, s, -2.0, 2.0), random_tensor(rng, {c}, 0.5, 1.5), random_tensor(rng, {c})});
        }));
    }
    cases.push_back(unary_case("dropout", [](const D& a) { return dropout(a, 0.3, true, DropoutKey{7, 1, 3}); }));
    cases.push_back(make_case("glu", [](Rng& rng, std::uint64_t seed) {
        const Shape s{pick(rng, 1, 3), 2 * pick(rng, 1, 3), pick(rng, 2, 5)};
        return check_all([&](const std::vector<D>& in) { return probe(glu(in[0]), seed); }, {random_tensor(rng, s, -2.0, 2.0)});
    }));
    cases.push_back(make_case("weighted_cross_entropy", [](Rng& rng, std::uint64_t) {
        const std::size_t b = pick(rng, 1, 4), k = pick(rng, 2, 6);
        std::vector<PhonemeId> ys(b);
        for (auto& y : ys) y = static_cast<PhonemeId>(pick(rng, 0, k - 1));
        auto w = LossWeights::uniform();
        for (auto& v : w.values) v = 0.1 + 2.0 * rng.uniform();
        const double from_logits = check_all(
            [&](const std::vector<D>& in) { return weighted_cross_entropy_logits(in[0], ys, w); },
            {random_tensor(rng, {b, k}, -2.0, 2.0)});
        const double from_probs = check_all(
            [&](const std::vector<D>& in) { return weighted_cross_entropy(softmax(in[0], 1), ys, w); },
            {random_tensor(rng, {b, k}, -2.0, 2.0)});
        return std::max(from_logits, from_probs);
    }));

    // Blocks, with input and parameters checked together.
    auto block_case = [](std::string name, auto make_and_run) {
        return make_case(std::move(name), [make_and_run](Rng& rng, std::uint64_t seed) {
            return make_and_run(rng, seed);
        }, 1e-5, 5);
    };
    cases.push_back(block_case("spatial_attention", [](Rng& rng, std::uint64_t seed) {
        const Initializer init(seed);
        auto blk = SpatialAttention<double>::create(4, 3, init, "s");
        ParameterSet<double> ps;
        blk.collect("s", ps);
        for (auto& [n, p] : ps.trainable()) {
            for (auto& v : Tensor<double>(p).mutable_data()) v = 2.0 * rng.uniform() - 1.0;
        }
        const D x = random_tensor(rng, {2, 4, 5});
        std::vector<D> leaves;
        for (auto& [n, p] : ps.trainable()) leaves.push_back(p);
        const double e_params = finite_diff_check_leaves<double>([&] { return probe(blk(x), seed); }, leaves, 1e-6).max_rel_error;
        const double e_x = finite_diff_check<double>([&](const D& in) { return probe(blk(in), seed); }, x, 1e-6);
        return std::max(e_params, e_x);
    }));
    cases.push_back(block_case("attention_pool", [](Rng& rng, std::uint64_t seed) {
        auto pool = ConvAttentionPool<double>::create(3);
        ParameterSet<double> ps;
        pool.collect("a", ps);
        for (auto& [n, p] : ps.trainable()) {
            for (auto& v : Tensor<double>(p).mutable_data()) v = 2.0 * rng.uniform() - 1.0;
        }
        const D h = random_tensor(rng, {2, 3, 6});
        std::vector<D> leaves;
        for (auto& [n, p] : ps.trainable()) leaves.push_back(p);
        const double e_params = finite_diff_check_leaves<double>([&] { return probe(pool(h), seed); }, leaves, 1e-6).max_rel_error;
        const double e_h = finite_diff_check<double>([&](const D& in) { return probe(pool(in), seed); }, h, 1e-6);
        return std::max(e_params, e_h);
    }));

    // Tiny end-to-end model, input and every parameter. Before the
    // evaluation-mode check the running statistics are settled by repeated
    // training-mode passes over the batch.
    for (bool training : {true, false}) {
        cases.push_back(make_case(training ? "model_end_to_end_train" : "model_end_to_end_eval",
                                  [training](Rng& rng, std::uint64_t) {
            auto tm = tiny_model(rng);
            if (!training) {
                for (int i = 0; i < 60; ++i) tm.model.logits(tm.x, ForwardContext{true, 11, 0});
            }
            const auto weights = LossWeights::defaults();
            const ForwardContext ctx{training, 11, 0};
            auto loss_of = [&](const D& x) {
                return weighted_cross_entropy_logits(tm.model.logits(x, ctx), tm.targets, weights);
            };
            const double e_x = finite_diff_check<double>(loss_of, tm.x, 3e-5);
            std::vector<D> leaves;
            for (auto& [n, p] : tm.model.parameters().trainable()) leaves.push_back(p);
            const double e_p = finite_diff_check_leaves<double>([&] { return loss_of(tm.x); }, leaves, 3e-5).max_rel_error;
            return std::max(e_x, e_p);
        }, 1e-4, 3));
    }
    return cases;
}

}  // namespace mebm
