#include "mebm/gradcheck_suite.hpp"

#include <gtest/gtest.h>

using namespace mebm;
using D = Tensor<double>;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.c_in = 12;
    cfg.t = 40;
    cfg.d = 8;
    cfg.n_classes = 7;
    cfg.n_multiscale_blocks = 3;
    cfg.n_bm_blocks = 2;
    return cfg;
}

template <class T>
Tensor<T> random_input(Rng& rng, Shape shape) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal());
    return Tensor<T>::from(std::move(shape), std::move(v));
}

template <class T>
void expect_rows_sum_to_one(const Tensor<T>& p, double tol) {
    const std::size_t k = p.extent(1);
    for (std::size_t i = 0; i < p.extent(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += p[i * k + j];
        EXPECT_NEAR(s, 1.0, tol);
    }
}

}  // namespace

TEST(ModelConfig, Defaults) {
    const ModelConfig cfg;
    EXPECT_EQ(cfg.c_in, 306u);
    EXPECT_EQ(cfg.t, 125u);
    EXPECT_EQ(cfg.d, 128u);
    EXPECT_EQ(cfg.n_classes, 39u);
    EXPECT_EQ(cfg.n_multiscale_blocks, 12u);
    EXPECT_EQ(cfg.n_bm_blocks, 3u);
    EXPECT_DOUBLE_EQ(cfg.dropout, 0.02);
    EXPECT_EQ(cfg.activation, Activation::gelu);
    EXPECT_EQ(cfg.norm, NormKind::batch);
}

TEST(ModelConfig, Validation) {
    ModelConfig cfg;
    cfg.dropout = 1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = ModelConfig{};
    cfg.d = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = ModelConfig{};
    cfg.multiscale_kernels = {3, 4};
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(AblationFlags, BothStreamsOffRejected) {
    AblationFlags flags;
    flags.use_multiscale = false;
    flags.use_bm_encoder = false;
    EXPECT_THROW(build_model<double>(small_config(), flags, 0), std::invalid_argument);
}

TEST(Model, DefaultParameterCountInRange) {
    const auto model = build_model<float>(ModelConfig{}, AblationFlags{}, 0);
    const auto n = model.trainable_count();
    EXPECT_GE(n, 3'000'000u);
    EXPECT_LE(n, 6'500'000u);
}

TEST(Model, ParameterNamesUnique) {
    const auto model = build_model<float>(ModelConfig{}, AblationFlags{}, 0);
    std::set<std::string> names;
    for (const auto& [name, t] : model.parameters().all()) EXPECT_TRUE(names.insert(name).second) << name;
    EXPECT_TRUE(names.count("multiscale.11.k7.weight"));
    EXPECT_TRUE(names.count("bm.2.gate.weight"));
    EXPECT_TRUE(names.count("attention.weight"));
}

TEST(Model, SameSeedSameParameters) {
    const auto a = build_model<float>(small_config(), AblationFlags{}, 42);
    const auto b = build_model<float>(small_config(), AblationFlags{}, 42);
    const auto c = build_model<float>(small_config(), AblationFlags{}, 43);
    EXPECT_EQ(a.snapshot(), b.snapshot());
    EXPECT_NE(a.snapshot(), c.snapshot());
}

TEST(Model, FullSizeForwardShapeAndRows) {
    auto model = build_model<float>(ModelConfig{}, AblationFlags{}, 1);
    Rng rng(1);
    const auto p = model.forward(random_input<float>(rng, {4, 306, 125}));
    EXPECT_EQ(p.shape(), (Shape{4, 39}));
    expect_rows_sum_to_one(p, 1e-6);
}

TEST(Model, EvalForwardIsDeterministic) {
    auto model = build_model<float>(small_config(), AblationFlags{}, 2);
    Rng rng(2);
    const auto x = random_input<float>(rng, {5, 12, 40});
    const auto a = model.forward(x);
    const auto b = model.forward(x);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Model, TrainingDropoutDependsOnStep) {
    auto cfg = small_config();
    cfg.dropout = 0.3;
    auto model = build_model<double>(cfg, AblationFlags{}, 3);
    Rng rng(3);
    const auto x = random_input<double>(rng, {4, 12, 40});
    const auto a = model.forward(x, {true, 5, 0});
    const auto b = model.forward(x, {true, 5, 0});
    const auto c = model.forward(x, {true, 5, 1});
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Model, BatchPermutationInEval) {
    auto model = build_model<double>(small_config(), AblationFlags{}, 4);
    // Non-trivial running statistics.
    Rng rng(4);
    for (int i = 0; i < 3; ++i) model.forward(random_input<double>(rng, {6, 12, 40}), {true, 1, std::uint64_t(i)});
    const auto x = random_input<double>(rng, {6, 12, 40});
    const std::size_t perm[] = {3, 0, 5, 1, 4, 2};
    std::vector<double> xp(x.size());
    const std::size_t row = 12 * 40;
    for (std::size_t i = 0; i < 6; ++i) std::copy_n(x.data().begin() + perm[i] * row, row, xp.begin() + i * row);
    const auto a = model.forward(x);
    const auto b = model.forward(D::from(x.shape(), xp));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t k = 0; k < 7; ++k) EXPECT_NEAR(b[i * 7 + k], a[perm[i] * 7 + k], 1e-12);
}

TEST(Model, RowsSumToOneOverManyInputs) {
    ModelConfig cfg = small_config();
    cfg.n_classes = 39;
    auto model = build_model<float>(cfg, AblationFlags{}, 5);
    Rng rng(5);
    for (int chunk = 0; chunk < 10; ++chunk) {
        const auto p = model.forward(random_input<float>(rng, {100, 12, 40}));
        expect_rows_sum_to_one(p, 1e-6);
    }
}

TEST(Model, InputErrors) {
    auto model = build_model<double>(small_config(), AblationFlags{}, 6);
    EXPECT_THROW(model.forward(D::zeros({2, 11, 40})), std::invalid_argument);
    EXPECT_THROW(model.forward(D::zeros({2, 12, 39})), std::invalid_argument);
    std::vector<double> v(12 * 40, 0.0);
    v[7] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(model.forward(D::from({1, 12, 40}, v)), NonFiniteError);
}

TEST(Model, AblationVariantsStayShapeCorrect) {
    Rng rng(7);
    const auto x = random_input<double>(rng, {3, 12, 40});
    for (const auto& flags : {AblationFlags{true, false, true, true}, AblationFlags{true, true, false, true},
                              AblationFlags{true, true, true, false}}) {
        auto model = build_model<double>(small_config(), flags, 7);
        const auto p = model.forward(x);
        EXPECT_EQ(p.shape(), (Shape{3, 7}));
        expect_rows_sum_to_one(p, 1e-9);
    }
}

TEST(Model, AblatedStreamShrinksFusionInput) {
    auto full = build_model<double>(small_config(), AblationFlags{}, 8);
    auto no_ms = build_model<double>(small_config(), AblationFlags{true, false, true, true}, 8);
    EXPECT_EQ(full.fusion().in_channels, 16u);
    EXPECT_EQ(no_ms.fusion().in_channels, 8u);
    EXPECT_TRUE(no_ms.multiscale().empty());
}

TEST(Model, UniformAttentionTimesTEqualsSumPooling) {
    // Same seed: every shared tensor is initialized identically, and the
    // attention score map starts at zero (uniform weights).
    auto full = build_model<double>(small_config(), AblationFlags{}, 9);
    auto plain = build_model<double>(small_config(), AblationFlags{true, true, true, false}, 9);
    Rng rng(9);
    const auto x = random_input<double>(rng, {4, 12, 40});
    const auto a = full.pooled(x, {});
    const auto b = plain.pooled(x, {});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i] * 40.0, b[i], 1e-8);
}

TEST(Model, SnapshotRestoreRoundTrip) {
    auto model = build_model<double>(small_config(), AblationFlags{}, 10);
    const auto saved = model.snapshot();
    for (auto& [n, p] : model.parameters().trainable()) {
        for (auto& v : D(p).mutable_data()) v += 1.0;
    }
    EXPECT_NE(model.snapshot(), saved);
    model.restore(saved);
    EXPECT_EQ(model.snapshot(), saved);
}

TEST(Model, EndToEndGradientTinyConfig) {
    for (auto& c : default_gradcheck_cases()) {
        if (c.name.rfind("model_end_to_end", 0) != 0) continue;
        for (std::size_t t = 0; t < c.trials; ++t) EXPECT_LT(c.run(t), 1e-4) << c.name << " trial " << t;
    }
}
