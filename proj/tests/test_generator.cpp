#include <gtest/gtest.h>

#include <cmath>

#include "fd_oracle.h"
#include "test_helpers.h"
#include "wsvad/generator.h"

using namespace wsvad;
using wsvad::testing::TempDir;

namespace {

MlpParams zero_params(std::uint32_t d_in) {
    auto p = init_params(d_in, 1);
    for (auto& layer : p.layers) {
        layer.weight.setZero();
        layer.bias.setZero();
    }
    return p;
}

double weighted_score_sum(const MlpParams& p, const Matrix& x, const Vector& w) {
    return forward(p, x, Mode::infer).scores.dot(w);
}

}  // namespace

TEST(InitParams, DefaultShapesFollowTheGeneratorWidths) {
    const auto p = init_params(2048, 0);
    ASSERT_EQ(p.layers.size(), 3u);
    EXPECT_EQ(p.layers[0].weight.rows(), 2048);
    EXPECT_EQ(p.layers[0].weight.cols(), 512);
    EXPECT_EQ(p.layers[1].weight.rows(), 512);
    EXPECT_EQ(p.layers[1].weight.cols(), 32);
    EXPECT_EQ(p.layers[2].weight.rows(), 32);
    EXPECT_EQ(p.layers[2].weight.cols(), 1);
    EXPECT_EQ(p.layer_dims(), (std::vector<std::uint32_t>{2048, 512, 32, 1}));
}

TEST(InitParams, SeededAndBounded) {
    const auto a = init_params(16, 42);
    const auto b = init_params(16, 42);
    const auto c = init_params(16, 43);
    bool differs = false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        EXPECT_EQ(a.layers[l].weight, b.layers[l].weight);
        EXPECT_TRUE(a.layers[l].bias.isZero(0.0));
        differs = differs || a.layers[l].weight != c.layers[l].weight;
        const double bound = std::sqrt(6.0 / static_cast<double>(a.layers[l].weight.rows() + a.layers[l].weight.cols()));
        EXPECT_LE(a.layers[l].weight.cwiseAbs().maxCoeff(), bound);
    }
    EXPECT_TRUE(differs);
}

TEST(Forward, ZeroNetworkScoresOneHalf) {
    Rng rng(1);
    const auto x = wsvad::testing::random_matrix(rng, 5, 8);
    const auto r = forward(zero_params(8), x, Mode::infer);
    EXPECT_TRUE((r.scores.array() == 0.5).all());
    EXPECT_FALSE(r.trace.has_value());
}

TEST(Forward, SingleLayerClosedForm) {
    auto p = init_params({2, 1}, 0, 0.0);
    p.layers[0].weight << 1.0, -1.0;
    p.layers[0].bias << 0.0;
    Matrix x(1, 2);
    x << 3.0, 1.0;
    // sigmoid(2)
    EXPECT_NEAR(score(p, x)[0], 0.8807970779778823, 1e-12);
}

TEST(Forward, InferenceIsDeterministicAndTrainCarriesTrace) {
    Rng rng(2);
    const auto p = init_params(6, 3);
    const auto x = wsvad::testing::random_matrix(rng, 10, 6);
    EXPECT_EQ(score(p, x), score(p, x));
    const auto t = forward(p, x, Mode::train, 99);
    ASSERT_TRUE(t.trace.has_value());
    EXPECT_EQ(t.trace->dropout_masks.size(), 2u);
    // Same dropout seed, same masks.
    EXPECT_EQ(forward(p, x, Mode::train, 99).scores, t.scores);
}

TEST(Forward, DropoutMasksAreInvertedAtTheConfiguredRate) {
    Rng rng(4);
    const auto p = init_params(4, 5);
    const auto x = wsvad::testing::random_matrix(rng, 200, 4);
    const auto t = forward(p, x, Mode::train, 7);
    const auto& mask = t.trace->dropout_masks[0];
    const double kept = (mask.array() > 0).cast<double>().mean();
    EXPECT_NEAR(kept, 0.4, 0.01);
    EXPECT_TRUE(((mask.array() == 0.0) || (mask.array() == 1.0 / 0.4)).all());
}

TEST(Forward, ScoresLieInOpenUnitIntervalAndAreMonotoneInOutputBias) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = init_params(12, static_cast<std::uint64_t>(trial));
        const auto x = wsvad::testing::random_matrix(rng, 16, 12, 2.0);
        const auto s = score(p, x);
        EXPECT_TRUE((s.array() > 0.0).all() && (s.array() < 1.0).all());
        p.layers.back().bias[0] += 0.5;
        EXPECT_TRUE((score(p, x).array() > s.array()).all());
    }
}

TEST(Forward, WrongFeatureWidthIsAContractViolation) {
    Rng rng(1);
    EXPECT_THROW(forward(init_params(8, 1), wsvad::testing::random_matrix(rng, 2, 7), Mode::infer),
                 ContractViolation);
}

TEST(Backward, ZeroScoreGradientGivesZeroGradient) {
    Rng rng(7);
    const auto p = init_params(16, 1);
    const auto x = wsvad::testing::random_matrix(rng, 8, 16);
    const auto f = forward(p, x, Mode::train, 1);
    for (const auto& g : backward(p, *f.trace, x, Vector::Zero(8))) {
        EXPECT_TRUE(g.weight.isZero(0.0));
        EXPECT_TRUE(g.bias.isZero(0.0));
    }
}

TEST(Backward, IsLinearInScoreGradients) {
    Rng rng(8);
    const auto p = init_params(16, 2);
    const auto x = wsvad::testing::random_matrix(rng, 8, 16);
    const auto f = forward(p, x, Mode::train, 3);
    const Vector g = wsvad::testing::random_matrix(rng, 8, 1).col(0);
    const auto one = backward(p, *f.trace, x, g);
    const auto two = backward(p, *f.trace, x, 2.0 * g);
    for (std::size_t l = 0; l < one.size(); ++l) {
        EXPECT_LT((two[l].weight - 2.0 * one[l].weight).cwiseAbs().maxCoeff(), 1e-15);
        EXPECT_LT((two[l].bias - 2.0 * one[l].bias).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Backward, MatchesCentralFiniteDifferences) {
    // K = 8 rows, D = 16, dropout off; loss = sum_i w_i * s_i with random w.
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        auto p = init_params({16, 512, 32, 1}, 100 + static_cast<std::uint64_t>(trial), 0.0);
        const auto x = wsvad::testing::random_matrix(rng, 8, 16);
        const Vector w = wsvad::testing::random_matrix(rng, 8, 1).col(0);
        const auto f = forward(p, x, Mode::train, 0);
        const auto grads = backward(p, *f.trace, x, w);
        auto loss = [&](const MlpParams& q) { return weighted_score_sum(q, x, w); };
        double worst = 0.0;
        for (const auto& ref : wsvad::testing::sample_params(p, 300, rng)) {
            const double numeric = wsvad::testing::central_difference(p, ref, loss);
            worst = std::max(worst, wsvad::testing::relative_error(wsvad::testing::grad_at(grads, ref), numeric));
        }
        EXPECT_LT(worst, 1e-4) << "trial " << trial;
    }
}

TEST(Backward, StaleTraceIsAContractViolation) {
    Rng rng(10);
    const auto p = init_params(16, 1);
    const auto x = wsvad::testing::random_matrix(rng, 8, 16);
    const auto f = forward(p, x, Mode::train, 1);
    const auto other = wsvad::testing::random_matrix(rng, 5, 16);
    EXPECT_THROW(backward(p, *f.trace, other, Vector::Zero(5)), ContractViolation);
    EXPECT_THROW(backward(init_params({16, 8, 1}, 1), *f.trace, x, Vector::Zero(8)), ContractViolation);
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsTheStep) {
    auto p = init_params(4, 1);
    const auto before = p;
    auto state = init_adam(p);
    adam_step(p, state, zeros_like(p));
    EXPECT_EQ(state.step_count, 1u);
    for (std::size_t l = 0; l < p.layers.size(); ++l) EXPECT_EQ(p.layers[l].weight, before.layers[l].weight);
}

TEST(Adam, FirstStepOnScalarMatchesClosedForm) {
    auto p = init_params({1, 1}, 0, 0.0);
    p.layers[0].weight(0, 0) = 0.0;
    auto state = init_adam(p, 0.001);
    auto g = zeros_like(p);
    g[0].weight(0, 0) = 1.0;
    adam_step(p, state, g);
    // Bias correction makes m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
    EXPECT_NEAR(p.layers[0].weight(0, 0), -0.001 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p.layers[0].weight(0, 0), -0.001, 1e-10);
}

TEST(Adam, IdenticalInputsGiveIdenticalResults) {
    Rng rng(11);
    auto p1 = init_params(6, 1);
    auto s1 = init_adam(p1);
    auto p2 = p1;
    auto s2 = s1;
    auto g = zeros_like(p1);
    for (auto& layer : g) layer.weight = wsvad::testing::random_matrix(rng, layer.weight.rows(), layer.weight.cols());
    adam_step(p1, s1, g);
    adam_step(p2, s2, g);
    for (std::size_t l = 0; l < p1.layers.size(); ++l) EXPECT_EQ(p1.layers[l].weight, p2.layers[l].weight);
}

TEST(Adam, NonFiniteGradientNamesTheTensorAndChangesNothing) {
    auto p = init_params(6, 1);
    const auto before = p;
    auto state = init_adam(p);
    auto g = zeros_like(p);
    g[1].bias[3] = std::numeric_limits<double>::quiet_NaN();
    try {
        adam_step(p, state, g);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("layer2.bias"), std::string::npos) << e.what();
    }
    EXPECT_EQ(state.step_count, 0u);
    EXPECT_EQ(p.layers[1].bias, before.layers[1].bias);
}

TEST(ModelFile, RoundTripIsBitIdenticalAndScoresMatch) {
    TempDir dir("model");
    Rng rng(12);
    GeneratorModel m{init_params(10, 5), {}};
    m.optimizer = init_adam(m.params);
    const auto x = wsvad::testing::random_matrix(rng, 4, 10);
    // A couple of steps so the moments are non-trivial.
    for (int i = 0; i < 3; ++i) {
        const auto f = forward(m.params, x, Mode::train, static_cast<std::uint64_t>(i));
        adam_step(m.params, m.optimizer, backward(m.params, *f.trace, x, Vector::Ones(4)));
    }
    save_model(m, dir / "m.mdl");
    const auto back = load_model(dir / "m.mdl");
    EXPECT_EQ(encode_model(back), encode_model(m));
    EXPECT_EQ(back.optimizer.step_count, 3u);
    EXPECT_EQ(score(back.params, x), score(m.params, x));
}

TEST(ModelFile, TruncatedOrWrongVersionFailsToLoad) {
    GeneratorModel m{init_params(3, 1), {}};
    m.optimizer = init_adam(m.params);
    auto bytes = encode_model(m);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 9);
    EXPECT_THROW(decode_model(truncated), FormatError);
    auto versioned = bytes;
    versioned[4] = 2;
    EXPECT_THROW(decode_model(versioned), FormatError);
}
