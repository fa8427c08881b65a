#include "csiloc/loss.hpp"
#include "csiloc/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace csiloc;

TEST(MseLoss, HandComputed) {
    Tensor<float> pred({2}, {1.0f, 2.0f});
    Tensor<float> target({2});
    auto res = mse_loss(pred, target);
    EXPECT_DOUBLE_EQ(res.value, 2.5);
    EXPECT_FLOAT_EQ(res.grad[0], 1.0f); // 2 * diff / n
    EXPECT_FLOAT_EQ(res.grad[1], 2.0f);
    EXPECT_DOUBLE_EQ(mse_value(pred, target), 2.5);
}

TEST(MseLoss, PerfectPrediction) {
    Tensor<float> p({2, 3}, {1, 2, 3, 4, 5, 6});
    auto res = mse_loss(p, p);
    EXPECT_DOUBLE_EQ(res.value, 0.0);
    for (std::size_t i = 0; i < res.grad.size(); ++i) EXPECT_EQ(res.grad[i], 0.0f);
}

TEST(MseLoss, ShapeMismatch) {
    EXPECT_THROW(mse_loss(Tensor<float>({2, 3}), Tensor<float>({3, 2})), DimensionError);
    EXPECT_THROW(mse_value(Tensor<float>({2}), Tensor<float>({3})), DimensionError);
}

// Two steps with a constant gradient, checked against a by-hand evaluation of
// the bias-corrected update rule.
TEST(Adam, FrozenTwoStepTrace) {
    Parameter<double> p("theta", Tensor<double>({3}, {1.0, -0.5, 2.0}));
    const AdamConfig cfg;
    auto set_grad = [&] {
        p.grad = Tensor<double>({3}, {0.5, -0.25, 1.5});
    };

    set_grad();
    adam_step<double>({&p}, cfg);
    EXPECT_NEAR(p.value[0], 0.99900000002, 1e-12);
    EXPECT_NEAR(p.value[1], -0.49900000004, 1e-12);
    EXPECT_NEAR(p.value[2], 1.9990000000066668, 1e-12);

    set_grad();
    adam_step<double>({&p}, cfg);
    EXPECT_NEAR(p.value[0], 0.99800000004, 1e-12);
    EXPECT_NEAR(p.value[1], -0.49800000008, 1e-12);
    EXPECT_NEAR(p.value[2], 1.9980000000133336, 1e-12);
}

// Independent re-implementation of the update rule, run for 25 steps on a
// quadratic objective; both trajectories must agree to near machine precision.
TEST(Adam, MatchesScalarReference) {
    Parameter<double> p("theta", Tensor<double>({1}, {3.0}));
    const AdamConfig cfg;

    double theta = 3.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 25; ++t) {
        const double g = 2.0 * theta; // d/dtheta of theta^2
        p.grad[0] = 2.0 * p.value[0];
        adam_step<double>({&p}, cfg);

        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        const double mhat = m / (1.0 - std::pow(cfg.beta1, t));
        const double vhat = v / (1.0 - std::pow(cfg.beta2, t));
        theta -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        ASSERT_NEAR(p.value[0], theta, 1e-14) << "step " << t;
    }
    EXPECT_LT(std::abs(p.value[0]), 3.0); // it actually descends
}

TEST(Adam, ConvergesOnQuadratic) {
    Parameter<double> p("theta", Tensor<double>({1}, {1.0}));
    AdamConfig cfg;
    cfg.lr = 0.05;
    for (int t = 0; t < 2000; ++t) {
        p.grad[0] = 2.0 * p.value[0];
        adam_step<double>({&p}, cfg);
    }
    EXPECT_NEAR(p.value[0], 0.0, 1e-3);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    Parameter<float> p("5.weight", Tensor<float>({2}));
    p.grad[1] = std::numeric_limits<float>::quiet_NaN();
    try {
        adam_step<float>({&p}, AdamConfig{});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("5.weight"), std::string::npos);
        EXPECT_NE(msg.find("1"), std::string::npos);
    }
}

TEST(Parameter, ZeroGrad) {
    Parameter<float> p("w", Tensor<float>({2}, {1.0f, 2.0f}));
    p.grad.fill(3.0f);
    p.zero_grad();
    EXPECT_EQ(p.grad[0], 0.0f);
    EXPECT_EQ(p.grad[1], 0.0f);
    EXPECT_EQ(p.value[1], 2.0f); // values untouched
}
