#include "csiloc/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "csiloc/rng.hpp"

using namespace csiloc;

namespace {

Tensor<double> toy_truth() { return Tensor<double>({2, 3}, {0, 0, 0, 2, 2, 2}); }
Tensor<double> toy_pred() { return Tensor<double>({2, 3}, {1, 1, 1, 1, 1, 1}); }

Tensor<double> random_positions(std::size_t n, Rng& rng, double span = 50.0) {
    Tensor<double> t({n, 3});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-span, span);
    return t;
}

} // namespace

TEST(MetricMode, ParseAndPrint) {
    EXPECT_EQ(to_string(MetricMode::paper_literal), "paper-literal");
    EXPECT_EQ(to_string(MetricMode::conventional), "conventional");
    EXPECT_EQ(parse_metric_mode("paper-literal"), MetricMode::paper_literal);
    EXPECT_EQ(parse_metric_mode("paper_literal"), MetricMode::paper_literal);
    EXPECT_EQ(parse_metric_mode("conventional"), MetricMode::conventional);
    EXPECT_THROW(parse_metric_mode("fancy"), ConfigError);
}

TEST(AxisValues, AverageAndAccess) {
    AxisValues v{1.0, 2.0, 6.0};
    EXPECT_DOUBLE_EQ(v.average(), 3.0);
    EXPECT_DOUBLE_EQ(v.axis(2), 6.0);
    v.axis(0) = 4.0;
    EXPECT_DOUBLE_EQ(v.x, 4.0);
}

TEST(Ranges, MaxMinusMinPerAxis) {
    Tensor<double> t({3, 3}, {0, 5, -1, 4, 5, 1, 2, 7, 3});
    AxisValues r = coordinate_ranges(t);
    EXPECT_DOUBLE_EQ(r.x, 4.0);
    EXPECT_DOUBLE_EQ(r.y, 2.0);
    EXPECT_DOUBLE_EQ(r.z, 4.0);
    EXPECT_THROW(coordinate_ranges(Tensor<double>({3, 2})), DimensionError);
}

// Hand-evaluated toy fixture: |err| = 1 on every axis and sample; truth
// ranges are 2.
TEST(Metrics, ToyFixtureHandValues) {
    const auto truth = toy_truth();
    const auto pred = toy_pred();

    AxisValues m = mae(truth, pred);
    EXPECT_NEAR(m.x, 1.0, 1e-9);
    EXPECT_NEAR(m.y, 1.0, 1e-9);
    EXPECT_NEAR(m.z, 1.0, 1e-9);
    EXPECT_NEAR(m.average(), 1.0, 1e-9);

    AxisValues nm = nmae(truth, pred);
    EXPECT_NEAR(nm.x, 0.5, 1e-9);
    EXPECT_NEAR(nm.average(), 0.5, 1e-9);

    AxisValues rc = rmse(truth, pred, MetricMode::conventional);
    EXPECT_NEAR(rc.x, 1.0, 1e-9);
    EXPECT_NEAR(rc.average(), 1.0, 1e-9);

    // sqrt(sum sq)/n rather than sqrt(mean sq)
    AxisValues rl = rmse(truth, pred, MetricMode::paper_literal);
    EXPECT_NEAR(rl.x, std::sqrt(2.0) / 2.0, 1e-9);
    EXPECT_NEAR(rl.y, 0.70710678118654757, 1e-9);

    AxisValues nc = nrmse(truth, pred, MetricMode::conventional);
    EXPECT_NEAR(nc.x, 0.5, 1e-9);
    AxisValues nl = nrmse(truth, pred, MetricMode::paper_literal);
    EXPECT_NEAR(nl.x, std::sqrt(2.0) / 4.0, 1e-9);
}

TEST(Metrics, PerfectPredictionIsZero) {
    const auto truth = toy_truth();
    EXPECT_DOUBLE_EQ(mae(truth, truth).average(), 0.0);
    EXPECT_DOUBLE_EQ(rmse(truth, truth, MetricMode::paper_literal).average(), 0.0);
    EXPECT_DOUBLE_EQ(nrmse(truth, truth, MetricMode::conventional).average(), 0.0);
}

// The two RMSE readings differ by exactly sqrt(n).
TEST(Metrics, ModeRelation) {
    Rng rng(19);
    for (std::size_t n : {2ul, 7ul, 64ul}) {
        Tensor<double> truth = random_positions(n, rng);
        Tensor<double> pred = random_positions(n, rng);
        AxisValues lit = rmse(truth, pred, MetricMode::paper_literal);
        AxisValues conv = rmse(truth, pred, MetricMode::conventional);
        const double root_n = std::sqrt(static_cast<double>(n));
        for (std::size_t m = 0; m < 3; ++m)
            EXPECT_NEAR(lit.axis(m), conv.axis(m) / root_n, 1e-12);
    }
}

TEST(Metrics, MaeNeverExceedsConventionalRmse) {
    Rng rng(23);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor<double> truth = random_positions(20, rng);
        Tensor<double> pred = random_positions(20, rng);
        AxisValues a = mae(truth, pred);
        AxisValues r = rmse(truth, pred, MetricMode::conventional);
        for (std::size_t m = 0; m < 3; ++m) EXPECT_LE(a.axis(m), r.axis(m) + 1e-12);
    }
}

TEST(Metrics, TranslationInvariance) {
    Rng rng(29);
    Tensor<double> truth = random_positions(15, rng);
    Tensor<double> pred = random_positions(15, rng);
    Tensor<double> truth2 = truth, pred2 = pred;
    for (std::size_t i = 0; i < truth2.size(); ++i) {
        truth2[i] += 100.0;
        pred2[i] += 100.0;
    }
    EXPECT_NEAR(mae(truth, pred).average(), mae(truth2, pred2).average(), 1e-9);
    EXPECT_NEAR(nmae(truth, pred).average(), nmae(truth2, pred2).average(), 1e-9);
    EXPECT_NEAR(rmse(truth, pred, MetricMode::conventional).average(),
                rmse(truth2, pred2, MetricMode::conventional).average(), 1e-9);
}

TEST(Metrics, SamplePermutationInvariance) {
    Rng rng(31);
    Tensor<double> truth = random_positions(10, rng);
    Tensor<double> pred = random_positions(10, rng);
    // reverse both in sync
    Tensor<double> truth_r({10, 3}), pred_r({10, 3});
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t m = 0; m < 3; ++m) {
            truth_r.at(i, m) = truth.at(9 - i, m);
            pred_r.at(i, m) = pred.at(9 - i, m);
        }
    EXPECT_NEAR(mae(truth, pred).x, mae(truth_r, pred_r).x, 1e-12);
    EXPECT_NEAR(rmse(truth, pred, MetricMode::paper_literal).y,
                rmse(truth_r, pred_r, MetricMode::paper_literal).y, 1e-12);
}

TEST(Metrics, ZeroRangeIsDomainErrorNamingAxis) {
    Tensor<double> truth({2, 3}, {1, 0, 0, 1, 5, 5}); // x constant
    Tensor<double> pred({2, 3});
    try {
        nmae(truth, pred);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
    }
    EXPECT_THROW(nrmse(truth, pred, MetricMode::conventional), DomainError);
    // plain mae/rmse do not need ranges
    EXPECT_NO_THROW(mae(truth, pred));
    EXPECT_NO_THROW(rmse(truth, pred, MetricMode::conventional));
}

TEST(Metrics, ShapeMismatchRejected) {
    EXPECT_THROW(mae(Tensor<double>({2, 3}), Tensor<double>({3, 3})), DimensionError);
    EXPECT_THROW(rmse(Tensor<double>({2, 2}), Tensor<double>({2, 2}), MetricMode::conventional),
                 DimensionError);
}

TEST(MetricsReport, ComputeMatchesPieces) {
    Rng rng(37);
    Tensor<double> truth = random_positions(12, rng);
    Tensor<double> pred = random_positions(12, rng);
    MetricsReport rep = compute_report(truth, pred, MetricMode::conventional);
    EXPECT_EQ(rep.n, 12u);
    EXPECT_DOUBLE_EQ(rep.mae.x, mae(truth, pred).x);
    EXPECT_DOUBLE_EQ(rep.rmse.z, rmse(truth, pred, MetricMode::conventional).z);
    EXPECT_DOUBLE_EQ(rep.ranges.y, coordinate_ranges(truth).y);
}

TEST(MetricsReport, JsonRoundTrip) {
    Rng rng(41);
    Tensor<double> truth = random_positions(9, rng);
    Tensor<double> pred = random_positions(9, rng);
    MetricsReport rep = compute_report(truth, pred, MetricMode::paper_literal);
    MetricsReport back = MetricsReport::from_json(rep.to_json());
    EXPECT_EQ(back.mode, rep.mode);
    EXPECT_EQ(back.n, rep.n);
    EXPECT_DOUBLE_EQ(back.mae.x, rep.mae.x);
    EXPECT_DOUBLE_EQ(back.nrmse.z, rep.nrmse.z);
    EXPECT_DOUBLE_EQ(back.ranges.y, rep.ranges.y);
}

TEST(MetricsReport, CsvRoundTrip) {
    Rng rng(43);
    Tensor<double> truth = random_positions(11, rng);
    Tensor<double> pred = random_positions(11, rng);
    MetricsReport rep = compute_report(truth, pred, MetricMode::conventional);
    const std::string csv = rep.to_csv();
    EXPECT_NE(csv.find("metric,axis,value,mode"), std::string::npos);
    EXPECT_NE(csv.find("mae,average,"), std::string::npos);
    MetricsReport back = MetricsReport::from_csv(csv);
    EXPECT_EQ(back.mode, rep.mode);
    EXPECT_EQ(back.n, rep.n);
    EXPECT_DOUBLE_EQ(back.nmae.y, rep.nmae.y);
    EXPECT_DOUBLE_EQ(back.rmse.x, rep.rmse.x);
    EXPECT_DOUBLE_EQ(back.ranges.z, rep.ranges.z);
}

TEST(MetricsReport, FromCsvRejectsGarbage) {
    EXPECT_THROW(MetricsReport::from_csv(""), FormatError);
    EXPECT_THROW(MetricsReport::from_csv("metric,axis,value,mode\nmae,x,notanumber,conventional\n"),
                 FormatError);
}
