#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>

#include "json.hpp"

#include "csiloc/tensor.hpp"

namespace csiloc {

// RMSE normalization variants. paper_literal places the 1/n outside the root
// (root of the sum, divided by n); conventional is the root of the mean.
// They differ by a factor of sqrt(n).
enum class MetricMode { paper_literal, conventional };

inline std::string to_string(MetricMode mode) {
    return mode == MetricMode::paper_literal ? "paper-literal" : "conventional";
}

inline MetricMode parse_metric_mode(const std::string& s) {
    if (s == "paper-literal" || s == "paper_literal") return MetricMode::paper_literal;
    if (s == "conventional") return MetricMode::conventional;
    throw ConfigError("unknown metric mode '" + s + "' (expected paper-literal or conventional)");
}

struct AxisValues {
    double x = 0, y = 0, z = 0;
    double average() const { return (x + y + z) / 3.0; }
    double axis(std::size_t m) const { return m == 0 ? x : (m == 1 ? y : z); }
    double& axis(std::size_t m) { return m == 0 ? x : (m == 1 ? y : z); }
};

namespace detail {

constexpr const char* axis_name(std::size_t m) { return m == 0 ? "x" : (m == 1 ? "y" : "z"); }

template <typename T>
void require_positions_pair(const Tensor<T>& truth, const Tensor<T>& pred) {
    if (truth.ndim() != 2 || truth.extent(1) != 3)
        throw DimensionError("ground truth must be [n, 3], got " + shape_string(truth.shape()));
    if (truth.shape() != pred.shape())
        throw DimensionError("prediction shape " + shape_string(pred.shape()) +
                             " does not match ground truth " + shape_string(truth.shape()));
    if (truth.extent(0) == 0) throw DomainError("metrics need at least one sample");
}

} // namespace detail

// Per-axis ground-truth coordinate ranges (max - min), used by the
// normalized metrics.
template <typename T>
AxisValues coordinate_ranges(const Tensor<T>& truth) {
    if (truth.ndim() != 2 || truth.extent(1) != 3)
        throw DimensionError("ground truth must be [n, 3], got " + shape_string(truth.shape()));
    AxisValues r;
    for (std::size_t m = 0; m < 3; ++m) {
        double lo = static_cast<double>(truth.at(0, m)), hi = lo;
        for (std::size_t i = 1; i < truth.extent(0); ++i) {
            const double v = static_cast<double>(truth.at(i, m));
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        r.axis(m) = hi - lo;
    }
    return r;
}

template <typename T>
AxisValues mae(const Tensor<T>& truth, const Tensor<T>& pred) {
    detail::require_positions_pair(truth, pred);
    const std::size_t n = truth.extent(0);
    AxisValues out;
    for (std::size_t m = 0; m < 3; ++m) {
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i)
            acc += std::abs(static_cast<double>(truth.at(i, m)) - static_cast<double>(pred.at(i, m)));
        out.axis(m) = acc / static_cast<double>(n);
    }
    return out;
}

namespace detail {

inline AxisValues checked_ranges(const AxisValues& ranges) {
    for (std::size_t m = 0; m < 3; ++m)
        if (!(ranges.axis(m) > 0))
            throw DomainError(std::string("axis ") + axis_name(m) +
                              " has zero coordinate range; normalized metrics undefined");
    return ranges;
}

} // namespace detail

template <typename T>
AxisValues nmae(const Tensor<T>& truth, const Tensor<T>& pred) {
    const AxisValues ranges = detail::checked_ranges(coordinate_ranges(truth));
    AxisValues out = mae(truth, pred);
    for (std::size_t m = 0; m < 3; ++m) out.axis(m) /= ranges.axis(m);
    return out;
}

template <typename T>
AxisValues rmse(const Tensor<T>& truth, const Tensor<T>& pred, MetricMode mode) {
    detail::require_positions_pair(truth, pred);
    const std::size_t n = truth.extent(0);
    AxisValues out;
    for (std::size_t m = 0; m < 3; ++m) {
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d =
                static_cast<double>(truth.at(i, m)) - static_cast<double>(pred.at(i, m));
            acc += d * d;
        }
        out.axis(m) = mode == MetricMode::paper_literal
                          ? std::sqrt(acc) / static_cast<double>(n)
                          : std::sqrt(acc / static_cast<double>(n));
    }
    return out;
}

template <typename T>
AxisValues nrmse(const Tensor<T>& truth, const Tensor<T>& pred, MetricMode mode) {
    const AxisValues ranges = detail::checked_ranges(coordinate_ranges(truth));
    AxisValues out = rmse(truth, pred, mode);
    for (std::size_t m = 0; m < 3; ++m) out.axis(m) /= ranges.axis(m);
    return out;
}

// All four metric families from one (truth, prediction) pair.
struct MetricsReport {
    MetricMode mode = MetricMode::paper_literal;
    std::size_t n = 0;
    AxisValues ranges;
    AxisValues mae, nmae, rmse, nrmse;

    nlohmann::json to_json() const {
        auto axes = [](const AxisValues& v) {
            return nlohmann::json{{"x", v.x}, {"y", v.y}, {"z", v.z}, {"average", v.average()}};
        };
        return {{"mode", to_string(mode)},
                {"n", n},
                {"ranges", {{"x", ranges.x}, {"y", ranges.y}, {"z", ranges.z}}},
                {"mae", axes(mae)},
                {"nmae", axes(nmae)},
                {"rmse", axes(rmse)},
                {"nrmse", axes(nrmse)}};
    }

    static MetricsReport from_json(const nlohmann::json& j) {
        MetricsReport r;
        r.mode = parse_metric_mode(j.at("mode").get<std::string>());
        r.n = j.at("n").get<std::size_t>();
        auto axes = [&](const char* key) {
            const auto& a = j.at(key);
            return AxisValues{a.at("x").get<double>(), a.at("y").get<double>(),
                              a.at("z").get<double>()};
        };
        r.ranges = axes("ranges");
        r.mae = axes("mae");
        r.nmae = axes("nmae");
        r.rmse = axes("rmse");
        r.nrmse = axes("nrmse");
        return r;
    }

    // Long-form CSV: metric,axis,value,mode. Sample count and normalization
    // ranges ride along as pseudo-metrics so the file alone rebuilds the
    // report.
    std::string to_csv() const {
        std::ostringstream os;
        os.precision(17);
        const std::string m = to_string(mode);
        os << "metric,axis,value,mode\n";
        auto family = [&](const char* name, const AxisValues& v) {
            os << name << ",x," << v.x << ',' << m << '\n';
            os << name << ",y," << v.y << ',' << m << '\n';
            os << name << ",z," << v.z << ',' << m << '\n';
            os << name << ",average," << v.average() << ',' << m << '\n';
        };
        family("mae", mae);
        family("nmae", nmae);
        family("rmse", rmse);
        family("nrmse", nrmse);
        os << "range,x," << ranges.x << ',' << m << '\n';
        os << "range,y," << ranges.y << ',' << m << '\n';
        os << "range,z," << ranges.z << ',' << m << '\n';
        os << "n,all," << n << ',' << m << '\n';
        return os.str();
    }

    static MetricsReport from_csv(const std::string& text) {
        MetricsReport r;
        std::istringstream is(text);
        std::string line;
        if (!std::getline(is, line) || (line != "metric,axis,value,mode" &&
                                        line != "metric,axis,value,mode\r"))
            throw FormatError("metrics CSV: expected header 'metric,axis,value,mode'");
        std::size_t line_no = 1;
        while (std::getline(is, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            std::array<std::string, 4> f;
            std::size_t nf = 0, start = 0;
            for (std::size_t i = 0; i <= line.size(); ++i) {
                if (i == line.size() || line[i] == ',') {
                    if (nf == 4)
                        throw FormatError("metrics CSV line " + std::to_string(line_no) +
                                          ": too many columns");
                    f[nf++] = line.substr(start, i - start);
                    start = i + 1;
                }
            }
            if (nf != 4)
                throw FormatError("metrics CSV line " + std::to_string(line_no) +
                                  ": expected 4 columns");
            double value = 0;
            auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), value);
            if (ec != std::errc{} || ptr != f[2].data() + f[2].size())
                throw FormatError("metrics CSV line " + std::to_string(line_no) +
                                  ": cannot parse '" + f[2] + "' as a number");
            r.mode = parse_metric_mode(f[3]);
            auto put = [&](AxisValues& v) {
                if (f[1] == "x") v.x = value;
                else if (f[1] == "y") v.y = value;
                else if (f[1] == "z") v.z = value;
                else if (f[1] != "average")
                    throw FormatError("metrics CSV line " + std::to_string(line_no) +
                                      ": unknown axis '" + f[1] + "'");
            };
            if (f[0] == "mae") put(r.mae);
            else if (f[0] == "nmae") put(r.nmae);
            else if (f[0] == "rmse") put(r.rmse);
            else if (f[0] == "nrmse") put(r.nrmse);
            else if (f[0] == "range") put(r.ranges);
            else if (f[0] == "n") r.n = static_cast<std::size_t>(value);
            else
                throw FormatError("metrics CSV line " + std::to_string(line_no) +
                                  ": unknown metric '" + f[0] + "'");
        }
        return r;
    }
};

template <typename T>
MetricsReport compute_report(const Tensor<T>& truth, const Tensor<T>& pred, MetricMode mode) {
    MetricsReport r;
    r.mode = mode;
    r.n = truth.extent(0);
    r.ranges = detail::checked_ranges(coordinate_ranges(truth));
    r.mae = mae(truth, pred);
    r.nmae = nmae(truth, pred);
    r.rmse = rmse(truth, pred, mode);
    r.nrmse = nrmse(truth, pred, mode);
    return r;
}

} // namespace csiloc
