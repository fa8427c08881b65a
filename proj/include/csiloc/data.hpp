#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "csiloc/io.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/tensor.hpp"

namespace csiloc {

// Sample ids identify rows across splits so provenance can be audited; they
// index into the dataset the samples were first loaded or generated from.
template <typename T>
struct UnlabeledDataset {
    Tensor<T> features; // [n, h, w]
    std::vector<std::size_t> ids;

    std::size_t n() const { return features.extent(0); }
    std::size_t height() const { return features.extent(1); }
    std::size_t width() const { return features.extent(2); }
};

template <typename T>
struct LabeledDataset {
    Tensor<T> features;  // [n, h, w]
    Tensor<T> positions; // [n, 3]
    std::vector<std::size_t> ids;

    std::size_t n() const { return features.extent(0); }
    std::size_t height() const { return features.extent(1); }
    std::size_t width() const { return features.extent(2); }
};

namespace detail {

inline std::vector<std::size_t> iota_ids(std::size_t n) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
    const auto& d = t.values();
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!std::isfinite(static_cast<double>(d[i])))
            throw FormatError(what + ": non-finite value at flat index " + std::to_string(i));
}

} // namespace detail

template <typename T>
UnlabeledDataset<T> make_unlabeled(Tensor<T> features) {
    if (features.ndim() != 3)
        throw DimensionError("unlabeled features must be [n, h, w], got " +
                             shape_string(features.shape()));
    const std::size_t n = features.extent(0);
    return {std::move(features), detail::iota_ids(n)};
}

template <typename T>
LabeledDataset<T> make_labeled(Tensor<T> features, Tensor<T> positions) {
    if (features.ndim() != 3)
        throw DimensionError("labeled features must be [n, h, w], got " +
                             shape_string(features.shape()));
    if (positions.ndim() != 2 || positions.extent(1) != 3)
        throw DimensionError("positions must be [n, 3], got " + shape_string(positions.shape()));
    if (features.extent(0) != positions.extent(0))
        throw DimensionError("feature/position count mismatch: " +
                             std::to_string(features.extent(0)) + " vs " +
                             std::to_string(positions.extent(0)));
    const std::size_t n = features.extent(0);
    return {std::move(features), std::move(positions), detail::iota_ids(n)};
}

// Collapse repeated measurements: [n, h, w, m] -> [n, h, w] by averaging the
// trailing dimension.
template <typename T>
Tensor<T> average_measurements(const Tensor<T>& raw) {
    if (raw.ndim() != 4)
        throw DimensionError("expected raw measurements [n, h, w, m], got " +
                             shape_string(raw.shape()));
    const std::size_t n = raw.extent(0), h = raw.extent(1), w = raw.extent(2), m = raw.extent(3);
    Tensor<T> out({n, h, w});
    const T* src = raw.data();
    T* dst = out.data();
    const std::size_t cells = n * h * w;
    for (std::size_t c = 0; c < cells; ++c) {
        double acc = 0;
        for (std::size_t k = 0; k < m; ++k) acc += static_cast<double>(src[c * m + k]);
        dst[c] = static_cast<T>(acc / static_cast<double>(m));
    }
    return out;
}

// ---- splits ----------------------------------------------------------------

struct SplitSpec {
    std::vector<double> ratios; // must sum to 1
    std::uint64_t seed = 0;
};

// Floor allocation with the remainder going to the first split; every split
// must end up non-empty.
inline std::vector<std::size_t> split_sizes(std::size_t n, const std::vector<double>& ratios) {
    if (ratios.empty()) throw ConfigError("split needs at least one ratio");
    double sum = 0;
    for (double r : ratios) {
        if (!(r > 0)) throw ConfigError("split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split ratios must sum to 1, got " + std::to_string(sum));
    std::vector<std::size_t> sizes(ratios.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        sizes[i] = static_cast<std::size_t>(std::floor(ratios[i] * static_cast<double>(n)));
        assigned += sizes[i];
    }
    sizes[0] += n - assigned;
    for (std::size_t i = 0; i < sizes.size(); ++i)
        if (sizes[i] == 0)
            throw ConfigError("split " + std::to_string(i) + " would be empty with n=" +
                              std::to_string(n));
    return sizes;
}

// Shuffled index blocks, one per ratio.
inline std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitSpec& spec) {
    const auto sizes = split_sizes(n, spec.ratios);
    auto perm = identity_permutation(n);
    Rng rng(spec.seed);
    rng.shuffle(perm);
    std::vector<std::vector<std::size_t>> out(sizes.size());
    std::size_t at = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        out[i].assign(perm.begin() + static_cast<std::ptrdiff_t>(at),
                      perm.begin() + static_cast<std::ptrdiff_t>(at + sizes[i]));
        at += sizes[i];
    }
    return out;
}

namespace detail {

template <typename T>
Tensor<T> take_rows3(const Tensor<T>& t, const std::vector<std::size_t>& idx) {
    const std::size_t h = t.extent(1), w = t.extent(2), stride = h * w;
    Tensor<T> out({idx.size(), h, w});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(t.data() + idx[i] * stride, stride, out.data() + i * stride);
    return out;
}

template <typename T>
Tensor<T> take_rows2(const Tensor<T>& t, const std::vector<std::size_t>& idx) {
    const std::size_t k = t.extent(1);
    Tensor<T> out({idx.size(), k});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(t.data() + idx[i] * k, k, out.data() + i * k);
    return out;
}

inline std::vector<std::size_t> take_ids(const std::vector<std::size_t>& ids,
                                         const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ids[idx[i]];
    return out;
}

} // namespace detail

template <typename T>
std::vector<UnlabeledDataset<T>> split(const UnlabeledDataset<T>& ds, const SplitSpec& spec) {
    std::vector<UnlabeledDataset<T>> out;
    for (const auto& idx : split_indices(ds.n(), spec))
        out.push_back({detail::take_rows3(ds.features, idx), detail::take_ids(ds.ids, idx)});
    return out;
}

template <typename T>
std::vector<LabeledDataset<T>> split(const LabeledDataset<T>& ds, const SplitSpec& spec) {
    std::vector<LabeledDataset<T>> out;
    for (const auto& idx : split_indices(ds.n(), spec))
        out.push_back({detail::take_rows3(ds.features, idx), detail::take_rows2(ds.positions, idx),
                       detail::take_ids(ds.ids, idx)});
    return out;
}

// ---- batching --------------------------------------------------------------

// Shuffled minibatch index lists; the shuffle is keyed on (seed, epoch) so
// every epoch reorders differently yet reproducibly. The final batch may be
// short.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed, std::size_t epoch) {
    if (n == 0) throw ConfigError("cannot batch an empty dataset");
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    auto perm = identity_permutation(n);
    Rng rng(mix64(seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(perm);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < n; at += batch_size) {
        const std::size_t len = std::min(batch_size, n - at);
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(at),
                             perm.begin() + static_cast<std::ptrdiff_t>(at + len));
    }
    return batches;
}

// [n, h, w] rows -> [b, 1, h, w] model input.
template <typename T>
Tensor<T> gather_features(const Tensor<T>& features, const std::vector<std::size_t>& idx) {
    auto rows = detail::take_rows3(features, idx);
    return rows.reshaped({idx.size(), 1, features.extent(1), features.extent(2)});
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& mat, const std::vector<std::size_t>& idx) {
    return detail::take_rows2(mat, idx);
}

// ---- standardization -------------------------------------------------------

// Per-cell (x - mean) / std over the sample axis. Disabled instances pass
// data through untouched so callers never need to branch.
template <typename T>
struct Standardizer {
    bool enabled = false;
    Tensor<T> mean{std::vector<std::size_t>{1}};  // [h, w] when enabled
    Tensor<T> stdev{std::vector<std::size_t>{1}};

    static Standardizer fit(const Tensor<T>& features) {
        if (features.ndim() != 3)
            throw DimensionError("standardizer expects [n, h, w], got " +
                                 shape_string(features.shape()));
        const std::size_t n = features.extent(0), h = features.extent(1), w = features.extent(2);
        Standardizer s;
        s.enabled = true;
        s.mean = Tensor<T>({h, w});
        s.stdev = Tensor<T>({h, w});
        const T* src = features.data();
        for (std::size_t c = 0; c < h * w; ++c) {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(src[i * h * w + c]);
            const double mu = acc / static_cast<double>(n);
            double var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = static_cast<double>(src[i * h * w + c]) - mu;
                var += d * d;
            }
            // Floor keeps constant cells finite: they standardize to 0.
            const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-8);
            s.mean.data()[c] = static_cast<T>(mu);
            s.stdev.data()[c] = static_cast<T>(sd);
        }
        return s;
    }

    // Accepts any tensor whose trailing extents are [h, w].
    Tensor<T> apply(const Tensor<T>& x) const {
        if (!enabled) return x;
        const std::size_t cells = mean.size();
        if (x.size() % cells != 0 || x.ndim() < 2 ||
            x.extent(x.ndim() - 1) != mean.extent(1) || x.extent(x.ndim() - 2) != mean.extent(0))
            throw DimensionError("standardizer fitted on " + shape_string(mean.shape()) +
                                 " cannot apply to " + shape_string(x.shape()));
        Tensor<T> out = x;
        T* d = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            const std::size_t c = i % cells;
            d[i] = (d[i] - mean.data()[c]) / stdev.data()[c];
        }
        return out;
    }
};

// ---- synthetic corpus ------------------------------------------------------

// A fixed random radio map built from K sinusoidal components; features vary
// smoothly with position so a position can in principle be decoded back out.
struct SyntheticConfig {
    std::size_t n_unlabeled = 2000;
    std::size_t n_labeled = 500;
    std::size_t height = 16;
    std::size_t width = 32;
    std::array<double, 3> area = {646.0, 943.0, 41.0};
    double noise_std = 0.05;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_unlabeled == 0) throw ConfigError("n_unlabeled must be at least 1");
        if (n_labeled == 0) throw ConfigError("n_labeled must be at least 1");
        if (height < 4 || width < 4)
            throw ConfigError("synthetic feature extents must be at least 4x4, got " +
                              std::to_string(height) + "x" + std::to_string(width));
        for (double a : area)
            if (!(a > 0)) throw ConfigError("area extents must be positive");
        if (noise_std < 0) throw ConfigError("noise_std must be non-negative");
    }
};

template <typename T>
class SyntheticMap {
public:
    static constexpr std::size_t components = 8;

    static SyntheticMap create(const SyntheticConfig& cfg) {
        SyntheticMap map;
        map.h_ = cfg.height;
        map.w_ = cfg.width;
        Rng rng(mix64(cfg.seed, 1));
        constexpr double two_pi = 2.0 * std::numbers::pi;
        for (std::size_t k = 0; k < components; ++k) {
            map.amp_[k] = rng.uniform(0.3, 0.9);
            for (std::size_t d = 0; d < 3; ++d)
                map.omega_[k][d] = two_pi * rng.uniform(0.25, 1.25) / cfg.area[d];
            map.row_coef_[k] = rng.uniform(0.5, 2.0);
            map.col_coef_[k] = rng.uniform(0.5, 2.0);
            map.phase_[k] = rng.uniform(0.0, two_pi);
        }
        return map;
    }

    // Noise-free feature image for one position, written to out[h*w].
    void features_at(const std::array<double, 3>& p, T* out) const {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        std::fill_n(out, h_ * w_, T{});
        for (std::size_t k = 0; k < components; ++k) {
            double theta = phase_[k];
            for (std::size_t d = 0; d < 3; ++d) theta += omega_[k][d] * p[d];
            for (std::size_t i = 0; i < h_; ++i) {
                const double row_phase =
                    theta + two_pi * row_coef_[k] * static_cast<double>(i) / static_cast<double>(h_);
                for (std::size_t j = 0; j < w_; ++j) {
                    const double cell_phase =
                        row_phase +
                        two_pi * col_coef_[k] * static_cast<double>(j) / static_cast<double>(w_);
                    out[i * w_ + j] += static_cast<T>(amp_[k] * std::cos(cell_phase));
                }
            }
        }
    }

private:
    std::size_t h_ = 0, w_ = 0;
    std::array<double, components> amp_{};
    std::array<std::array<double, 3>, components> omega_{};
    std::array<double, components> row_coef_{};
    std::array<double, components> col_coef_{};
    std::array<double, components> phase_{};
};

template <typename T>
struct SyntheticCorpus {
    UnlabeledDataset<T> unlabeled;
    LabeledDataset<T> labeled;
};

// Unlabeled and labeled samples drawn from the same map, with independent
// position/noise streams so either count can change without perturbing the
// map itself.
template <typename T>
SyntheticCorpus<T> generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const auto map = SyntheticMap<T>::create(cfg);
    Rng pos_rng(mix64(cfg.seed, 2));
    Rng noise_rng(mix64(cfg.seed, 3));
    const std::size_t h = cfg.height, w = cfg.width, cells = h * w;

    auto draw_position = [&] {
        return std::array<double, 3>{pos_rng.uniform(0.0, cfg.area[0]),
                                     pos_rng.uniform(0.0, cfg.area[1]),
                                     pos_rng.uniform(0.0, cfg.area[2])};
    };
    auto render = [&](const std::array<double, 3>& p, T* out) {
        map.features_at(p, out);
        if (cfg.noise_std > 0)
            for (std::size_t c = 0; c < cells; ++c)
                out[c] += static_cast<T>(cfg.noise_std * noise_rng.normal());
    };

    SyntheticCorpus<T> corpus;
    corpus.unlabeled.features = Tensor<T>({cfg.n_unlabeled, h, w});
    corpus.unlabeled.ids = detail::iota_ids(cfg.n_unlabeled);
    for (std::size_t i = 0; i < cfg.n_unlabeled; ++i)
        render(draw_position(), corpus.unlabeled.features.data() + i * cells);

    corpus.labeled.features = Tensor<T>({cfg.n_labeled, h, w});
    corpus.labeled.positions = Tensor<T>({cfg.n_labeled, 3});
    corpus.labeled.ids = detail::iota_ids(cfg.n_labeled);
    for (std::size_t i = 0; i < cfg.n_labeled; ++i) {
        const auto p = draw_position();
        render(p, corpus.labeled.features.data() + i * cells);
        for (std::size_t d = 0; d < 3; ++d)
            corpus.labeled.positions.at(i, d) = static_cast<T>(p[d]);
    }
    return corpus;
}

// ---- dataset files ----------------------------------------------------------

// Features arrive either pre-averaged [n, h, w] or as raw repeated
// measurements [n, h, w, m], which are averaged on load.
template <typename T>
Tensor<T> load_features(const std::filesystem::path& path) {
    Tensor<T> t = load_csit<T>(path);
    if (t.ndim() == 4) t = average_measurements(t);
    if (t.ndim() != 3)
        throw DimensionError("features in '" + path.string() + "' must be [n, h, w] or [n, h, w, m], got " +
                             shape_string(t.shape()));
    detail::require_finite(t, "'" + path.string() + "'");
    return t;
}

template <typename T>
UnlabeledDataset<T> load_unlabeled(const std::filesystem::path& features_path) {
    return make_unlabeled(load_features<T>(features_path));
}

template <typename T>
LabeledDataset<T> load_labeled(const std::filesystem::path& features_path,
                               const std::filesystem::path& positions_path) {
    auto features = load_features<T>(features_path);
    auto positions = load_positions_csv<T>(positions_path);
    return make_labeled(std::move(features), std::move(positions));
}

template <typename T>
void save_unlabeled(const std::filesystem::path& features_path, const UnlabeledDataset<T>& ds) {
    save_csit(features_path, ds.features);
}

template <typename T>
void save_labeled(const std::filesystem::path& features_path,
                  const std::filesystem::path& positions_path, const LabeledDataset<T>& ds) {
    save_csit(features_path, ds.features);
    save_positions_csv(positions_path, ds.positions);
}

} // namespace csiloc
