#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "csiloc/data.hpp"
#include "csiloc/io.hpp"
#include "csiloc/loss.hpp"
#include "csiloc/models.hpp"
#include "csiloc/optim.hpp"

namespace csiloc {

// One master seed fans out into independent streams so changing e.g. the
// batch order cannot perturb the weight init.
inline std::uint64_t derive_init_seed(std::uint64_t master) { return mix64(master, 1); }
inline std::uint64_t derive_split_seed(std::uint64_t master) { return mix64(master, 2); }
inline std::uint64_t derive_batch_seed(std::uint64_t master) { return mix64(master, 3); }

struct TrainConfig {
    std::size_t batch_size = 64;
    double learning_rate = 0.001;
    std::size_t max_epochs = 100;
    // Epochs without validation improvement before stopping; improvement
    // means beating the best validation loss by more than improvement_eps.
    std::size_t patience = 10;
    double improvement_eps = 1e-7;
    std::uint64_t seed = 0;
    bool encoder_frozen = true;
    bool standardize_features = false;
    bool standardize_targets = false;

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
        if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
        if (patience == 0) throw ConfigError("patience must be positive");
        if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
        if (improvement_eps < 0) throw ConfigError("improvement_eps must be non-negative");
    }

    nlohmann::json to_json() const {
        return {{"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"max_epochs", max_epochs},
                {"patience", patience},
                {"improvement_eps", improvement_eps},
                {"seed", seed},
                {"encoder_frozen", encoder_frozen},
                {"standardize_features", standardize_features},
                {"standardize_targets", standardize_targets}};
    }
};

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct EpochStat {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double seconds = 0; // wall time; the only nondeterministic column
};

struct TrainLog {
    std::vector<EpochStat> epochs; // epochs[0] holds the pre-training losses
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool aborted = false;
    std::string stop_reason; // max_epochs | early_stop | non_finite_loss
    std::vector<std::size_t> consumed_ids; // sorted unique train ids fed to gradient steps

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(17);
        os << "epoch,train_loss,val_loss,seconds\n";
        for (const auto& e : epochs)
            os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.seconds << '\n';
        return os.str();
    }

    nlohmann::json summary_json() const {
        return {{"best_epoch", best_epoch},
                {"best_val_loss", best_val_loss},
                {"epochs_run", epochs.empty() ? 0 : epochs.size() - 1},
                {"aborted", aborted},
                {"stop_reason", stop_reason}};
    }
};

// ---- checkpoints -------------------------------------------------------------

// In-memory parameter snapshot plus its manifest; persisted as a directory
// with manifest.json and one CSIT file per tensor.
template <typename T>
struct Checkpoint {
    nlohmann::json manifest;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

template <typename T>
Checkpoint<T> make_checkpoint(const std::vector<std::pair<std::string, Parameter<T>*>>& params,
                              nlohmann::json manifest_base) {
    Checkpoint<T> ckpt;
    ckpt.manifest = std::move(manifest_base);
    auto& entries = ckpt.manifest["tensors"] = nlohmann::json::array();
    for (const auto& [name, p] : params) {
        ckpt.tensors.emplace_back(name, p->value);
        entries.push_back({{"name", name}, {"shape", p->value.shape()}, {"file", name + ".csit"}});
    }
    return ckpt;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint<T>& ckpt) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "manifest.json", ckpt.manifest.dump(2) + "\n");
    for (const auto& [name, t] : ckpt.tensors) save_csit(dir / (name + ".csit"), t);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw IntegrityError("checkpoint '" + dir.string() + "': manifest.json missing");
    Checkpoint<T> ckpt;
    try {
        ckpt.manifest = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("checkpoint '" + dir.string() + "': bad manifest: " + e.what());
    }
    std::vector<std::string> problems;
    for (const auto& entry : ckpt.manifest.at("tensors")) {
        const auto name = entry.at("name").template get<std::string>();
        const auto file = entry.at("file").template get<std::string>();
        const auto shape = entry.at("shape").template get<std::vector<std::size_t>>();
        try {
            Tensor<T> t = load_csit<T>(dir / file);
            if (t.shape() != shape) {
                problems.push_back(name + ": manifest says " + shape_string(shape) + ", file has " +
                                   shape_string(t.shape()));
                continue;
            }
            ckpt.tensors.emplace_back(name, std::move(t));
        } catch (const FormatError& e) {
            problems.push_back(name + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint '" + dir.string() + "' integrity failure:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw IntegrityError(msg);
    }
    return ckpt;
}

// Copies checkpoint tensors into the given parameters; every parameter must
// be matched exactly. Reports all offending layers at once.
template <typename T>
void load_into(const Checkpoint<T>& ckpt,
               const std::vector<std::pair<std::string, Parameter<T>*>>& params,
               const std::string& prefix = "") {
    std::vector<std::string> problems;
    std::size_t matched = 0;
    for (const auto& [name, p] : params) {
        if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
        ++matched;
        const Tensor<T>* t = ckpt.find(name);
        if (!t) {
            problems.push_back(name + ": missing from checkpoint");
        } else if (t->shape() != p->value.shape()) {
            problems.push_back(name + ": checkpoint " + shape_string(t->shape()) + " vs model " +
                               shape_string(p->value.shape()));
        } else {
            p->value = *t;
        }
    }
    if (matched == 0) problems.push_back("no parameters matched prefix '" + prefix + "'");
    if (!problems.empty()) {
        std::string msg = "checkpoint load failure:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw IntegrityError(msg);
    }
}

// Pulls the pretrained encoder weights into a localizer.
template <typename T>
void load_encoder_from(const Checkpoint<T>& ckpt, Localizer<T>& loc) {
    load_into(ckpt, loc.named_params(), "encoder.");
}

// ---- target scaling ----------------------------------------------------------

// Optional per-axis standardization of the regression targets; predictions
// are mapped back to meters before metrics.
template <typename T>
struct TargetScaler {
    bool enabled = false;
    std::array<double, 3> mean{0, 0, 0};
    std::array<double, 3> stdev{1, 1, 1};

    static TargetScaler fit(const Tensor<T>& positions) {
        if (positions.ndim() != 2 || positions.extent(1) != 3)
            throw DimensionError("target scaler expects [n, 3], got " +
                                 shape_string(positions.shape()));
        TargetScaler s;
        s.enabled = true;
        const std::size_t n = positions.extent(0);
        for (std::size_t m = 0; m < 3; ++m) {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(positions.at(i, m));
            const double mu = acc / static_cast<double>(n);
            double var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = static_cast<double>(positions.at(i, m)) - mu;
                var += d * d;
            }
            s.mean[m] = mu;
            s.stdev[m] = std::max(std::sqrt(var / static_cast<double>(n)), 1e-8);
        }
        return s;
    }

    Tensor<T> transform(const Tensor<T>& p) const {
        if (!enabled) return p;
        Tensor<T> out = p;
        for (std::size_t i = 0; i < out.extent(0); ++i)
            for (std::size_t m = 0; m < 3; ++m)
                out.at(i, m) = static_cast<T>((static_cast<double>(out.at(i, m)) - mean[m]) / stdev[m]);
        return out;
    }

    Tensor<T> inverse(const Tensor<T>& p) const {
        if (!enabled) return p;
        Tensor<T> out = p;
        for (std::size_t i = 0; i < out.extent(0); ++i)
            for (std::size_t m = 0; m < 3; ++m)
                out.at(i, m) = static_cast<T>(static_cast<double>(out.at(i, m)) * stdev[m] + mean[m]);
        return out;
    }
};

// ---- split plumbing ----------------------------------------------------------

template <typename T>
struct PretrainSplits {
    UnlabeledDataset<T> train, val;
};

template <typename T>
PretrainSplits<T> pretrain_splits(const UnlabeledDataset<T>& ds, const TrainConfig& cfg) {
    auto parts = split(ds, SplitSpec{{0.8, 0.2}, derive_split_seed(cfg.seed)});
    return {std::move(parts[0]), std::move(parts[1])};
}

template <typename T>
struct FinetuneSplits {
    LabeledDataset<T> train, val, test;
};

template <typename T>
FinetuneSplits<T> finetune_splits(const LabeledDataset<T>& ds, const TrainConfig& cfg) {
    auto parts = split(ds, SplitSpec{{0.90, 0.05, 0.05}, derive_split_seed(cfg.seed)});
    return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

// ---- training loops ----------------------------------------------------------

namespace detail {

inline double elapsed_seconds(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// Shared epoch driver: epoch-0 evaluation, per-epoch shuffled minibatches,
// best-checkpoint snapshotting, early stopping, and abort on non-finite loss.
template <typename T, typename StepFn, typename EvalFn, typename SnapshotFn>
TrainLog run_epochs(const TrainConfig& cfg, std::size_t n_train, StepFn&& step, EvalFn&& eval,
                    SnapshotFn&& snapshot, const std::vector<std::size_t>& train_ids) {
    TrainLog log;
    std::set<std::size_t> consumed;

    auto t0 = std::chrono::steady_clock::now();
    const double init_train = eval(/*validation=*/false);
    const double init_val = eval(/*validation=*/true);
    log.epochs.push_back({0, init_train, init_val, elapsed_seconds(t0)});
    log.best_epoch = 0;
    log.best_val_loss = init_val;
    snapshot(0, init_val);

    std::size_t bad_epochs = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !log.aborted; ++epoch) {
        t0 = std::chrono::steady_clock::now();
        double loss_sum = 0;
        std::size_t seen = 0;
        for (const auto& batch : batch_indices(n_train, cfg.batch_size, derive_batch_seed(cfg.seed), epoch)) {
            double batch_loss = 0;
            bool ok = false;
            try {
                batch_loss = step(batch);
                ok = std::isfinite(batch_loss);
            } catch (const NumericError&) {
                ok = false;
            }
            for (std::size_t idx : batch) consumed.insert(train_ids[idx]);
            if (!ok) {
                log.aborted = true;
                log.stop_reason = "non_finite_loss";
                break;
            }
            loss_sum += batch_loss * static_cast<double>(batch.size());
            seen += batch.size();
        }
        if (log.aborted) {
            log.epochs.push_back({epoch, seen ? loss_sum / static_cast<double>(seen)
                                              : std::numeric_limits<double>::quiet_NaN(),
                                  std::numeric_limits<double>::quiet_NaN(), elapsed_seconds(t0)});
            break;
        }
        const double train_loss = loss_sum / static_cast<double>(seen);
        const double val_loss = eval(/*validation=*/true);
        log.epochs.push_back({epoch, train_loss, val_loss, elapsed_seconds(t0)});

        if (log.best_val_loss - val_loss > cfg.improvement_eps) {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            snapshot(epoch, val_loss);
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.patience) {
            log.stop_reason = "early_stop";
            break;
        }
    }
    if (log.stop_reason.empty()) log.stop_reason = "max_epochs";
    log.consumed_ids.assign(consumed.begin(), consumed.end());
    return log;
}

// Mean reconstruction/prediction loss over a whole split, forward-only.
template <typename T, typename LossFn>
double dataset_loss(std::size_t n, std::size_t batch_size, LossFn&& batch_loss) {
    double acc = 0;
    for (std::size_t at = 0; at < n; at += batch_size) {
        const std::size_t len = std::min(batch_size, n - at);
        std::vector<std::size_t> idx(len);
        std::iota(idx.begin(), idx.end(), at);
        acc += batch_loss(idx) * static_cast<double>(len);
    }
    return acc / static_cast<double>(n);
}

} // namespace detail

template <typename T>
struct PretrainResult {
    Checkpoint<T> checkpoint;
    TrainLog log;
};

// Reconstruction pretraining on an 8:2 train/validation split.
template <typename T>
PretrainResult<T> pretrain(Autoencoder<T>& ae, const UnlabeledDataset<T>& unlabeled,
                           const TrainConfig& cfg) {
    cfg.validate();
    auto splits = pretrain_splits(unlabeled, cfg);
    Standardizer<T> scaler;
    if (cfg.standardize_features) scaler = Standardizer<T>::fit(splits.train.features);
    const Tensor<T> train_x = scaler.apply(splits.train.features);
    const Tensor<T> val_x = scaler.apply(splits.val.features);

    auto params = ae.params();
    const AdamConfig adam{cfg.learning_rate};

    auto batch_loss = [&](const Tensor<T>& source, const std::vector<std::size_t>& idx) {
        const Tensor<T> x = gather_features(source, idx);
        const Tensor<T> r = ae.reconstruct(x);
        return mse_value(r, x);
    };
    auto eval = [&](bool validation) {
        const Tensor<T>& source = validation ? val_x : train_x;
        return detail::dataset_loss<T>(source.extent(0), cfg.batch_size,
                                       [&](const auto& idx) { return batch_loss(source, idx); });
    };
    auto step = [&](const std::vector<std::size_t>& idx) {
        const Tensor<T> x = gather_features(train_x, idx);
        Tensor<T> r = ae.forward_train(x);
        auto loss = mse_loss(r, x.reshaped(r.shape()));
        if (!std::isfinite(loss.value)) return loss.value;
        ae.backward(loss.grad);
        adam_step(params, adam);
        for (auto* p : params) p->zero_grad();
        return loss.value;
    };

    PretrainResult<T> result;
    nlohmann::json base{{"kind", "autoencoder"},
                        {"model", to_string(ae.spec.id)},
                        {"height", ae.spec.height},
                        {"width", ae.spec.width},
                        {"final_activation", ae.spec.final_activation},
                        {"standardize_features", cfg.standardize_features},
                        {"config_hash", fnv1a_hex(cfg.to_json().dump())}};
    auto snapshot = [&](std::size_t epoch, double val_loss) {
        nlohmann::json manifest = base;
        manifest["epoch"] = epoch;
        manifest["val_loss"] = val_loss;
        auto named = ae.named_params();
        if (scaler.enabled) {
            result.checkpoint = make_checkpoint(named, manifest);
            result.checkpoint.tensors.emplace_back("standardizer.mean", scaler.mean);
            result.checkpoint.tensors.emplace_back("standardizer.stdev", scaler.stdev);
            auto& entries = result.checkpoint.manifest["tensors"];
            entries.push_back({{"name", "standardizer.mean"},
                               {"shape", scaler.mean.shape()},
                               {"file", "standardizer.mean.csit"}});
            entries.push_back({{"name", "standardizer.stdev"},
                               {"shape", scaler.stdev.shape()},
                               {"file", "standardizer.stdev.csit"}});
        } else {
            result.checkpoint = make_checkpoint(named, manifest);
        }
    };

    result.log = detail::run_epochs<T>(cfg, splits.train.n(), step, eval, snapshot, splits.train.ids);
    result.checkpoint.manifest["best_epoch"] = result.log.best_epoch;
    result.checkpoint.manifest["stop_reason"] = result.log.stop_reason;
    // Leave the live model holding the best weights, not the last epoch's.
    load_into(result.checkpoint, ae.named_params());
    return result;
}

template <typename T>
struct FinetuneResult {
    Checkpoint<T> checkpoint;
    TrainLog log;
    LabeledDataset<T> test; // held-out split, untouched by training
    Standardizer<T> feature_scaler;
    TargetScaler<T> target_scaler;
};

// Supervised position training on a 90:5:5 train/val/test split. The encoder
// (when present) is expected to be preloaded; cfg.encoder_frozen decides
// whether it keeps training.
template <typename T>
FinetuneResult<T> finetune(Localizer<T>& loc, const LabeledDataset<T>& labeled,
                           const TrainConfig& cfg) {
    cfg.validate();
    auto splits = finetune_splits(labeled, cfg);
    loc.encoder_frozen = cfg.encoder_frozen;

    FinetuneResult<T> result;
    if (cfg.standardize_features)
        result.feature_scaler = Standardizer<T>::fit(splits.train.features);
    if (cfg.standardize_targets) result.target_scaler = TargetScaler<T>::fit(splits.train.positions);
    const Tensor<T> train_x = result.feature_scaler.apply(splits.train.features);
    const Tensor<T> val_x = result.feature_scaler.apply(splits.val.features);
    const Tensor<T> train_y = result.target_scaler.transform(splits.train.positions);
    const Tensor<T> val_y = result.target_scaler.transform(splits.val.positions);

    auto params = loc.trainable_params();
    const AdamConfig adam{cfg.learning_rate};

    auto eval = [&](bool validation) {
        const Tensor<T>& xs = validation ? val_x : train_x;
        const Tensor<T>& ys = validation ? val_y : train_y;
        return detail::dataset_loss<T>(xs.extent(0), cfg.batch_size, [&](const auto& idx) {
            return mse_value(loc.predict(gather_features(xs, idx)), gather_rows(ys, idx));
        });
    };
    auto step = [&](const std::vector<std::size_t>& idx) {
        const Tensor<T> x = gather_features(train_x, idx);
        const Tensor<T> y = gather_rows(train_y, idx);
        Tensor<T> pred = loc.forward_train(x);
        auto loss = mse_loss(pred, y);
        if (!std::isfinite(loss.value)) return loss.value;
        loc.backward(loss.grad);
        adam_step(params, adam);
        for (auto* p : params) p->zero_grad();
        return loss.value;
    };

    nlohmann::json base{{"kind", "localizer"},
                        {"model", to_string(loc.spec.id)},
                        {"height", loc.spec.height},
                        {"width", loc.spec.width},
                        {"encoder_frozen", cfg.encoder_frozen},
                        {"standardize_features", cfg.standardize_features},
                        {"standardize_targets", cfg.standardize_targets},
                        {"config_hash", fnv1a_hex(cfg.to_json().dump())}};
    auto snapshot = [&](std::size_t epoch, double val_loss) {
        nlohmann::json manifest = base;
        manifest["epoch"] = epoch;
        manifest["val_loss"] = val_loss;
        result.checkpoint = make_checkpoint(loc.named_params(), manifest);
        auto& entries = result.checkpoint.manifest["tensors"];
        if (result.feature_scaler.enabled) {
            result.checkpoint.tensors.emplace_back("standardizer.mean", result.feature_scaler.mean);
            result.checkpoint.tensors.emplace_back("standardizer.stdev", result.feature_scaler.stdev);
            entries.push_back({{"name", "standardizer.mean"},
                               {"shape", result.feature_scaler.mean.shape()},
                               {"file", "standardizer.mean.csit"}});
            entries.push_back({{"name", "standardizer.stdev"},
                               {"shape", result.feature_scaler.stdev.shape()},
                               {"file", "standardizer.stdev.csit"}});
        }
        if (result.target_scaler.enabled) {
            // kept in the manifest: JSON round-trips the doubles exactly,
            // a float32 tensor would not
            result.checkpoint.manifest["target_scaler"] = {
                {"mean", result.target_scaler.mean}, {"stdev", result.target_scaler.stdev}};
        }
    };

    result.log = detail::run_epochs<T>(cfg, splits.train.n(), step, eval, snapshot, splits.train.ids);
    result.checkpoint.manifest["best_epoch"] = result.log.best_epoch;
    result.checkpoint.manifest["stop_reason"] = result.log.stop_reason;
    load_into(result.checkpoint, loc.named_params());
    result.test = std::move(splits.test);
    return result;
}

// Forward-only predictions, one sample at a time so the result is identical
// for any thread count. Features are [n, h, w].
template <typename T>
Tensor<T> evaluate(const Localizer<T>& loc, const Tensor<T>& features, std::size_t threads = 1) {
    if (features.ndim() != 3)
        throw DimensionError("evaluate expects features [n, h, w], got " +
                             shape_string(features.shape()));
    const std::size_t n = features.extent(0), h = features.extent(1), w = features.extent(2);
    Tensor<T> pred({n, 3});
    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Tensor<T> x({1, 1, h, w});
            std::copy_n(features.data() + i * h * w, h * w, x.data());
            const Tensor<T> y = loc.predict(x);
            for (std::size_t m = 0; m < 3; ++m) pred.at(i, m) = y.data()[m];
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        worker(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
            if (begin < end) pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return pred;
}

// Rebuild scalers persisted inside a checkpoint (absent entries leave them
// disabled).
template <typename T>
Standardizer<T> checkpoint_feature_scaler(const Checkpoint<T>& ckpt) {
    Standardizer<T> s;
    const Tensor<T>* mean = ckpt.find("standardizer.mean");
    const Tensor<T>* stdev = ckpt.find("standardizer.stdev");
    if (mean && stdev) {
        s.enabled = true;
        s.mean = *mean;
        s.stdev = *stdev;
    }
    return s;
}

template <typename T>
TargetScaler<T> checkpoint_target_scaler(const Checkpoint<T>& ckpt) {
    TargetScaler<T> s;
    if (ckpt.manifest.contains("target_scaler")) {
        const auto& j = ckpt.manifest.at("target_scaler");
        s.enabled = true;
        s.mean = j.at("mean").template get<std::array<double, 3>>();
        s.stdev = j.at("stdev").template get<std::array<double, 3>>();
    }
    return s;
}

} // namespace csiloc
