// csiloc — channel-feature localization pipeline driver.
//
// Subcommands: synth, pretrain, finetune, evaluate, gradcheck, report.
// Exit codes: 0 success, 2 configuration error, 3 data/format error,
// 4 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "csiloc/csiloc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t threads_from_env() {
    const char* s = std::getenv("CSILOC_THREADS");
    if (!s || !*s) return 1;
    char* end = nullptr;
    const unsigned long v = std::strtoul(s, &end, 10);
    if (!end || *end != '\0' || v == 0)
        throw csiloc::ConfigError("CSILOC_THREADS must be a positive integer, got '" +
                                  std::string(s) + "'");
    return static_cast<std::size_t>(v);
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::string text;
    try {
        text = csiloc::read_text_file(path);
    } catch (const csiloc::FormatError& e) {
        throw csiloc::ConfigError(std::string("config file: ") + e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw csiloc::ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object())
        throw csiloc::ConfigError("config file '" + path + "' must hold a JSON object");
    return j;
}

// Flag > config file > default, with every resolved value echoed.
class Resolver {
public:
    Resolver(CLI::App* cmd, json file) : cmd_(cmd), file_(std::move(file)) {
        resolved_["command"] = cmd->get_name();
    }

    template <typename V>
    V get(const std::string& flag, const std::string& key, const V& flag_value, const V& fallback) {
        V v = fallback;
        if (file_.contains(key)) {
            try {
                v = file_.at(key).get<V>();
            } catch (const json::exception& e) {
                throw csiloc::ConfigError("config key '" + key + "': " + e.what());
            }
        }
        // not every shared key is a flag on every subcommand
        const CLI::Option* opt = flag.empty() ? nullptr : cmd_->get_option_no_throw(flag);
        if (opt && opt->count() > 0) v = flag_value;
        resolved_[key] = v;
        return v;
    }

    void note(const std::string& key, const json& v) { resolved_[key] = v; }

    const json& resolved() const { return resolved_; }

    void echo(const fs::path& out_dir) const {
        fs::create_directories(out_dir);
        csiloc::write_text_file(out_dir / "config.resolved.json", resolved_.dump(2) + "\n");
    }

private:
    CLI::App* cmd_;
    json file_;
    json resolved_;
};

void write_error_csv(const fs::path& path, const csiloc::Tensor<float>& truth,
                     const csiloc::Tensor<float>& pred) {
    std::string text = "index,ex,ey,ez,euclidean\n";
    char buf[160];
    for (std::size_t i = 0; i < truth.extent(0); ++i) {
        double e[3], norm = 0;
        for (std::size_t m = 0; m < 3; ++m) {
            e[m] = static_cast<double>(pred.at(i, m)) - static_cast<double>(truth.at(i, m));
            norm += e[m] * e[m];
        }
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", i, e[0], e[1], e[2],
                      std::sqrt(norm));
        text += buf;
    }
    csiloc::write_text_file(path, text);
}

// ---- synth --------------------------------------------------------------------

struct SynthArgs {
    std::string config, out;
    std::uint64_t seed = 1;
    std::size_t n_unlabeled = 2000, n_labeled = 500, height = 16, width = 32;
    std::vector<double> area;
    double noise_std = 0.05;
};

int run_synth(CLI::App* cmd, const SynthArgs& a) {
    Resolver r(cmd, load_config_file(a.config));
    csiloc::SyntheticConfig cfg;
    cfg.seed = r.get<std::uint64_t>("--seed", "seed", a.seed, cfg.seed);
    cfg.n_unlabeled = r.get<std::size_t>("--n-unlabeled", "n_unlabeled", a.n_unlabeled, cfg.n_unlabeled);
    cfg.n_labeled = r.get<std::size_t>("--n-labeled", "n_labeled", a.n_labeled, cfg.n_labeled);
    cfg.height = r.get<std::size_t>("--height", "height", a.height, cfg.height);
    cfg.width = r.get<std::size_t>("--width", "width", a.width, cfg.width);
    cfg.noise_std = r.get<double>("--noise", "noise_std", a.noise_std, cfg.noise_std);
    const auto area = r.get<std::vector<double>>(
        "--area", "area", a.area, {cfg.area[0], cfg.area[1], cfg.area[2]});
    if (area.size() != 3) throw csiloc::ConfigError("area needs exactly 3 extents");
    for (std::size_t d = 0; d < 3; ++d) cfg.area[d] = area[d];
    cfg.validate();

    const auto corpus = csiloc::generate_synthetic<float>(cfg);
    const fs::path out(a.out);
    fs::create_directories(out);
    csiloc::save_csit(out / "unlabeled.csit", corpus.unlabeled.features);
    csiloc::save_csit(out / "labeled.csit", corpus.labeled.features);
    csiloc::save_positions_csv(out / "positions.csv", corpus.labeled.positions);
    r.echo(out);
    std::printf("synth: %zu unlabeled + %zu labeled samples of %zux%zu -> %s\n", cfg.n_unlabeled,
                cfg.n_labeled, cfg.height, cfg.width, out.string().c_str());
    return 0;
}

// ---- shared training plumbing ---------------------------------------------------

struct TrainArgs {
    std::string config, out, model;
    std::uint64_t seed = 0;
    std::size_t batch_size = 64, max_epochs = 100, patience = 10;
    double learning_rate = 0.001;
    bool standardize_features = false, standardize_targets = false;
    bool no_final_activation = false;
    bool unfreeze_encoder = false;
};

csiloc::TrainConfig resolve_train_config(Resolver& r, const TrainArgs& a) {
    csiloc::TrainConfig tc;
    tc.seed = r.get<std::uint64_t>("--seed", "seed", a.seed, tc.seed);
    tc.batch_size = r.get<std::size_t>("--batch-size", "batch_size", a.batch_size, tc.batch_size);
    tc.learning_rate = r.get<double>("--lr", "learning_rate", a.learning_rate, tc.learning_rate);
    tc.max_epochs = r.get<std::size_t>("--max-epochs", "max_epochs", a.max_epochs, tc.max_epochs);
    tc.patience = r.get<std::size_t>("--patience", "patience", a.patience, tc.patience);
    tc.encoder_frozen =
        !r.get<bool>("--unfreeze-encoder", "unfreeze_encoder", a.unfreeze_encoder, false);
    tc.standardize_features = r.get<bool>("--standardize-features", "standardize_features",
                                          a.standardize_features, false);
    tc.standardize_targets =
        r.get<bool>("--standardize-targets", "standardize_targets", a.standardize_targets, false);
    tc.validate();
    return tc;
}

// ---- pretrain -------------------------------------------------------------------

struct PretrainArgs : TrainArgs {
    std::string unlabeled;
};

int run_pretrain(CLI::App* cmd, const PretrainArgs& a) {
    Resolver r(cmd, load_config_file(a.config));
    const auto model_str = r.get<std::string>("--model", "model", a.model, "");
    if (model_str.empty()) throw csiloc::ConfigError("missing --model");
    const auto model = csiloc::parse_model_id(model_str);
    const auto tc = resolve_train_config(r, a);
    const auto unlabeled_path = r.get<std::string>("--unlabeled", "unlabeled", a.unlabeled, "");
    const bool final_act =
        !r.get<bool>("--no-final-activation", "no_final_activation", a.no_final_activation, false);
    if (unlabeled_path.empty()) throw csiloc::ConfigError("pretrain needs --unlabeled <file.csit>");

    auto ds = csiloc::load_unlabeled<float>(unlabeled_path);
    csiloc::ModelSpec spec{model, ds.height(), ds.width(), final_act};
    r.note("height", spec.height);
    r.note("width", spec.width);
    auto ae = csiloc::build_autoencoder<float>(spec, csiloc::derive_init_seed(tc.seed));

    auto result = csiloc::pretrain(ae, ds, tc);
    const fs::path out(a.out);
    csiloc::save_checkpoint(out / "checkpoint", result.checkpoint);
    csiloc::write_text_file(out / "trainlog.csv", result.log.to_csv());
    r.echo(out);
    std::printf("pretrain %s: best epoch %zu, val loss %.6g, stop: %s\n",
                csiloc::to_string(model).c_str(), result.log.best_epoch, result.log.best_val_loss,
                result.log.stop_reason.c_str());
    if (result.log.aborted) {
        std::fprintf(stderr, "error: training aborted on non-finite loss; best checkpoint kept\n");
        return 4;
    }
    return 0;
}

// ---- finetune -------------------------------------------------------------------

struct FinetuneArgs : TrainArgs {
    std::string features, positions, pretrained;
};

int run_finetune(CLI::App* cmd, const FinetuneArgs& a) {
    Resolver r(cmd, load_config_file(a.config));
    const auto model_str = r.get<std::string>("--model", "model", a.model, "");
    if (model_str.empty()) throw csiloc::ConfigError("missing --model");
    const auto model = csiloc::parse_model_id(model_str);
    const auto tc = resolve_train_config(r, a);
    const auto features_path = r.get<std::string>("--features", "features", a.features, "");
    const auto positions_path = r.get<std::string>("--positions", "positions", a.positions, "");
    const auto pretrained = r.get<std::string>("--pretrained", "pretrained", a.pretrained, "");
    if (features_path.empty() || positions_path.empty())
        throw csiloc::ConfigError("finetune needs --features <file.csit> and --positions <file.csv>");

    const bool has_encoder = model == csiloc::ModelId::m3 || model == csiloc::ModelId::m4;
    if (has_encoder && pretrained.empty())
        throw csiloc::ConfigError("model " + csiloc::to_string(model) +
                                  " needs --pretrained <checkpoint dir> from a pretraining run");
    if (!has_encoder && !pretrained.empty())
        throw csiloc::ConfigError("--pretrained is only valid for m3/m4; " +
                                  csiloc::to_string(model) + " trains supervised from scratch");

    auto ds = csiloc::load_labeled<float>(features_path, positions_path);
    csiloc::ModelSpec spec{model, ds.height(), ds.width()};
    r.note("height", spec.height);
    r.note("width", spec.width);
    auto loc = csiloc::build_localizer<float>(spec, csiloc::derive_init_seed(tc.seed));
    if (has_encoder) {
        const auto ckpt = csiloc::load_checkpoint<float>(pretrained);
        csiloc::load_encoder_from(ckpt, loc);
    }

    auto result = csiloc::finetune(loc, ds, tc);
    const fs::path out(a.out);
    csiloc::save_checkpoint(out / "checkpoint", result.checkpoint);
    csiloc::write_text_file(out / "trainlog.csv", result.log.to_csv());

    // Best weights are restored into `loc`; score the held-out split.
    const auto feats = result.feature_scaler.apply(result.test.features);
    auto preds = csiloc::evaluate(loc, feats, threads_from_env());
    preds = result.target_scaler.inverse(preds);
    csiloc::save_positions_csv(out / "predictions.csv", preds);
    csiloc::save_positions_csv(out / "test_positions.csv", result.test.positions);
    std::string ids_text = "id\n";
    for (std::size_t id : result.log.consumed_ids) ids_text += std::to_string(id) + "\n";
    csiloc::write_text_file(out / "consumed_ids.csv", ids_text);
    r.echo(out);

    std::printf("finetune %s: best epoch %zu, val loss %.6g, stop: %s, test size %zu\n",
                csiloc::to_string(model).c_str(), result.log.best_epoch, result.log.best_val_loss,
                result.log.stop_reason.c_str(), result.test.n());
    if (result.log.aborted) {
        std::fprintf(stderr, "error: training aborted on non-finite loss; best checkpoint kept\n");
        return 4;
    }
    return 0;
}

// ---- evaluate -------------------------------------------------------------------

struct EvaluateArgs {
    std::string config, out, mode = "paper-literal";
    std::string pred, truth;
    std::string checkpoint, features, positions;
};

int run_evaluate(CLI::App* cmd, const EvaluateArgs& a) {
    Resolver r(cmd, load_config_file(a.config));
    // validated up front, even for the CSV path that never spawns threads
    const std::size_t threads = threads_from_env();
    const auto mode =
        csiloc::parse_metric_mode(r.get<std::string>("--mode", "mode", a.mode, "paper-literal"));
    const auto pred_path = r.get<std::string>("--pred", "pred", a.pred, "");
    const auto truth_path = r.get<std::string>("--truth", "truth", a.truth, "");
    const auto ckpt_path = r.get<std::string>("--checkpoint", "checkpoint", a.checkpoint, "");
    const auto features_path = r.get<std::string>("--features", "features", a.features, "");
    const auto positions_path = r.get<std::string>("--positions", "positions", a.positions, "");

    csiloc::Tensor<float> truth, pred;
    if (!pred_path.empty()) {
        if (truth_path.empty())
            throw csiloc::ConfigError("evaluate --pred also needs --truth <positions.csv>");
        if (!ckpt_path.empty())
            throw csiloc::ConfigError("evaluate takes either --pred/--truth or "
                                      "--checkpoint/--features/--positions, not both");
        pred = csiloc::load_positions_csv<float>(pred_path);
        truth = csiloc::load_positions_csv<float>(truth_path);
    } else {
        if (ckpt_path.empty() || features_path.empty() || positions_path.empty())
            throw csiloc::ConfigError(
                "evaluate needs --pred/--truth, or --checkpoint with --features/--positions");
        const auto ckpt = csiloc::load_checkpoint<float>(ckpt_path);
        if (ckpt.manifest.value("kind", "") != "localizer")
            throw csiloc::IntegrityError("checkpoint '" + ckpt_path +
                                         "' is not a localizer checkpoint");
        csiloc::ModelSpec spec{csiloc::parse_model_id(ckpt.manifest.at("model").get<std::string>()),
                               ckpt.manifest.at("height").get<std::size_t>(),
                               ckpt.manifest.at("width").get<std::size_t>()};
        auto loc = csiloc::build_localizer<float>(spec, 0);
        csiloc::load_into(ckpt, loc.named_params());
        auto feats = csiloc::load_features<float>(features_path);
        feats = csiloc::checkpoint_feature_scaler(ckpt).apply(feats);
        pred = csiloc::evaluate(loc, feats, threads);
        pred = csiloc::checkpoint_target_scaler(ckpt).inverse(pred);
        truth = csiloc::load_positions_csv<float>(positions_path);
    }
    if (truth.shape() != pred.shape())
        throw csiloc::DimensionError("prediction rows " + std::to_string(pred.extent(0)) +
                                     " do not match ground-truth rows " +
                                     std::to_string(truth.extent(0)));

    const auto report = csiloc::compute_report(truth, pred, mode);
    const fs::path out(a.out);
    fs::create_directories(out);
    csiloc::write_text_file(out / "metrics.csv", report.to_csv());
    csiloc::write_text_file(out / "metrics.json", report.to_json().dump(2) + "\n");
    write_error_csv(out / "errors.csv", truth, pred);
    r.echo(out);
    std::printf("evaluate (%s, n=%zu): mae %.6g nmae %.6g rmse %.6g nrmse %.6g\n",
                csiloc::to_string(mode).c_str(), report.n, report.mae.average(),
                report.nmae.average(), report.rmse.average(), report.nrmse.average());
    return 0;
}

// ---- gradcheck ------------------------------------------------------------------

struct GradcheckArgs {
    std::string config, out;
    double eps = 1e-6, tol = 1e-4;
    std::size_t coords = 200;
    std::uint64_t seed = 17;
    bool corrupt_backward = false;
};

// Test hook: a dense layer whose weight gradient is deliberately wrong, to
// prove the checker can fail.
class TamperedDense : public csiloc::Dense<double> {
public:
    using csiloc::Dense<double>::Dense;
    csiloc::Tensor<double> backward(const csiloc::Tensor<double>& grad_out) override {
        auto dx = csiloc::Dense<double>::backward(grad_out);
        for (auto& g : this->params()[0]->grad.values()) g *= 1.01;
        return dx;
    }
};

int run_gradcheck(CLI::App* cmd, const GradcheckArgs& a) {
    using namespace csiloc;
    Resolver r(cmd, load_config_file(a.config));
    GradCheckOptions opt;
    opt.eps = r.get<double>("--eps", "eps", a.eps, 1e-6);
    opt.coords_per_tensor = r.get<std::size_t>("--coords", "coords", a.coords, 200);
    opt.seed = r.get<std::uint64_t>("--seed", "seed", a.seed, 17);
    const double tol = r.get<double>("--tol", "tol", a.tol, 1e-4);
    const bool corrupt =
        r.get<bool>("--corrupt-backward", "corrupt_backward", a.corrupt_backward, false);

    Rng rng(opt.seed);
    auto fill = [&rng](Tensor<double>& t) {
        for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
    };
    // Check at a generic point: freshly built layers have zero biases, and the
    // padding cells of a transposed convolution then sit exactly on the ReLU
    // kink, where central differences are invalid.
    auto jitter_biases = [&rng](const std::vector<Parameter<double>*>& params) {
        for (auto* p : params)
            if (p->name == "bias")
                for (auto& v : p->value.values()) v += rng.uniform(0.05, 0.25);
    };

    struct Case {
        std::string name;
        GradCheckReport report;
    };
    std::vector<Case> cases;

    auto check_stack = [&](std::string name, Stack<double>& net, std::vector<std::size_t> in_shape) {
        Tensor<double> x(in_shape);
        fill(x);
        Tensor<double> y(net.output_shape(in_shape));
        fill(y);
        jitter_biases(net.params());
        cases.push_back({std::move(name), grad_check_stack(net, x, y, opt)});
    };

    {
        Stack<double> net;
        net.push(std::make_unique<Flatten<double>>());
        if (corrupt) net.push(std::make_unique<TamperedDense>(24, 16, rng));
        else net.push(std::make_unique<Dense<double>>(24, 16, rng));
        net.push(std::make_unique<ReLU<double>>());
        net.push(std::make_unique<Dense<double>>(16, 5, rng));
        check_stack("dense_relu_dense", net, {3, 1, 4, 6});
    }
    {
        Stack<double> net;
        net.push(std::make_unique<Conv2d<double>>(1, 3, 3, rng, 1, 1));
        net.push(std::make_unique<ReLU<double>>());
        net.push(std::make_unique<MaxPool2d<double>>());
        net.push(std::make_unique<Conv2d<double>>(3, 4, 2, rng));
        net.push(std::make_unique<ReLU<double>>());
        net.push(std::make_unique<MaxPool2d<double>>());
        net.push(std::make_unique<Flatten<double>>());
        net.push(std::make_unique<Dense<double>>(4 * 2 * 3, 3, rng));
        check_stack("conv_pool_dense", net, {2, 1, 10, 14});
    }
    {
        Stack<double> net;
        net.push(std::make_unique<ConvTranspose2d<double>>(3, 2, 3, rng, 2, 9, 11));
        net.push(std::make_unique<ReLU<double>>());
        net.push(std::make_unique<ConvTranspose2d<double>>(2, 1, 3, rng, 2, 20, 24));
        check_stack("conv_transpose_chain", net, {2, 3, 4, 5});
    }
    {
        // Full autoencoder graph (CNN variant) at reduced extents.
        auto ae = build_autoencoder<double>({ModelId::m4, 12, 16}, opt.seed);
        jitter_biases(ae.params());
        Tensor<double> x({2, 1, 12, 16});
        fill(x);
        Tensor<double> target(x.shape());
        fill(target);
        auto run_backward = [&] {
            for (auto* p : ae.params()) p->zero_grad();
            Tensor<double> rec = ae.forward_train(x);
            auto loss = mse_loss(rec, target.reshaped(rec.shape()));
            ae.backward(loss.grad);
        };
        auto loss_fn = [&] {
            return mse_value(ae.reconstruct(x), target);
        };
        cases.push_back({"autoencoder_cnn_reduced",
                         grad_check(ae.named_params(), run_backward, loss_fn, opt)});
    }
    {
        // Full localizer graph (encoder unfrozen) at reduced extents.
        auto loc = build_localizer<double>({ModelId::m4, 12, 16}, opt.seed + 1);
        loc.encoder_frozen = false;
        jitter_biases(loc.trainable_params());
        Tensor<double> x({2, 1, 12, 16});
        fill(x);
        Tensor<double> y({2, 3});
        fill(y);
        auto run_backward = [&] {
            for (auto& [n, p] : loc.named_params()) p->zero_grad();
            Tensor<double> pred = loc.forward_train(x);
            auto loss = mse_loss(pred, y);
            loc.backward(loss.grad);
        };
        auto loss_fn = [&] { return mse_value(loc.predict(x), y); };
        cases.push_back({"localizer_cnn_reduced",
                         grad_check(loc.named_params(), run_backward, loss_fn, opt)});
    }

    double max_rel = 0;
    json report_json{{"eps", opt.eps}, {"coords_per_tensor", opt.coords_per_tensor},
                     {"tol", tol}, {"cases", json::array()}};
    for (const auto& c : cases) {
        max_rel = std::max(max_rel, c.report.max_rel_error);
        std::printf("%-24s max rel %.3e\n", c.name.c_str(), c.report.max_rel_error);
        json jc{{"name", c.name}, {"max_rel_error", c.report.max_rel_error}, {"params", json::array()}};
        for (const auto& w : c.report.worst_per_param) {
            std::printf("    %-28s coord %-6zu analytic % .9e numeric % .9e rel %.3e\n",
                        w.param.c_str(), w.index, w.analytic, w.numeric, w.rel_error);
            jc["params"].push_back({{"param", w.param},
                                    {"index", w.index},
                                    {"analytic", w.analytic},
                                    {"numeric", w.numeric},
                                    {"rel_error", w.rel_error}});
        }
        report_json["cases"].push_back(std::move(jc));
    }
    const bool pass = max_rel <= tol;
    report_json["max_rel_error"] = max_rel;
    report_json["pass"] = pass;
    std::printf("gradcheck: max rel error %.3e (tolerance %.1e): %s\n", max_rel, tol,
                pass ? "PASS" : "FAIL");
    if (!a.out.empty()) {
        const fs::path out(a.out);
        fs::create_directories(out);
        csiloc::write_text_file(out / "gradcheck.json", report_json.dump(2) + "\n");
        r.echo(out);
    }
    return pass ? 0 : 4;
}

// ---- report ---------------------------------------------------------------------

struct ReportArgs {
    std::string out;
    std::vector<std::string> runs;
};

int run_report(CLI::App*, const ReportArgs& a) {
    std::string csv = "run,mode,n";
    for (const char* fam : {"mae", "nmae", "rmse", "nrmse"})
        for (const char* ax : {"x", "y", "z", "average"})
            csv += std::string(",") + fam + "_" + ax;
    csv += "\n";

    for (const auto& run : a.runs) {
        const fs::path metrics_path = fs::path(run) / "metrics.json";
        if (!fs::exists(metrics_path))
            throw csiloc::FormatError("run '" + run + "': metrics.json missing");
        csiloc::MetricsReport rep;
        try {
            rep = csiloc::MetricsReport::from_json(json::parse(csiloc::read_text_file(metrics_path)));
        } catch (const json::exception& e) {
            throw csiloc::FormatError("run '" + run + "': bad metrics.json: " + e.what());
        }
        char buf[64];
        csv += run + "," + csiloc::to_string(rep.mode) + "," + std::to_string(rep.n);
        for (const auto* fam : {&rep.mae, &rep.nmae, &rep.rmse, &rep.nrmse}) {
            for (double v : {fam->x, fam->y, fam->z, fam->average()}) {
                std::snprintf(buf, sizeof buf, ",%.17g", v);
                csv += buf;
            }
        }
        csv += "\n";
    }

    std::fputs(csv.c_str(), stdout);
    if (!a.out.empty()) {
        const fs::path out(a.out);
        fs::create_directories(out);
        csiloc::write_text_file(out / "comparison.csv", csv);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"channel-feature localization pipeline"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", synth_args.config, "JSON config file");
    synth->add_option("--out", synth_args.out, "output directory")->required();
    synth->add_option("--seed", synth_args.seed, "master seed");
    synth->add_option("--n-unlabeled", synth_args.n_unlabeled, "unlabeled sample count");
    synth->add_option("--n-labeled", synth_args.n_labeled, "labeled sample count");
    synth->add_option("--height", synth_args.height, "feature rows");
    synth->add_option("--width", synth_args.width, "feature columns");
    synth->add_option("--area", synth_args.area, "area extents x y z (meters)")->expected(3);
    synth->add_option("--noise", synth_args.noise_std, "additive noise std");

    PretrainArgs pre_args;
    auto* pre = app.add_subcommand("pretrain", "reconstruction-pretrain an autoencoder");
    pre->add_option("--config", pre_args.config, "JSON config file");
    pre->add_option("--out", pre_args.out, "output directory")->required();
    pre->add_option("--model", pre_args.model, "m3 or m4");
    pre->add_option("--unlabeled", pre_args.unlabeled, "unlabeled features (.csit)");
    pre->add_option("--seed", pre_args.seed, "master seed");
    pre->add_option("--batch-size", pre_args.batch_size, "minibatch size");
    pre->add_option("--lr", pre_args.learning_rate, "Adam learning rate");
    pre->add_option("--max-epochs", pre_args.max_epochs, "epoch cap");
    pre->add_option("--patience", pre_args.patience, "early-stopping patience");
    pre->add_flag("--standardize-features", pre_args.standardize_features,
                  "standardize features on the train split");
    pre->add_flag("--no-final-activation", pre_args.no_final_activation,
                  "drop the decoder's trailing ReLU");

    FinetuneArgs fin_args;
    auto* fin = app.add_subcommand("finetune", "train the position head on labeled data");
    fin->add_option("--config", fin_args.config, "JSON config file");
    fin->add_option("--out", fin_args.out, "output directory")->required();
    fin->add_option("--model", fin_args.model, "m1, m2, m3 or m4");
    fin->add_option("--features", fin_args.features, "labeled features (.csit)");
    fin->add_option("--positions", fin_args.positions, "positions CSV");
    fin->add_option("--pretrained", fin_args.pretrained, "pretraining checkpoint dir (m3/m4)");
    fin->add_option("--seed", fin_args.seed, "master seed");
    fin->add_option("--batch-size", fin_args.batch_size, "minibatch size");
    fin->add_option("--lr", fin_args.learning_rate, "Adam learning rate");
    fin->add_option("--max-epochs", fin_args.max_epochs, "epoch cap");
    fin->add_option("--patience", fin_args.patience, "early-stopping patience");
    fin->add_flag("--unfreeze-encoder", fin_args.unfreeze_encoder,
                  "also train the pretrained encoder");
    fin->add_flag("--standardize-features", fin_args.standardize_features,
                  "standardize features on the train split");
    fin->add_flag("--standardize-targets", fin_args.standardize_targets,
                  "standardize positions during training");

    EvaluateArgs eval_args;
    auto* eval = app.add_subcommand("evaluate", "compute localization metrics");
    eval->add_option("--config", eval_args.config, "JSON config file");
    eval->add_option("--out", eval_args.out, "output directory")->required();
    eval->add_option("--mode", eval_args.mode, "paper-literal or conventional");
    eval->add_option("--pred", eval_args.pred, "predictions CSV");
    eval->add_option("--truth", eval_args.truth, "ground-truth positions CSV");
    eval->add_option("--checkpoint", eval_args.checkpoint, "localizer checkpoint dir");
    eval->add_option("--features", eval_args.features, "features (.csit) for checkpoint mode");
    eval->add_option("--positions", eval_args.positions, "positions CSV for checkpoint mode");

    GradcheckArgs gc_args;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--config", gc_args.config, "JSON config file");
    gc->add_option("--out", gc_args.out, "optional output directory");
    gc->add_option("--eps", gc_args.eps, "finite-difference step");
    gc->add_option("--tol", gc_args.tol, "max relative error tolerance");
    gc->add_option("--coords", gc_args.coords, "sampled coordinates per tensor");
    gc->add_option("--seed", gc_args.seed, "sampling seed");
    gc->add_flag("--corrupt-backward", gc_args.corrupt_backward,
                 "test hook: tamper one backward pass; the check must fail");

    ReportArgs rep_args;
    auto* rep = app.add_subcommand("report", "tabulate metrics from run directories");
    rep->add_option("--out", rep_args.out, "optional output directory");
    rep->add_option("runs", rep_args.runs, "run directories containing metrics.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(synth)) return run_synth(synth, synth_args);
        if (app.got_subcommand(pre)) return run_pretrain(pre, pre_args);
        if (app.got_subcommand(fin)) return run_finetune(fin, fin_args);
        if (app.got_subcommand(eval)) return run_evaluate(eval, eval_args);
        if (app.got_subcommand(gc)) return run_gradcheck(gc, gc_args);
        if (app.got_subcommand(rep)) return run_report(rep, rep_args);
    } catch (const csiloc::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const csiloc::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const csiloc::Error& e) {
        // FormatError, IntegrityError, DomainError, DimensionError, StateError
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
