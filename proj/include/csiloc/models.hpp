#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "csiloc/layers.hpp"

namespace csiloc {

enum class ModelId { m1, m2, m3, m4 };

inline std::string to_string(ModelId id) {
    switch (id) {
        case ModelId::m1: return "m1";
        case ModelId::m2: return "m2";
        case ModelId::m3: return "m3";
        case ModelId::m4: return "m4";
    }
    return "?";
}

inline ModelId parse_model_id(const std::string& s) {
    if (s == "m1") return ModelId::m1;
    if (s == "m2") return ModelId::m2;
    if (s == "m3") return ModelId::m3;
    if (s == "m4") return ModelId::m4;
    throw ConfigError("unknown model '" + s + "' (expected one of m1, m2, m3, m4)");
}

// Declarative description of one of the four architectures. Models take a
// single-channel [1, height, width] image; the defaults match the real CSI
// sample extents, smaller extents are used for synthetic data.
struct ModelSpec {
    ModelId id = ModelId::m1;
    std::size_t height = 56;
    std::size_t width = 924;
    // Apply the trailing ReLU of the autoencoder decoders. On by default;
    // turning it off lets reconstructions go negative.
    bool final_activation = true;
};

namespace detail {

// Shared position-estimation head: 128 / 64 / 3 with ReLU.
template <typename T>
void push_mlp_head(Stack<T>& stack, std::size_t in_dim, Rng& rng) {
    stack.push(std::make_unique<Flatten<T>>());
    stack.push(std::make_unique<Dense<T>>(in_dim, 128, rng));
    stack.push(std::make_unique<ReLU<T>>());
    stack.push(std::make_unique<Dense<T>>(128, 64, rng));
    stack.push(std::make_unique<ReLU<T>>());
    stack.push(std::make_unique<Dense<T>>(64, 3, rng));
}

// Conv trunk shared by the CNN supervised model and the CNN encoder:
// conv(32, k3) + ReLU + pool, conv(64, k2) + ReLU + pool.
template <typename T>
void push_conv_trunk(Stack<T>& stack, Rng& rng) {
    stack.push(std::make_unique<Conv2d<T>>(1, 32, 3, rng));
    stack.push(std::make_unique<ReLU<T>>());
    stack.push(std::make_unique<MaxPool2d<T>>());
    stack.push(std::make_unique<Conv2d<T>>(32, 64, 2, rng));
    stack.push(std::make_unique<ReLU<T>>());
    stack.push(std::make_unique<MaxPool2d<T>>());
}

// MLP encoder: 256 / 128 / 64 / 32, each followed by ReLU.
template <typename T>
void push_mlp_encoder(Stack<T>& stack, std::size_t in_dim, Rng& rng) {
    stack.push(std::make_unique<Flatten<T>>());
    const std::size_t dims[] = {256, 128, 64, 32};
    std::size_t prev = in_dim;
    for (std::size_t d : dims) {
        stack.push(std::make_unique<Dense<T>>(prev, d, rng));
        stack.push(std::make_unique<ReLU<T>>());
        prev = d;
    }
}

// Product of the non-batch extents.
inline std::size_t flat_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d = 1; d < shape.size(); ++d) n *= shape[d];
    return n;
}

} // namespace detail

// Encoder/decoder pair; decoder(encoder(x)) restores the input shape.
template <typename T>
struct Autoencoder {
    ModelSpec spec;
    Stack<T> encoder;
    Stack<T> decoder;

    Tensor<T> encode(const Tensor<T>& x) const { return encoder.apply(x); }

    Tensor<T> reconstruct(const Tensor<T>& x) const {
        Tensor<T> r = decoder.apply(encoder.apply(x));
        return r.reshaped(x.shape());
    }

    // Training path; the result keeps the decoder-native shape (the MLP
    // decoder emits flat rows), compare against a matching view of x.
    Tensor<T> forward_train(const Tensor<T>& x) { return decoder.forward(encoder.forward(x)); }

    Tensor<T> backward(const Tensor<T>& grad) { return encoder.backward(decoder.backward(grad)); }

    std::vector<Parameter<T>*> params() {
        auto out = encoder.params();
        for (auto* p : decoder.params()) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, Parameter<T>*>> named_params() {
        std::vector<std::pair<std::string, Parameter<T>*>> out;
        for (auto& [n, p] : encoder.named_params()) out.emplace_back("encoder." + n, p);
        for (auto& [n, p] : decoder.named_params()) out.emplace_back("decoder." + n, p);
        return out;
    }

    nlohmann::json describe() const {
        std::size_t total = 0;
        for (auto& [n, p] : const_cast<Autoencoder*>(this)->named_params()) total += p->value.size();
        return {{"model", to_string(spec.id)},
                {"kind", "autoencoder"},
                {"input", {1, spec.height, spec.width}},
                {"final_activation", spec.final_activation},
                {"encoder", encoder.describe()},
                {"decoder", decoder.describe()},
                {"total_params", total}};
    }
};

// Position estimator: optional feature encoder plus the MLP head. For the
// purely supervised models the encoder stack is empty and the whole network
// lives in the head.
template <typename T>
struct Localizer {
    ModelSpec spec;
    Stack<T> encoder;
    Stack<T> head;
    bool encoder_frozen = true;

    Tensor<T> predict(const Tensor<T>& x) const {
        return head.apply(encoder.empty() ? x : encoder.apply(x));
    }

    Tensor<T> forward_train(const Tensor<T>& x) {
        if (encoder.empty()) return head.forward(x);
        // A frozen encoder never needs its own backward pass.
        Tensor<T> z = encoder_frozen ? encoder.apply(x) : encoder.forward(x);
        return head.forward(z);
    }

    void backward(const Tensor<T>& grad) {
        Tensor<T> g = head.backward(grad);
        if (!encoder.empty() && !encoder_frozen) encoder.backward(g);
    }

    // Parameters the optimizer is allowed to touch.
    std::vector<Parameter<T>*> trainable_params() {
        auto out = head.params();
        if (!encoder_frozen) {
            auto enc = encoder.params();
            out.insert(out.begin(), enc.begin(), enc.end());
        }
        return out;
    }

    std::vector<std::pair<std::string, Parameter<T>*>> named_params() {
        std::vector<std::pair<std::string, Parameter<T>*>> out;
        for (auto& [n, p] : encoder.named_params()) out.emplace_back("encoder." + n, p);
        for (auto& [n, p] : head.named_params()) out.emplace_back("head." + n, p);
        return out;
    }

    nlohmann::json describe() const {
        std::size_t total = 0;
        for (auto& [n, p] : const_cast<Localizer*>(this)->named_params()) total += p->value.size();
        return {{"model", to_string(spec.id)},
                {"kind", "localizer"},
                {"input", {1, spec.height, spec.width}},
                {"encoder_frozen", encoder_frozen},
                {"encoder", encoder.describe()},
                {"head", head.describe()},
                {"total_params", total}};
    }
};

// m3 (MLP) and m4 (CNN) autoencoders. Deterministic given the seed.
template <typename T>
Autoencoder<T> build_autoencoder(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    Autoencoder<T> ae;
    ae.spec = spec;
    const std::size_t h = spec.height, w = spec.width;
    const std::vector<std::size_t> input_shape{1, 1, h, w};

    try {
        switch (spec.id) {
            case ModelId::m3: {
                detail::push_mlp_encoder(ae.encoder, h * w, rng);
                const std::size_t dims[] = {64, 128, 256};
                std::size_t prev = 32;
                for (std::size_t d : dims) {
                    ae.decoder.push(std::make_unique<Dense<T>>(prev, d, rng));
                    ae.decoder.push(std::make_unique<ReLU<T>>());
                    prev = d;
                }
                ae.decoder.push(std::make_unique<Dense<T>>(prev, h * w, rng));
                if (spec.final_activation) ae.decoder.push(std::make_unique<ReLU<T>>());
                break;
            }
            case ModelId::m4: {
                detail::push_conv_trunk(ae.encoder, rng);
                // Mirror the encoder extents: land on the post-first-pool
                // size, then on the input size.
                const std::size_t h2 = (h - 2) / 2, w2 = (w - 2) / 2;
                ae.decoder.push(std::make_unique<ConvTranspose2d<T>>(64, 32, 3, rng, 2, h2, w2));
                ae.decoder.push(std::make_unique<ReLU<T>>());
                ae.decoder.push(std::make_unique<ConvTranspose2d<T>>(32, 1, 3, rng, 2, h, w));
                if (spec.final_activation) ae.decoder.push(std::make_unique<ReLU<T>>());
                break;
            }
            default:
                throw ConfigError("model " + to_string(spec.id) +
                                  " is supervised-only and has no autoencoder");
        }
        // Whole-chain shape validation, before any data flows.
        const auto latent = ae.encoder.output_shape(input_shape);
        const auto restored = ae.decoder.output_shape(latent);
        std::size_t restored_flat = 1;
        for (std::size_t d = 1; d < restored.size(); ++d) restored_flat *= restored[d];
        if (restored_flat != h * w) {
            throw ConfigError("autoencoder output " + shape_string(restored) +
                              " cannot be reshaped to input [1," + std::to_string(h) + "," +
                              std::to_string(w) + "]");
        }
    } catch (const DimensionError& e) {
        throw ConfigError("model " + to_string(spec.id) + " infeasible for input " +
                          std::to_string(h) + "x" + std::to_string(w) + ": " + e.what());
    }
    return ae;
}

template <typename T>
Localizer<T> build_localizer(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    Localizer<T> loc;
    loc.spec = spec;
    const std::size_t h = spec.height, w = spec.width;
    const std::vector<std::size_t> input_shape{1, 1, h, w};

    try {
        switch (spec.id) {
            case ModelId::m1:
                detail::push_mlp_head(loc.head, h * w, rng);
                break;
            case ModelId::m2: {
                detail::push_conv_trunk(loc.head, rng);
                const auto trunk_out = loc.head.output_shape(input_shape);
                detail::push_mlp_head(loc.head, detail::flat_size(trunk_out), rng);
                break;
            }
            case ModelId::m3: {
                detail::push_mlp_encoder(loc.encoder, h * w, rng);
                detail::push_mlp_head(loc.head, 32, rng);
                break;
            }
            case ModelId::m4: {
                detail::push_conv_trunk(loc.encoder, rng);
                const auto latent = loc.encoder.output_shape(input_shape);
                detail::push_mlp_head(loc.head, detail::flat_size(latent), rng);
                break;
            }
        }
        // Validate the full chain.
        const auto in2 = loc.encoder.empty() ? input_shape : loc.encoder.output_shape(input_shape);
        const auto out = loc.head.output_shape(in2);
        if (out.back() != 3) throw ConfigError("position head must end at 3 outputs");
    } catch (const DimensionError& e) {
        throw ConfigError("model " + to_string(spec.id) + " infeasible for input " +
                          std::to_string(h) + "x" + std::to_string(w) + ": " + e.what());
    }
    return loc;
}

// Architecture dump used by tests and the report command.
inline nlohmann::json architecture_json(const ModelSpec& spec) {
    nlohmann::json j{{"model", to_string(spec.id)}, {"input", {1, spec.height, spec.width}}};
    if (spec.id == ModelId::m3 || spec.id == ModelId::m4) {
        j["autoencoder"] = build_autoencoder<float>(spec, 0).describe();
    }
    j["localizer"] = build_localizer<float>(spec, 0).describe();
    return j;
}

} // namespace csiloc
