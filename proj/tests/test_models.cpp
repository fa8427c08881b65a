#include "csiloc/models.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "csiloc/loss.hpp"
#include "csiloc/optim.hpp"

using namespace csiloc;

namespace {

nlohmann::json load_golden(const std::string& name) {
    const std::string path = std::string(CSILOC_GOLDEN_DIR) + "/" + name;
    std::ifstream in(path);
    EXPECT_TRUE(in.good()) << "missing golden file " << path;
    return nlohmann::json::parse(in);
}

ModelSpec spec_for(ModelId id, std::size_t h = 56, std::size_t w = 924) {
    ModelSpec s;
    s.id = id;
    s.height = h;
    s.width = w;
    return s;
}

} // namespace

TEST(ModelId, ParseAndPrint) {
    EXPECT_EQ(parse_model_id("m1"), ModelId::m1);
    EXPECT_EQ(parse_model_id("m4"), ModelId::m4);
    EXPECT_EQ(to_string(ModelId::m3), "m3");
    EXPECT_THROW(parse_model_id("m5"), ConfigError);
    EXPECT_THROW(parse_model_id(""), ConfigError);
}

// Layer-by-layer dumps at the full 56x924 input, pinned by golden files.
TEST(Architecture, MatchesGoldenM1) {
    EXPECT_EQ(architecture_json(spec_for(ModelId::m1)), load_golden("arch_m1.json"));
}

TEST(Architecture, MatchesGoldenM2) {
    EXPECT_EQ(architecture_json(spec_for(ModelId::m2)), load_golden("arch_m2.json"));
}

TEST(Architecture, MatchesGoldenM3) {
    EXPECT_EQ(architecture_json(spec_for(ModelId::m3)), load_golden("arch_m3.json"));
}

TEST(Architecture, MatchesGoldenM4) {
    EXPECT_EQ(architecture_json(spec_for(ModelId::m4)), load_golden("arch_m4.json"));
}

// Shape arithmetic only; no parameter allocation at the full input size.
TEST(Architecture, M4EncoderOutputShape) {
    ModelSpec spec = spec_for(ModelId::m4, 12, 16);
    auto ae = build_autoencoder<float>(spec, 1);
    EXPECT_EQ(ae.encoder.output_shape({1, 1, 56, 924}),
              (std::vector<std::size_t>{1, 64, 13, 230}));
}

TEST(Architecture, M3EncoderParamCount) {
    auto ae = build_autoencoder<float>(spec_for(ModelId::m3), 1);
    std::size_t count = 0;
    for (auto* p : ae.encoder.params()) count += p->value.size();
    EXPECT_EQ(count, 13289952u); // 51744*256+256 + 256*128+128 + 128*64+64 + 64*32+32
}

TEST(Build, AutoencoderRequiresM3OrM4) {
    EXPECT_THROW(build_autoencoder<float>(spec_for(ModelId::m1), 1), ConfigError);
    EXPECT_THROW(build_autoencoder<float>(spec_for(ModelId::m2), 1), ConfigError);
}

TEST(Build, InfeasibleInputIsConfigError) {
    // two conv+pool stages cannot fit a 4x4 input
    EXPECT_THROW(build_autoencoder<float>(spec_for(ModelId::m4, 4, 4), 1), ConfigError);
    EXPECT_THROW(build_localizer<float>(spec_for(ModelId::m2, 3, 3), 1), ConfigError);
}

TEST(Build, DeterministicGivenSeed) {
    auto a = build_localizer<float>(spec_for(ModelId::m1, 8, 12), 33);
    auto b = build_localizer<float>(spec_for(ModelId::m1, 8, 12), 33);
    auto c = build_localizer<float>(spec_for(ModelId::m1, 8, 12), 34);
    auto pa = a.named_params(), pb = b.named_params(), pc = c.named_params();
    ASSERT_EQ(pa.size(), pb.size());
    bool all_same = true, any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        all_same = all_same && pa[i].second->value.values() == pb[i].second->value.values();
        any_diff = any_diff || pa[i].second->value.values() != pc[i].second->value.values();
    }
    EXPECT_TRUE(all_same);
    EXPECT_TRUE(any_diff);
}

TEST(Autoencoder, ReconstructPreservesShape) {
    for (ModelId id : {ModelId::m3, ModelId::m4}) {
        auto ae = build_autoencoder<float>(spec_for(id, 16, 32), 2);
        Tensor<float> x({3, 1, 16, 32});
        Rng rng(5);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
        Tensor<float> r = ae.reconstruct(x);
        EXPECT_EQ(r.shape(), x.shape()) << to_string(id);
        EXPECT_GT(mse_value(r, x), 0.0); // untrained reconstruction is lossy
    }
}

TEST(Autoencoder, EncodeLatentShapes) {
    auto m3 = build_autoencoder<float>(spec_for(ModelId::m3, 16, 32), 3);
    Tensor<float> x({2, 1, 16, 32});
    x.fill(0.5f);
    Tensor<float> z3 = m3.encode(x);
    EXPECT_EQ(z3.shape(), (std::vector<std::size_t>{2, 32}));

    auto m4 = build_autoencoder<float>(spec_for(ModelId::m4, 16, 32), 3);
    Tensor<float> z4 = m4.encode(x);
    EXPECT_EQ(z4.shape(), (std::vector<std::size_t>{2, 64, 3, 7}));
}

TEST(Autoencoder, ZeroInputZeroBiasGivesZeroLatent) {
    // freshly built nets have zero biases, so a zero input stays zero
    auto ae = build_autoencoder<float>(spec_for(ModelId::m3, 8, 12), 4);
    Tensor<float> z = ae.encode(Tensor<float>({1, 1, 8, 12}));
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], 0.0f);
}

TEST(Autoencoder, EncodeDeterministic) {
    auto ae = build_autoencoder<float>(spec_for(ModelId::m4, 12, 16), 6);
    Tensor<float> x({1, 1, 12, 16});
    Rng rng(6);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
    EXPECT_EQ(ae.encode(x).values(), ae.encode(x).values());
}

TEST(Autoencoder, FinalActivationFlag) {
    ModelSpec spec = spec_for(ModelId::m3, 8, 12);
    spec.final_activation = false;
    auto ae = build_autoencoder<float>(spec, 7);
    const auto dec = ae.decoder.describe();
    EXPECT_EQ(dec.back().at("kind"), "dense"); // no trailing relu
    EXPECT_FALSE(ae.describe().at("final_activation").get<bool>());

    ModelSpec on = spec_for(ModelId::m3, 8, 12);
    auto ae_on = build_autoencoder<float>(on, 7);
    EXPECT_EQ(ae_on.decoder.describe().back().at("kind"), "relu");
}

TEST(Localizer, PredictShapeForAllModels) {
    Tensor<float> x({4, 1, 12, 16});
    Rng rng(8);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
    for (ModelId id : {ModelId::m1, ModelId::m2, ModelId::m3, ModelId::m4}) {
        auto loc = build_localizer<float>(spec_for(id, 12, 16), 9);
        Tensor<float> y = loc.predict(x);
        EXPECT_EQ(y.shape(), (std::vector<std::size_t>{4, 3})) << to_string(id);
        EXPECT_TRUE(y.all_finite());
    }
}

TEST(Localizer, M1AndM2KeepWholeNetInHead) {
    EXPECT_TRUE(build_localizer<float>(spec_for(ModelId::m1, 12, 16), 1).encoder.empty());
    EXPECT_TRUE(build_localizer<float>(spec_for(ModelId::m2, 12, 16), 1).encoder.empty());
    EXPECT_FALSE(build_localizer<float>(spec_for(ModelId::m3, 12, 16), 1).encoder.empty());
}

TEST(Localizer, FrozenEncoderStaysBitwiseIdentical) {
    auto loc = build_localizer<float>(spec_for(ModelId::m4, 12, 16), 10);
    loc.encoder_frozen = true;

    std::vector<std::vector<float>> before;
    for (auto* p : loc.encoder.params()) before.push_back(p->value.values());

    Rng rng(11);
    Tensor<float> x({2, 1, 12, 16});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
    Tensor<float> y({2, 3});
    auto params = loc.trainable_params();
    for (int step = 0; step < 5; ++step) {
        Tensor<float> pred = loc.forward_train(x);
        auto loss = mse_loss(pred, y);
        loc.backward(loss.grad);
        adam_step(params, AdamConfig{});
        for (auto* p : params) p->zero_grad();
    }

    std::size_t i = 0;
    for (auto* p : loc.encoder.params()) EXPECT_EQ(p->value.values(), before[i++]);
    // but the head moved (compare whole tensors; single weights can sit on a
    // dead latent unit and keep a zero gradient)
    EXPECT_NE(loc.head.params().front()->value.values(),
              build_localizer<float>(spec_for(ModelId::m4, 12, 16), 10).head.params().front()->value.values());
}

TEST(Localizer, TrainableParamsRespectFreeze) {
    auto loc = build_localizer<float>(spec_for(ModelId::m3, 12, 16), 12);
    loc.encoder_frozen = true;
    const std::size_t frozen_count = loc.trainable_params().size();
    loc.encoder_frozen = false;
    EXPECT_GT(loc.trainable_params().size(), frozen_count);
}

TEST(Localizer, HeadSharedAcrossModels) {
    // same 128/64/3 head for every model: check layer dims via describe
    for (ModelId id : {ModelId::m1, ModelId::m3, ModelId::m4}) {
        auto loc = build_localizer<float>(spec_for(id, 12, 16), 13);
        const auto head = loc.head.describe();
        const auto& last = head.back();
        EXPECT_EQ(last.at("kind"), "dense");
        EXPECT_EQ(last.at("out").get<int>(), 3);
        bool saw128 = false, saw64 = false;
        for (const auto& l : head)
            if (l.at("kind") == "dense") {
                saw128 = saw128 || l.at("out").get<int>() == 128;
                saw64 = saw64 || l.at("out").get<int>() == 64;
            }
        EXPECT_TRUE(saw128 && saw64) << to_string(id);
    }
}
