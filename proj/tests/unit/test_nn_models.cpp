#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "svpipe/nn/weights.hpp"

namespace {

namespace nn = svpipe::nn;
namespace fs = std::filesystem;

nn::ModelSpec classifier_spec(int size = 32) {
    nn::ModelSpec s;
    s.architecture = nn::Architecture::sax_classifier;
    s.out_classes = 1;
    s.base_width = 4;
    s.depth = 3;
    s.input_size = size;
    return s;
}

nn::ModelSpec unet_spec(int depth, bool ds, int size = 32) {
    nn::ModelSpec s;
    s.architecture = nn::Architecture::unet3plus;
    s.out_classes = 3;
    s.base_width = 4;
    s.depth = depth;
    s.deep_supervision = ds;
    s.input_size = size;
    return s;
}

fs::path scratch_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("svpipe_models_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

TEST(ModelSpec, Validation) {
    auto s = unet_spec(2, false);
    EXPECT_THROW(s.validate(), svpipe::ContractViolation);
    s = classifier_spec();
    s.out_classes = 2;
    EXPECT_THROW(s.validate(), svpipe::ContractViolation);
    s = unet_spec(5, false, 24);
    EXPECT_THROW(s.validate(), svpipe::ContractViolation);
    EXPECT_NO_THROW(unet_spec(5, true, 32).validate());
}

TEST(ModelSpec, JsonRoundTrip) {
    const auto s = unet_spec(4, true, 64);
    EXPECT_EQ(nlohmann::json(s).get<nn::ModelSpec>(), s);
}

TEST(Classifier, OutputIsStrictProbability) {
    auto net = nn::make_network<float>(classifier_spec(), 3);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        auto x = svtest::random_tensor(rng, {1, 32, 32}, -50, 50).cast<float>();
        const auto y = net->predict(x);
        ASSERT_EQ(y.size(), 1u);
        EXPECT_GT(y[0], 0.0f);
        EXPECT_LT(y[0], 1.0f);
    }
}

TEST(Classifier, ShapeMismatchIsRejected) {
    auto net = nn::make_network<float>(classifier_spec(), 3);
    EXPECT_THROW(net->predict(nn::Tensor<float>({1, 16, 16})), svpipe::ContractViolation);
    EXPECT_THROW(net->predict(nn::Tensor<float>({2, 32, 32})), svpipe::ContractViolation);
}

TEST(UNet3Plus, SoftmaxSumsToOneAndKeepsSpatialSize) {
    auto net = nn::make_network<float>(unet_spec(4, false), 5);
    std::mt19937_64 rng(2);
    const auto x = svtest::random_tensor(rng, {1, 32, 32}).cast<float>();
    const auto y = net->predict(x);
    ASSERT_EQ(y.shape, (std::vector<int>{3, 32, 32}));
    const std::size_t N = 32 * 32;
    for (std::size_t i = 0; i < N; ++i) {
        const double s = double(y[i]) + y[N + i] + y[2 * N + i];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(UNet3Plus, FullScaleSkipWiring) {
    for (int depth = 3; depth <= 6; ++depth) {
        nn::UNet3Plus<float> net(unet_spec(depth, false, 64));
        for (int stage = 0; stage <= depth - 2; ++stage) {
            const auto src = net.decoder_sources(stage);
            ASSERT_EQ(static_cast<int>(src.size()), depth) << "stage " << stage;
            int enc = 0, dec = 0;
            for (int j = 0; j < depth; ++j) {
                EXPECT_EQ(src[static_cast<std::size_t>(j)].level, j);
                if (src[static_cast<std::size_t>(j)].kind == nn::SkipSource::Kind::encoder) {
                    ++enc;
                    EXPECT_LE(j, stage);
                    EXPECT_EQ(src[static_cast<std::size_t>(j)].pool, 1 << (stage - j));
                } else {
                    ++dec;
                    EXPECT_GT(j, stage);
                    EXPECT_EQ(src[static_cast<std::size_t>(j)].upsample, 1 << (j - stage));
                }
            }
            EXPECT_EQ(enc, stage + 1);
            EXPECT_EQ(dec, depth - 1 - stage);
        }
        // One branch conv per connection, visible in the parameter directory.
        int branches = 0;
        for (const auto& p : net.parameters())
            if (p.name.find(".from_") != std::string::npos && p.name.ends_with(".weight")) ++branches;
        EXPECT_EQ(branches, depth * (depth - 1));
    }
}

TEST(UNet3Plus, DeepSupervisionHeadsAtNativeScales) {
    nn::UNet3Plus<float> net(unet_spec(4, true));
    ASSERT_EQ(net.head_count(), 4);
    nn::Tape<float> tape(false);
    std::mt19937_64 rng(9);
    const auto in = tape.input(svtest::random_tensor(rng, {1, 32, 32}).cast<float>());
    const auto outs = net.forward(tape, in, nullptr);
    ASSERT_EQ(outs.size(), 4u);
    for (int h = 0; h < 4; ++h) {
        const int side = 32 / net.head_scale(h);
        EXPECT_EQ(tape.value(outs[static_cast<std::size_t>(h)]).shape, (std::vector<int>{3, side, side}));
    }
}

TEST(Network, ForwardIsPureAndBatchMatchesSingle) {
    auto net = nn::make_network<float>(unet_spec(3, false), 8);
    std::mt19937_64 rng(4);
    nn::Tensor<float> batch({2, 1, 32, 32});
    for (auto& v : batch.data) v = std::uniform_real_distribution<float>(0, 1)(rng);
    const auto a = nn::forward(*net, batch);
    const auto b = nn::forward(*net, batch);
    EXPECT_EQ(a, b);
    nn::Tensor<float> first({1, 32, 32});
    std::copy_n(batch.data.begin(), first.size(), first.data.begin());
    const auto single = net->predict(first);
    EXPECT_TRUE(std::equal(single.data.begin(), single.data.end(), a.data.begin()));
}

TEST(Weights, RoundTripIsBitwise) {
    const auto dir = scratch_dir("roundtrip");
    auto net = nn::make_network<float>(unet_spec(3, true), 21);
    nn::save_weights(*net, dir / "seg.json");
    auto loaded = nn::load_weights<float>(dir / "seg.json", net->spec());
    ASSERT_EQ(loaded->parameters().size(), net->parameters().size());
    for (std::size_t i = 0; i < net->parameters().size(); ++i)
        EXPECT_EQ(loaded->parameters()[i].value, net->parameters()[i].value);
    std::mt19937_64 rng(5);
    const auto x = svtest::random_tensor(rng, {1, 32, 32}).cast<float>();
    EXPECT_EQ(loaded->predict(x), net->predict(x));
}

TEST(Weights, TamperedPayloadIsRefused) {
    const auto dir = scratch_dir("tamper");
    auto net = nn::make_network<float>(classifier_spec(), 2);
    nn::save_weights(*net, dir / "cls.json");
    {
        std::fstream f(dir / "cls.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(17);
        char c = 0;
        f.get(c);
        f.seekp(17);
        f.put(static_cast<char>(c ^ 0x01));
    }
    EXPECT_THROW(nn::load_weights<float>(dir / "cls.json"), svpipe::WeightsError);
}

TEST(Weights, WrongSpecIsRefused) {
    const auto dir = scratch_dir("wrongspec");
    auto net = nn::make_network<float>(classifier_spec(), 2);
    nn::save_weights(*net, dir / "cls.json");
    EXPECT_THROW(nn::load_weights<float>(dir / "cls.json", unet_spec(3, false)), svpipe::WeightsError);
}

TEST(Weights, MissingFilesAreRefused) {
    const auto dir = scratch_dir("missing");
    EXPECT_THROW(nn::load_weights<float>(dir / "none.json"), svpipe::WeightsError);
    auto net = nn::make_network<float>(classifier_spec(), 2);
    nn::save_weights(*net, dir / "cls.json");
    fs::remove(dir / "cls.bin");
    EXPECT_THROW(nn::load_weights<float>(dir / "cls.json"), svpipe::WeightsError);
}

}  // namespace
