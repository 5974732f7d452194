#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "spcnn/dataset.hpp"
#include "spcnn/errors.hpp"
#include "spcnn/network.hpp"

using namespace spcnn;

namespace {

Architecture tiny_arch() {
    Architecture a = make_architecture(Variant::Baseline);
    a.conv_kernel_counts = {2, 2, 2, 2};
    a.fc_sizes = {12, 6, 3};
    return a;
}

Tensor random_patch(Rng& rng) { return oracle::random_tensor({1, 36, 36}, rng, 0.0, 1.0); }

LabeledSet small_synthetic(std::size_t per_class, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.labeled_per_class = per_class;
    spec.pool_size = 3;
    spec.benchmark_per_class = 1;
    spec.seed = seed;
    return generate_synthetic(spec).labeled;
}

constexpr Variant kAllVariants[] = {Variant::Baseline, Variant::Half, Variant::Plus50, Variant::ExtraFc,
                                    Variant::DropFirstConv};

}  // namespace

TEST(Architecture, BaselineSizes) {
    const Architecture a = make_architecture(Variant::Baseline);
    EXPECT_EQ(a.conv_kernel_counts, (std::vector<std::size_t>{45, 80, 125, 180}));
    EXPECT_EQ(a.fc_sizes, (std::vector<std::size_t>{1080, 360, 3}));
    EXPECT_EQ(a.input_shape(), (Shape{1, 36, 36}));
}

TEST(Architecture, VariantSizes) {
    const Architecture half = make_architecture(Variant::Half);
    EXPECT_EQ(half.conv_kernel_counts, (std::vector<std::size_t>{23, 40, 63, 90}));
    EXPECT_EQ(half.fc_sizes, (std::vector<std::size_t>{540, 180, 3}));
    const Architecture plus = make_architecture(Variant::Plus50);
    EXPECT_EQ(plus.conv_kernel_counts, (std::vector<std::size_t>{68, 120, 188, 270}));
    EXPECT_EQ(plus.fc_sizes, (std::vector<std::size_t>{1620, 540, 3}));
    EXPECT_EQ(make_architecture(Variant::ExtraFc).fc_sizes, (std::vector<std::size_t>{1080, 360, 180, 3}));
    EXPECT_EQ(make_architecture(Variant::DropFirstConv).conv_kernel_counts,
              (std::vector<std::size_t>{80, 125, 180}));
}

TEST(Architecture, VariantNamesRoundTrip) {
    for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
    EXPECT_THROW(parse_variant("quarter"), ParameterError);
}

TEST(Architecture, BaselineShapeChainEndsInA180Vector) {
    const auto shapes = activation_shapes(make_architecture(Variant::Baseline));
    const std::vector<Shape> expected = {{1, 36, 36}, {45, 36, 36}, {45, 18, 18}, {80, 18, 18},
                                         {80, 9, 9},  {125, 9, 9},  {125, 4, 4},  {180, 4, 4},
                                         {180},       {1080},       {360},        {3}};
    EXPECT_EQ(shapes, expected);
}

TEST(Architecture, ParameterCountsMatchClosedForm) {
    for (Variant v : kAllVariants) {
        const Architecture a = make_architecture(v);
        EXPECT_EQ(parameter_count(a), oracle::closed_form_parameter_count(a)) << variant_name(v);
    }
    // 45*9+45 + 80*45*9+80 + 125*80*9+125 + 180*125*9+180 + 180*1080+1080 + 1080*360+360 + 360*3+3
    EXPECT_EQ(parameter_count(make_architecture(Variant::Baseline)), 911458u);
}

TEST(Architecture, ScalingKeepsOutputLayer) {
    const Architecture a = scale_architecture(make_architecture(Variant::Baseline), 0.25);
    EXPECT_EQ(a.conv_kernel_counts, (std::vector<std::size_t>{12, 20, 32, 45}));
    EXPECT_EQ(a.fc_sizes, (std::vector<std::size_t>{270, 90, 3}));
    EXPECT_EQ(a.variant, Variant::Baseline);
    const Architecture half = scale_architecture(make_architecture(Variant::Baseline), 0.5);
    EXPECT_EQ(half.conv_kernel_counts, make_architecture(Variant::Half).conv_kernel_counts);
    EXPECT_EQ(half.fc_sizes, make_architecture(Variant::Half).fc_sizes);
}

TEST(Architecture, InvalidArchitecturesAreRejected) {
    Architecture a = make_architecture(Variant::Baseline);
    a.fc_sizes.back() = 4;
    EXPECT_THROW(a.validate(), ParameterError);
    a = make_architecture(Variant::Baseline);
    a.conv_kernel_counts.clear();
    EXPECT_THROW(build_model(a, 1), ParameterError);
    a = make_architecture(Variant::Baseline);
    a.dropout_rate = 1.0;
    EXPECT_THROW(a.validate(), ParameterError);
    a = make_architecture(Variant::Baseline);
    a.conv_kernel_counts = {4, 4, 4, 4, 4, 4, 4};  // 36 -> 18 -> 9 -> 4 -> 2 -> 1 -> cannot pool
    EXPECT_THROW(a.validate(), ParameterError);
}

TEST(BuildModel, SameSeedIsBitIdentical) {
    const Architecture a = make_architecture(Variant::Half);
    EXPECT_TRUE(build_model(a, 42).same_parameters(build_model(a, 42)));
    EXPECT_FALSE(build_model(a, 42).same_parameters(build_model(a, 43)));
}

TEST(BuildModel, FanInUniformInitAndZeroBiases) {
    const Architecture a = make_architecture(Variant::Baseline);
    const CnnModel m = build_model(a, 7);
    const auto shapes = parameter_shapes(a);
    ASSERT_EQ(m.params.size(), shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const Tensor& t = m.params[i].value;
        EXPECT_EQ(t.shape(), shapes[i]);
        if (i % 2 == 1) {
            EXPECT_EQ(t.sum(), 0.0);
            continue;
        }
        const std::size_t fan_in = t.size() / shapes[i][0];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        double lo = 0.0, hi = 0.0;
        for (double v : t.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        EXPECT_LE(hi, bound);
        EXPECT_GE(lo, -bound);
        EXPECT_GT(hi, 0.9 * bound);
        EXPECT_LT(lo, -0.9 * bound);
    }
}

TEST(Forward, UntrainedProbabilitiesAreValidAndDeterministic) {
    const CnnModel m = build_model(make_architecture(Variant::Baseline), 3);
    Rng rng(4);
    for (int i = 0; i < 5; ++i) {
        const Tensor x = random_patch(rng);
        const Tensor p = forward_proba(m, x);
        ASSERT_EQ(p.shape(), (Shape{3}));
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
        for (double v : p.data()) {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
        EXPECT_EQ(forward_proba(m, x), p);
    }
}

TEST(Forward, WrongPatchShapeThrows) {
    const CnnModel m = build_model(tiny_arch(), 1);
    EXPECT_THROW(forward_proba(m, Tensor({1, 32, 32})), DimensionError);
    EXPECT_THROW(forward_proba(m, Tensor({2, 36, 36})), DimensionError);
}

TEST(Forward, ArgmaxInvariantUnderTemperatureScaling) {
    CnnModel m = build_model(scale_architecture(make_architecture(Variant::Baseline), 0.25), 5);
    Rng rng(6);
    std::vector<Tensor> patches;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        patches.push_back(random_patch(rng));
        labels.push_back(predict_label(m, patches.back()));
    }
    const std::size_t last = m.fc_layers() - 1;
    for (double temperature : {0.1, 3.0, 25.0}) {
        CnnModel scaled = m;
        for (std::size_t k : {2 * (m.conv_layers() + last), 2 * (m.conv_layers() + last) + 1}) {
            for (auto& v : scaled.params[k].value.data()) v *= temperature;
        }
        for (std::size_t i = 0; i < patches.size(); ++i) EXPECT_EQ(predict_label(scaled, patches[i]), labels[i]);
    }
}

TEST(Gradient, TinyNetworkMatchesFiniteDifferences) {
    CnnModel m = build_model(tiny_arch(), 11);
    Rng rng(12);
    const Tensor x = random_patch(rng);
    const int label = 1;
    for (auto& p : m.params) {
        for (auto& v : p.value.data()) v += rng.uniform(-0.05, 0.05);  // nonzero biases
    }
    CnnModel g = m;
    accumulate_gradients(g, x, label, nullptr);
    const auto loss = [&] {
        CnnModel copy = m;
        return accumulate_gradients(copy, x, label, nullptr);
    };
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = rng.below(m.params.size());
        const std::size_t i = rng.below(m.params[k].value.size());
        const double numeric = oracle::central_diff(loss, m.params[k].value, i);
        EXPECT_LT(oracle::rel_err(g.params[k].grad[i], numeric), 1e-5) << "param " << k << " index " << i;
    }
}

TEST(Gradient, TinyNetworkWithFixedDropoutMaskMatchesFiniteDifferences) {
    CnnModel m = build_model(tiny_arch(), 13);
    Rng rng(14);
    const Tensor x = random_patch(rng);
    const auto loss_and_grad = [&](CnnModel& model) {
        Rng mask_rng(99);
        return accumulate_gradients(model, x, 2, &mask_rng);
    };
    CnnModel g = m;
    loss_and_grad(g);
    const auto loss = [&] {
        CnnModel copy = m;
        return loss_and_grad(copy);
    };
    for (std::size_t k = 2 * m.conv_layers(); k < m.params.size(); ++k) {
        for (std::size_t i = 0; i < std::min<std::size_t>(m.params[k].value.size(), 6); ++i) {
            const double numeric = oracle::central_diff(loss, m.params[k].value, i);
            EXPECT_LT(oracle::rel_err(g.params[k].grad[i], numeric), 1e-5);
        }
    }
}

TEST(Variants, ForwardAndBackwardAreFiniteWithMatchingShapes) {
    Rng rng(15);
    const Tensor x = random_patch(rng);
    for (Variant v : kAllVariants) {
        CnnModel m = build_model(make_architecture(v), 16);
        const double loss = accumulate_gradients(m, x, 0, &rng);
        EXPECT_TRUE(std::isfinite(loss)) << variant_name(v);
        for (const auto& p : m.params) {
            EXPECT_TRUE(p.grad.all_finite());
            EXPECT_EQ(p.grad.shape(), p.value.shape());
        }
        const auto shapes = activation_shapes(m.arch);
        EXPECT_EQ(shapes.back(), (Shape{3}));
        const Tensor prob = forward_proba(m, x);
        EXPECT_NEAR(prob.sum(), 1.0, 1e-12);
    }
}

TEST(Train, TwoPatchToySetIsMemorised) {
    // train() requires all three classes, so this drives the optimiser directly.
    Architecture a = scale_architecture(make_architecture(Variant::Baseline), 0.25);
    a.dropout_rate = 0.0;
    CnnModel m = build_model(a, 21);
    Rng rng(22);
    const LabeledSet data = small_synthetic(1, 23);
    const std::vector<LabeledPatch> toy{data[0], data[1]};
    ASSERT_NE(toy[0].label, toy[1].label);
    std::vector<Tensor> velocity;
    for (const auto& p : m.params) velocity.emplace_back(p.value.shape());
    for (int step = 0; step < 200; ++step) {
        for (const auto& p : toy) accumulate_gradients(m, p.pixels, p.label, nullptr);
        ops::sgd_step(m.params, velocity, 0.01, 0.9);
    }
    for (const auto& p : toy) EXPECT_GT(forward_proba(m, p.pixels)[static_cast<std::size_t>(p.label)], 0.9);
}

TEST(Train, LossDecreasesAndRunIsDeterministic) {
    const Architecture a = scale_architecture(make_architecture(Variant::Baseline), 0.25);
    const LabeledSet data = small_synthetic(15, 31);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.seed = 32;
    CnnModel m1 = build_model(a, 33), m2 = build_model(a, 33);
    const TrainReport r1 = train(m1, data, cfg);
    const TrainReport r2 = train(m2, data, cfg);
    ASSERT_EQ(r1.epoch_loss.size(), 6u);
    EXPECT_LT(r1.epoch_loss.back(), r1.epoch_loss.front());
    EXPECT_EQ(r1.epoch_loss, r2.epoch_loss);
    EXPECT_TRUE(m1.same_parameters(m2));
    EXPECT_TRUE(std::isnan(r1.verify_accuracy));
    EXPECT_EQ(m1.trained_iterations, 6u * ((data.size() + 15) / 16));
}

TEST(Train, MissingClassIsADataError) {
    LabeledSet data = small_synthetic(3, 41);
    std::erase_if(data, [](const LabeledPatch& p) { return p.label == 2; });
    CnnModel m = build_model(tiny_arch(), 1);
    EXPECT_THROW(train(m, data, TrainConfig{}), DataError);
}

TEST(Train, InvalidConfigIsAParameterError) {
    const LabeledSet data = small_synthetic(2, 42);
    CnnModel m = build_model(tiny_arch(), 1);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    EXPECT_THROW(train(m, data, cfg), ParameterError);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    EXPECT_THROW(train(m, data, cfg), ParameterError);
    cfg = TrainConfig{};
    cfg.momentum = 1.0;
    EXPECT_THROW(train(m, data, cfg), ParameterError);
}

TEST(Train, ThirtyPerClassGeneralisesToHeldOutPatches) {
    const Architecture a = scale_architecture(make_architecture(Variant::Baseline), 0.25);
    SyntheticSpec spec;
    spec.labeled_per_class = 130;
    spec.pool_size = 3;
    spec.benchmark_per_class = 1;
    spec.seed = 51;
    const LabeledSet all = generate_synthetic(spec).labeled;
    SplitSpec ss{30, 100, 52};
    const Split s = split(all, ss);
    CnnModel m = build_model(a, 53);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 54;
    const TrainReport r = train(m, s.train, cfg, s.verify);
    EXPECT_GT(r.verify_accuracy, 0.80);
    EXPECT_DOUBLE_EQ(r.verify_accuracy, accuracy(m, s.verify));
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
    CnnModel m = build_model(make_architecture(Variant::ExtraFc), 61);
    m.trained_iterations = 17;
    const auto path = std::filesystem::temp_directory_path() / "spcnn_roundtrip.ckpt";
    save_checkpoint(m, path.string());
    const CnnModel back = load_checkpoint(path.string());
    std::filesystem::remove(path);
    EXPECT_TRUE(back.same_parameters(m));
    EXPECT_EQ(back.arch, m.arch);
    EXPECT_EQ(back.rng_seed, m.rng_seed);
    EXPECT_EQ(back.trained_iterations, 17u);
    Rng rng(62);
    for (int i = 0; i < 100; ++i) {
        const Tensor x = random_patch(rng);
        EXPECT_EQ(forward_proba(back, x), forward_proba(m, x));
    }
}

TEST(Checkpoint, EveryVariantRoundTrips) {
    for (Variant v : kAllVariants) {
        const CnnModel m = build_model(make_architecture(v), 63);
        const CnnModel back = decode_checkpoint(encode_checkpoint(m));
        EXPECT_TRUE(back.same_parameters(m)) << variant_name(v);
        EXPECT_EQ(back.arch.variant, v);
    }
}

TEST(Checkpoint, BaselineParameterCountMatchesClosedForm) {
    const Architecture a = make_architecture(Variant::Baseline);
    const CnnModel back = decode_checkpoint(encode_checkpoint(build_model(a, 64)));
    std::size_t n = 0;
    for (const auto& p : back.params) n += p.value.size();
    EXPECT_EQ(n, oracle::closed_form_parameter_count(a));
}

TEST(Checkpoint, CorruptMagicIsRejected) {
    std::string bytes = encode_checkpoint(build_model(tiny_arch(), 65));
    bytes[0] = 'X';
    try {
        decode_checkpoint(bytes);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Checkpoint, TruncationAndTrailingBytesAreRejected) {
    const std::string bytes = encode_checkpoint(build_model(tiny_arch(), 66));
    for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW(decode_checkpoint(bytes.substr(0, cut)), FormatError) << cut;
    }
    EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
}

TEST(Checkpoint, BadVersionAndVariantAreRejected) {
    const std::string bytes = encode_checkpoint(build_model(tiny_arch(), 67));
    std::string bad = bytes;
    bad[4] = 9;
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad[8] = 7;
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
}

TEST(Checkpoint, MissingFileIsADataError) {
    EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), DataError);
}
