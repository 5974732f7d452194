#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "spcnn/bootstrap.hpp"
#include "spcnn/dataset.hpp"
#include "spcnn/errors.hpp"

using namespace spcnn;

namespace {

Architecture tiny_arch() {
    Architecture a = make_architecture(Variant::Baseline);
    a.conv_kernel_counts = {2, 2, 2, 2};
    a.fc_sizes = {12, 6, 3};
    return a;
}

/// `per_class` patches of each class with distinct ids; pixels are not rendered.
LabeledSet counted_set(std::size_t per_class) {
    LabeledSet out;
    for (int c = 0; c < kNumClasses; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            out.push_back(LabeledPatch{Tensor({1, 1, 1}), c, Origin::Manual, static_cast<std::int64_t>(out.size())});
        }
    }
    return out;
}

LabeledSet small_train(std::uint64_t seed, std::size_t per_class) {
    SyntheticSpec spec;
    spec.labeled_per_class = per_class;
    spec.pool_size = 1;
    spec.benchmark_per_class = 1;
    spec.seed = seed;
    return generate_synthetic(spec).labeled;
}

BootstrapConfig tiny_config(std::size_t workers) {
    BootstrapConfig cfg;
    cfg.n_networks = 4;
    cfg.base_seed = 77;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    cfg.n_workers = workers;
    return cfg;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

}  // namespace

TEST(Subsample, FourHundredPerClassGivesThreeSixty) {
    const LabeledSet train = counted_set(400);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const LabeledSet s = subsample(train, 0.9, seed);
        EXPECT_EQ(s.size(), 1080u);
        EXPECT_EQ(class_counts(s), (std::array<std::size_t, 3>{360, 360, 360}));
    }
}

TEST(Subsample, IsWithoutReplacement) {
    const LabeledSet s = subsample(counted_set(50), 0.9, 3);
    std::set<std::int64_t> ids;
    for (const auto& p : s) ids.insert(p.id);
    EXPECT_EQ(ids.size(), s.size());
}

TEST(Subsample, FullFractionIsAPermutation) {
    const LabeledSet train = counted_set(30);
    const LabeledSet s = subsample(train, 1.0, 4);
    ASSERT_EQ(s.size(), train.size());
    std::set<std::int64_t> ids;
    bool moved = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        ids.insert(s[i].id);
        moved = moved || s[i].id != train[i].id;
    }
    EXPECT_EQ(ids.size(), train.size());
    EXPECT_TRUE(moved);
}

TEST(Subsample, SeedChangesMembershipNotCounts) {
    const LabeledSet train = counted_set(100);
    const LabeledSet a = subsample(train, 0.9, 1), b = subsample(train, 0.9, 2), a2 = subsample(train, 0.9, 1);
    std::set<std::int64_t> ia, ib;
    for (const auto& p : a) ia.insert(p.id);
    for (const auto& p : b) ib.insert(p.id);
    EXPECT_NE(ia, ib);
    EXPECT_EQ(class_counts(a), class_counts(b));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, a2[i].id);
}

TEST(Subsample, CountsAreRoundHalfUpForAllSizes) {
    // Rational reference: round(f * n) with f = num/den, halves rounded up.
    for (std::size_t den : {10u, 20u, 40u}) {
        for (std::size_t num = 1; num <= den; ++num) {
            const double f = static_cast<double>(num) / static_cast<double>(den);
            for (std::size_t n = 1; n <= 60; ++n) {
                const std::size_t expected = (2 * num * n + den) / (2 * den);
                ASSERT_EQ(subsample_count(n, f), expected) << "n=" << n << " f=" << num << "/" << den;
            }
        }
    }
    EXPECT_EQ(subsample_count(5, 0.9), 5u);
    EXPECT_EQ(subsample_count(5, 0.5), 3u);
    EXPECT_EQ(subsample_count(400, 0.9), 360u);
}

TEST(Subsample, EmptyClassAndBadFractionAreErrors) {
    LabeledSet train = counted_set(10);
    std::erase_if(train, [](const LabeledPatch& p) { return p.label == 1; });
    EXPECT_THROW(subsample(train, 0.9, 1), DataError);
    EXPECT_THROW(subsample(counted_set(1), 0.4, 1), DataError);
    EXPECT_THROW(subsample(counted_set(10), 0.0, 1), ParameterError);
    EXPECT_THROW(subsample(counted_set(10), 1.1, 1), ParameterError);
}

TEST(BootstrapConfig, Validation) {
    BootstrapConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.n_networks = 1;
    EXPECT_THROW(cfg.validate(), ParameterError);
    cfg = BootstrapConfig{};
    cfg.subsample_fraction = 0.0;
    EXPECT_THROW(cfg.validate(), ParameterError);
    cfg = BootstrapConfig{};
    cfg.n_workers = 0;
    EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(ParallelFor, RunsEveryJobOnceAndReportsLowestFailure) {
    for (std::size_t workers : {1u, 3u, 8u}) {
        std::vector<std::atomic<int>> hits(17);
        parallel_for(hits.size(), workers, [&](std::size_t i) { ++hits[i]; });
        for (auto& h : hits) EXPECT_EQ(h.load(), 1);
        try {
            parallel_for(10, workers, [](std::size_t i) {
                if (i == 3 || i == 7) throw DataError("job " + std::to_string(i));
            });
            FAIL() << "expected DataError";
        } catch (const DataError& e) {
            EXPECT_STREQ(e.what(), "job 3");
        }
    }
}

TEST(Ensemble, IsWorkerCountInvariant) {
    const LabeledSet train = small_train(5, 12);
    const auto one = train_ensemble(train, tiny_arch(), tiny_config(1));
    const auto four = train_ensemble(train, tiny_arch(), tiny_config(4));
    ASSERT_EQ(one.size(), 4u);
    ASSERT_EQ(four.size(), 4u);
    for (std::size_t i = 0; i < one.size(); ++i) {
        EXPECT_EQ(encode_checkpoint(one[i]), encode_checkpoint(four[i])) << "network " << i;
        EXPECT_EQ(one[i].rng_seed, 77u + i);
    }
    EXPECT_FALSE(one[0].same_parameters(one[1]));
}

TEST(Ensemble, NetworkMatchesManualReconstruction) {
    const LabeledSet data = small_train(6, 12);
    const BootstrapConfig cfg = tiny_config(2);
    const auto ens = train_ensemble(data, tiny_arch(), cfg);
    const std::uint64_t seed = cfg.base_seed + 2;
    CnnModel manual = build_model(tiny_arch(), seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    train(manual, subsample(data, cfg.subsample_fraction, seed), tc);
    EXPECT_TRUE(manual.same_parameters(ens[2]));
    // Each network sees round(0.9 * 12) = 11 patches per class.
    EXPECT_EQ(ens[2].trained_iterations, (33u + 7) / 8);
}

TEST(Ensemble, ErrorsNameTheNetwork) {
    LabeledSet train = small_train(7, 6);
    std::erase_if(train, [](const LabeledPatch& p) { return p.label == 2; });
    try {
        train_ensemble(train, tiny_arch(), tiny_config(2));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("bootstrap network 0: ", 0), 0u) << e.what();
    }
}

TEST(PredictPool, SingleNetworkRowsEqualForwardProba) {
    const LabeledSet train = small_train(8, 4);
    UnlabeledPool pool;
    for (const auto& p : train) pool.push_back(UnlabeledPatch{p.pixels, 100 + p.id});
    const CnnModel m = build_model(tiny_arch(), 9);
    const auto mats = predict_pool(std::span<const CnnModel>(&m, 1), pool);
    ASSERT_EQ(mats.size(), pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        EXPECT_EQ(mats[i].patch_id, pool[i].patch_id);
        ASSERT_EQ(mats[i].rows, 1u);
        ASSERT_EQ(mats[i].cols, 3u);
        const Tensor p = forward_proba(m, pool[i].pixels);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(mats[i].at(0, c), p[c]);
    }
}

TEST(PredictPool, RowsAreDistributionsAndClonesMatch) {
    const LabeledSet train = small_train(10, 4);
    std::vector<CnnModel> ens;
    for (std::uint64_t s = 0; s < 5; ++s) ens.push_back(build_model(tiny_arch(), s));
    UnlabeledPool pool;
    for (const auto& p : train) pool.push_back(UnlabeledPatch{p.pixels, p.id});
    pool.push_back(UnlabeledPatch{pool[3].pixels, 999});
    const auto serial = predict_pool(ens, pool, 1);
    const auto threaded = predict_pool(ens, pool, 3);
    EXPECT_EQ(serial, threaded);
    for (const auto& m : serial) {
        ASSERT_EQ(m.rows, 5u);
        for (std::size_t r = 0; r < m.rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < m.cols; ++c) {
                EXPECT_GE(m.at(r, c), 0.0);
                EXPECT_LE(m.at(r, c), 1.0);
                s += m.at(r, c);
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
    EXPECT_EQ(serial[3].probs, serial.back().probs);
    EXPECT_EQ(serial[3].column(1), (std::vector<double>{serial[3].at(0, 1), serial[3].at(1, 1), serial[3].at(2, 1),
                                                        serial[3].at(3, 1), serial[3].at(4, 1)}));
}

TEST(PredictPool, ShapeMismatchNamesThePatch) {
    const CnnModel m = build_model(tiny_arch(), 1);
    UnlabeledPool pool{UnlabeledPatch{Tensor({1, 36, 36}), 0}, UnlabeledPatch{Tensor({1, 30, 30}), 41}};
    try {
        predict_pool(std::span<const CnnModel>(&m, 1), pool);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("pool patch 41"), std::string::npos) << e.what();
    }
    EXPECT_THROW(predict_pool(std::span<const CnnModel>(), pool), ParameterError);
}

TEST(PredictionCsv, RoundTripIsExact) {
    std::vector<PredictionMatrix> mats;
    Rng rng(11);
    for (std::int64_t id : {5, 2, 9}) {
        PredictionMatrix m{id, 4, 3, {}};
        for (std::size_t r = 0; r < 4; ++r) {
            const double a = rng.uniform(), b = rng.uniform() * (1 - a);
            m.probs.insert(m.probs.end(), {a, b, 1 - a - b});
        }
        mats.push_back(m);
    }
    const std::string path = temp_path("spcnn_predictions.csv");
    write_predictions_csv(path, mats);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "patch_id,network_index,p_class0,p_class1,p_class2");
    EXPECT_EQ(read_predictions_csv(path), mats);
    std::filesystem::remove(path);
}

TEST(PredictionCsv, MalformedFilesAreDataErrors) {
    const std::string path = temp_path("spcnn_bad_predictions.csv");
    const std::string header = "patch_id,network_index,p_class0,p_class1,p_class2\n";
    const std::map<std::string, std::string> cases = {
        {"wrong header", "id,net,a,b,c\n0,0,0.2,0.3,0.5\n"},
        {"field count", header + "0,0,0.2,0.3\n"},
        {"bad number", header + "0,0,0.2,x,0.5\n"},
        {"skipped row", header + "0,0,0.2,0.3,0.5\n0,2,0.2,0.3,0.5\n"},
        {"ragged", header + "0,0,0.2,0.3,0.5\n0,1,0.2,0.3,0.5\n1,0,0.2,0.3,0.5\n"},
    };
    for (const auto& [name, text] : cases) {
        write_text(path, text);
        EXPECT_THROW(read_predictions_csv(path), DataError) << name;
    }
    std::filesystem::remove(path);
    EXPECT_THROW(read_predictions_csv(path), DataError);
}
