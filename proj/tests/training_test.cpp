#include <chrono>
#include <cstring>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "dumpwatch/ops.hpp"
#include "dumpwatch/optim.hpp"
#include "dumpwatch/parallel.hpp"
#include "dumpwatch/random.hpp"
#include "dumpwatch/training.hpp"
#include "oracles.hpp"

namespace dumpwatch {
namespace {

Mask from_cells(int w, int h, std::initializer_list<std::pair<int, int>> cells) {
    Mask m(w, h);
    for (auto [r, c] : cells) m.at(r, c) = 1;
    return m;
}

TEST(IouTest, Examples) {
    auto a = from_cells(3, 1, {{0, 0}, {0, 1}});
    auto b = from_cells(3, 1, {{0, 1}, {0, 2}});
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(iou(from_cells(3, 1, {{0, 0}}), from_cells(3, 1, {{0, 2}})), 0.0);
    EXPECT_DOUBLE_EQ(iou(Mask(3, 3), Mask(3, 3)), 1.0);
    EXPECT_THROW(iou(Mask(2, 2), Mask(3, 2)), std::invalid_argument);
}

TEST(IouTest, MatchesSetOracleAndIsSymmetric) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> side(1, 16);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        const int w = side(rng), h = side(rng);
        auto a = oracle::random_mask(rng, w, h, density(rng));
        auto b = oracle::random_mask(rng, w, h, density(rng));
        const double v = iou(a, b);
        EXPECT_DOUBLE_EQ(v, oracle::set_iou(a, b));
        EXPECT_DOUBLE_EQ(v, iou(b, a));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    }
}

Chip mask_chip(int size, std::size_t positives) {
    Chip c;
    c.size = size;
    c.band_names = {"R"};
    c.samples.assign(static_cast<std::size_t>(size) * size, 0.0f);
    c.mask = Mask(size, size);
    for (std::size_t i = 0; i < positives; ++i) c.mask.data[i] = 1;
    return c;
}

TEST(PosWeightTest, Examples) {
    std::vector<Chip> balanced{mask_chip(10, 50)};
    EXPECT_DOUBLE_EQ(auto_pos_weight(balanced), 1.0);
    std::vector<Chip> skewed{mask_chip(100, 100)};
    EXPECT_DOUBLE_EQ(auto_pos_weight(skewed), 99.0);
    std::vector<Chip> extreme{mask_chip(1000, 100)};
    EXPECT_DOUBLE_EQ(auto_pos_weight(extreme), 100.0);
    std::vector<Chip> none{mask_chip(10, 0)};
    EXPECT_THROW(auto_pos_weight(none), std::invalid_argument);
    std::vector<Chip> all{mask_chip(10, 100)};
    EXPECT_THROW(auto_pos_weight(all), std::invalid_argument);
}

TEST(PlateauTest, FlatLossStopsAfterPatience) {
    for (int k = 1; k <= 6; ++k)
        for (int patience = 1; patience <= 5; ++patience) {
            PlateauTracker t(patience, 1e-4);
            int stop = 0;
            for (int epoch = 1; epoch <= 100 && !stop; ++epoch) {
                const double loss = epoch <= k ? 1.0 - 0.1 * epoch : 1.0 - 0.1 * k;
                if (t.update(loss)) stop = epoch;
            }
            EXPECT_EQ(stop, k + patience);
        }
}

TEST(PlateauTest, SmallImprovementsDoNotReset) {
    PlateauTracker t(3, 1e-2);
    EXPECT_FALSE(t.update(1.0));
    EXPECT_FALSE(t.update(0.995));
    EXPECT_FALSE(t.update(0.99));
    EXPECT_TRUE(t.update(0.9905));
}

TEST(ReflectTest, MirrorsWithoutRepeatingEdge) {
    const std::vector<long> expected = {3, 2, 1, 0, 1, 2, 3, 2, 1, 0};
    for (long i = -3; i < 7; ++i) EXPECT_EQ(reflect_index(i, 4), expected[static_cast<std::size_t>(i + 3)]);
    EXPECT_EQ(reflect_index(5, 1), 0);
    EXPECT_EQ(padded_size(100, 16), 112);
    EXPECT_EQ(padded_size(64, 4), 64);
}

TEST(BatchTest, PaddedBatchKeepsChipInCentre) {
    Chip c = mask_chip(100, 7);
    for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = static_cast<float>(i);
    const Chip* ptr = &c;
    int offset = -1;
    auto batch = make_batch(std::span(&ptr, 1), 16, &offset);
    EXPECT_EQ(batch.shape(), (Shape{1, 1, 112, 112}));
    EXPECT_EQ(offset, 6);
    for (int r = 0; r < 100; ++r)
        for (int q = 0; q < 100; ++q)
            EXPECT_EQ(batch[static_cast<std::size_t>(r + 6) * 112 + q + 6], c.samples[static_cast<std::size_t>(r) * 100 + q]);
    EXPECT_EQ(batch[0], c.samples[6 * 100 + 6]);
    auto targets = make_targets(std::span(&ptr, 1));
    EXPECT_EQ(targets.shape(), (Shape{1, 1, 100, 100}));
    EXPECT_EQ(targets[6], 1.0f);
    EXPECT_EQ(targets[7], 0.0f);
}

// Synthetic chips normalized per band; the U-Net input contract.
DatasetSplit synthetic_split(int scene_size, int chip, int stride, std::uint64_t seed, int dumps = 4) {
    SynthConfig cfg;
    cfg.scene_size = scene_size;
    cfg.dump_count = dumps;
    cfg.background_texture_seed = seed;
    auto scene = generate_synthetic(cfg);
    auto stacked = stack_bands(scene.raster, BandSpec::default_six());
    auto mask = rasterize_mask(scene.annotations, stacked.transform, scene_size, scene_size);
    auto split = split_dataset(extract_chips(stacked, mask, {chip, stride, 1.0, seed}), 0.1, 0.2, seed);
    auto stats = fit_normalization(split.train);
    split.train = apply_normalization(split.train, stats);
    split.val = apply_normalization(split.val, stats);
    split.test = apply_normalization(split.test, stats);
    return split;
}

TEST(EvaluateTest, ConfidentModelOnPositiveChip) {
    UNetConfig cfg{1, 1, 1};
    auto p = build_unet<float>(cfg, 1);
    for (auto& v : p.at("head.weight").values()) v = 0.0f;
    p.at("head.bias")[0] = 1e4f;
    std::vector<Chip> chips{mask_chip(8, 64)};
    auto m = evaluate(p, cfg, chips, 0.5, 1.0);
    EXPECT_DOUBLE_EQ(m.mean_iou, 1.0);
    EXPECT_DOUBLE_EQ(m.loss, 0.0);
    EXPECT_THROW(evaluate(p, cfg, std::span<const Chip>{}, 0.5, 1.0), std::invalid_argument);
}

TEST(EvaluateTest, RandomWeightsStayInRangeAndAggregate) {
    auto split = synthetic_split(96, 32, 16, 5, 3);
    UNetConfig cfg{6, 2, 4};
    auto p = build_unet<float>(cfg, 2);
    auto m = evaluate(p, cfg, split.train, 0.5, 2.0);
    ASSERT_EQ(m.per_chip_iou.size(), split.train.size());
    double sum = 0.0;
    for (double v : m.per_chip_iou) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        sum += v;
    }
    EXPECT_NEAR(m.mean_iou, sum / static_cast<double>(m.per_chip_iou.size()), 1e-12);
}

TEST(EvaluateTest, MatchesGraphLossOnPaddedChips) {
    // 36 is not a multiple of 8: exercises the pad-and-crop path.
    auto split = synthetic_split(72, 36, 36, 6, 2);
    UNetConfig cfg{6, 3, 2};
    auto p = build_unet<float>(cfg, 3);
    auto m = evaluate(p, cfg, split.train, 0.5, 4.0);
    std::vector<const Chip*> ptrs;
    for (const auto& c : split.train) ptrs.push_back(&c);
    Graph<float> g(Graph<float>::Mode::kInference);
    int off = 0;
    auto logits = unet_forward(g, p, cfg, make_batch(ptrs, cfg.divisor(), &off));
    auto cropped = crop2d(g, logits, off, off, 36, 36);
    const double expected = weighted_bce_with_logits(g, cropped, make_targets(ptrs), 4.0).item();
    EXPECT_NEAR(m.loss, expected, 1e-5);
}

TEST(TrainTest, PosWeightRaisesLossWithImperfectPositives) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(-3, 3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor z({2, 1, 4, 4}), y({2, 1, 4, 4});
        for (auto& v : z.values()) v = u(rng);
        for (auto& v : y.values()) v = (rng() % 3 == 0) ? 1.0f : 0.0f;
        y[0] = 1.0f;
        double last = -1.0;
        for (double w : {0.5, 1.0, 2.0, 10.0, 50.0}) {
            Graph<float> g(Graph<float>::Mode::kInference);
            const double loss = weighted_bce_with_logits(g, z, y, w).item();
            EXPECT_GT(loss, last);
            last = loss;
        }
    }
}

TEST(TrainTest, SmallLearningRateDescendsOnFixedBatch) {
    auto split = synthetic_split(96, 32, 16, 7, 3);
    split.train.resize(4);
    UNetConfig cfg{6, 2, 4};
    auto params = build_unet<float>(cfg, 11);
    auto tensors = params.tensors();
    std::vector<const Chip*> ptrs;
    for (const auto& c : split.train) ptrs.push_back(&c);
    auto x = make_batch(ptrs, cfg.divisor());
    auto y = make_targets(ptrs);
    AdamState<float> adam;
    adam.learning_rate = 1e-4;
    double last = 1e30;
    for (int step = 0; step < 10; ++step) {
        zero_grads(std::span(tensors));
        Graph<float> g;
        auto loss = weighted_bce_with_logits(g, unet_forward(g, params, cfg, x), y, 2.0);
        EXPECT_LE(loss.item(), last) << "step " << step;
        last = loss.item();
        backward(g, loss);
        adam_step(std::span(tensors), adam);
    }
}

TEST(TrainTest, ReportInvariantsAndDeterminism) {
    auto split = synthetic_split(128, 32, 16, 8, 4);
    UNetConfig cfg{6, 2, 4};
    Hyperparams h;
    h.batch_size = 8;
    h.max_epochs = 6;
    h.plateau_patience = 2;
    h.seed = 21;
    auto init = build_unet<float>(cfg, derive_seed(h.seed, "init"));
    auto a = train(init, cfg, split, h);
    auto b = train(init, cfg, split, h);
    ASSERT_FALSE(a.report.epochs.empty());
    EXPECT_LE(a.report.stopping_epoch, h.max_epochs);
    EXPECT_EQ(a.report.epochs.size(), static_cast<std::size_t>(a.report.stopping_epoch));
    std::size_t argmin = 0;
    for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
        EXPECT_EQ(a.report.epochs[i].epoch, static_cast<int>(i + 1));
        if (a.report.epochs[i].val_loss < a.report.epochs[argmin].val_loss) argmin = i;
    }
    EXPECT_EQ(a.report.best_epoch, static_cast<int>(argmin + 1));
    ASSERT_TRUE(a.report.test.has_value());
    // Best parameters are the ones that produced the best validation loss.
    EXPECT_NEAR(evaluate(a.params, cfg, split.val, 0.5, a.report.pos_weight, h.batch_size).loss,
                a.report.best_val_loss, 1e-12);

    auto ja = a.report.to_json(), jb = b.report.to_json();
    ja.erase("wall_time_s");
    jb.erase("wall_time_s");
    EXPECT_EQ(ja.dump(), jb.dump());
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        auto va = a.params.entries()[i].second.values(), vb = b.params.entries()[i].second.values();
        EXPECT_EQ(0, std::memcmp(va.data(), vb.data(), va.size_bytes()));
    }
    // The caller's initial parameters are left alone.
    EXPECT_EQ(init.at("head.bias")[0], 0.0f);
}

TEST(TrainTest, ThreadCountDoesNotChangeResults) {
    auto split = synthetic_split(96, 32, 32, 12, 3);
    UNetConfig cfg{6, 1, 4};
    Hyperparams h;
    h.batch_size = 4;
    h.max_epochs = 2;
    auto init = build_unet<float>(cfg, 4);
    const auto saved = thread_count();
    set_thread_count(1);
    auto a = train(init, cfg, split, h);
    set_thread_count(3);
    auto b = train(init, cfg, split, h);
    set_thread_count(saved);
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        auto va = a.params.entries()[i].second.values(), vb = b.params.entries()[i].second.values();
        EXPECT_EQ(0, std::memcmp(va.data(), vb.data(), va.size_bytes())) << a.params.entries()[i].first;
    }
}

TEST(TrainTest, Errors) {
    UNetConfig cfg{6, 1, 2};
    auto p = build_unet<float>(cfg, 0);
    EXPECT_THROW(train(p, cfg, DatasetSplit{}, Hyperparams{}), std::invalid_argument);
    Hyperparams bad;
    bad.batch_size = 0;
    auto split = synthetic_split(64, 32, 32, 1, 2);
    EXPECT_THROW(train(p, cfg, split, bad), std::invalid_argument);
    Hyperparams diverge;
    diverge.max_epochs = 1;
    diverge.pos_weight = 1.0;
    auto broken = p.clone();
    broken.at("head.bias")[0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(train(broken, cfg, split, diverge), std::runtime_error);
}

TEST(AblationTest, TableShape) {
    auto scene = generate_synthetic({.scene_size = 96, .dump_count = 3, .background_texture_seed = 2});
    auto stacked = stack_bands(scene.raster, BandSpec::default_six());
    auto mask = rasterize_mask(scene.annotations, stacked.transform, 96, 96);
    auto split = split_dataset(extract_chips(stacked, mask, {32, 16, 1.0, 2}), 0.2, 0.2, 2);
    Hyperparams h;
    h.max_epochs = 1;
    h.batch_size = 8;
    const auto specs = ablation_specs();
    const std::vector<std::uint64_t> seeds{1};
    auto table = ablate(split, specs, UNetConfig{6, 1, 2}, h, seeds);
    ASSERT_EQ(table.rows.size(), 4u);
    EXPECT_EQ(table.rows[0].label, "RGB");
    EXPECT_EQ(table.rows[1].label, "RGB-NIR");
    EXPECT_EQ(table.rows[2].label, "RGB-NIR-SWIR");
    EXPECT_EQ(table.rows[3].label, "RGB-NIR-SWIR-NDSW");
    auto j = table.to_json();
    ASSERT_EQ(j["rows"].size(), 4u);
    for (const auto& row : j["rows"]) {
        EXPECT_TRUE(row.contains("label"));
        EXPECT_TRUE(row.contains("loss"));
        EXPECT_TRUE(row.contains("iou"));
    }
    const auto text = table.to_table();
    EXPECT_NE(text.find("RGB-NIR-SWIR-NDSW"), std::string::npos);
    EXPECT_NE(text.find("IoU"), std::string::npos);
}

}  // namespace
}  // namespace dumpwatch
