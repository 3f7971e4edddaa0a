#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "segnas/data.hpp"
#include "segnas/metrics.hpp"
#include "segnas/tape.hpp"

#include "support/fd.hpp"

using namespace segnas;

TEST_CASE("synthetic dataset generation") {
    DatasetConfig cfg;
    cfg.n_patches = 64;
    SECTION("object_rate 0 leaves every mask empty") {
        auto c = cfg;
        c.object_rate = 0.0;
        auto split = generate_synthetic_dataset<float>(c, 1);
        for (const auto& p : split.patches)
            for (int v : p.mask) REQUIRE(v == 0);
    }
    SECTION("same seed gives identical datasets") {
        auto a = generate_synthetic_dataset<float>(cfg, 9);
        auto b = generate_synthetic_dataset<float>(cfg, 9);
        REQUIRE(a.patches.size() == b.patches.size());
        for (std::size_t i = 0; i < a.patches.size(); ++i) {
            REQUIRE(a.patches[i].image.values() == b.patches[i].image.values());
            REQUIRE(a.patches[i].mask == b.patches[i].mask);
        }
    }
    SECTION("different seeds give different data") {
        auto a = generate_synthetic_dataset<float>(cfg, 9);
        auto b = generate_synthetic_dataset<float>(cfg, 10);
        bool same = true;
        for (std::size_t i = 0; i < a.patches.size() && same; ++i)
            same = a.patches[i].mask == b.patches[i].mask;
        REQUIRE_FALSE(same);
    }
    SECTION("masks are binary and images finite") {
        auto split = generate_synthetic_dataset<float>(cfg, 2);
        for (const auto& p : split.patches) {
            REQUIRE(all_finite(p.image));
            for (int v : p.mask) REQUIRE((v == 0 || v == 1));
        }
    }
    SECTION("foreground stays under 10% at default config") {
        DatasetConfig big;
        big.n_patches = 1000;
        auto split = generate_synthetic_dataset<float>(big, 3);
        std::size_t fg = 0, total = 0;
        for (const auto& p : split.patches) {
            for (int v : p.mask) fg += v;
            total += p.mask.size();
        }
        REQUIRE(static_cast<double>(fg) / static_cast<double>(total) < 0.10);
        REQUIRE(fg > 0);  // but the class does appear
    }
    SECTION("bad configs are rejected") {
        DatasetConfig bad;
        bad.height = 8;
        REQUIRE_THROWS(generate_synthetic_dataset<float>(bad, 1));
        DatasetConfig huge;
        huge.max_object_frac = 0.9;
        REQUIRE_THROWS(generate_synthetic_dataset<float>(huge, 1));
    }
}

TEST_CASE("dataset disk cache round-trips") {
    DatasetConfig cfg;
    cfg.n_patches = 8;
    auto split = generate_synthetic_dataset<float>(cfg, 4, "valid");
    const std::string dir = "dataset_cache_test";
    save_dataset(split, dir, "valid");
    auto loaded = load_dataset<float>(dir, "valid");
    REQUIRE(loaded.role == split.role);
    REQUIRE(loaded.patches.size() == split.patches.size());
    for (std::size_t i = 0; i < split.patches.size(); ++i) {
        REQUIRE(loaded.patches[i].image.values() == split.patches[i].image.values());
        REQUIRE(loaded.patches[i].mask == split.patches[i].mask);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("batched view wraps the split") {
    DatasetConfig cfg;
    cfg.n_patches = 3;
    cfg.height = cfg.width = 16;
    auto split = generate_synthetic_dataset<float>(cfg, 5);
    auto [batch, labels] = make_batch(split, 2, 2);  // wraps to patches 2, 0
    REQUIRE(batch.shape() == Shape{2, 1, 16, 16});
    REQUIRE(labels.size() == 2 * 16 * 16);
    for (std::size_t i = 0; i < 256; ++i) {
        REQUIRE(batch[i] == split.patches[2].image[i]);
        REQUIRE(labels[i] == split.patches[2].mask[i]);
    }
}

TEST_CASE("weighted cross entropy values") {
    SECTION("uniform logits on 2 classes give ln 2") {
        Tape<double> tape;
        auto l = tape.leaf(Tensor<double>({1, 2, 4, 4}, 0.0));
        auto loss = tape.weighted_cross_entropy(l, std::vector<int>(16, 1), {1.0, 1.0});
        REQUIRE(tape.value(loss)[0] == Catch::Approx(std::log(2.0)).margin(1e-12));
    }
    SECTION("large correct-class margin drives the loss to zero") {
        Tensor<double> t({1, 2, 2, 2});
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w) t.at4(0, 1, h, w) = 50.0;
        Tape<double> tape;
        auto l = tape.leaf(t);
        auto loss = tape.weighted_cross_entropy(l, std::vector<int>(4, 1), {1.0, 5.0});
        REQUIRE(tape.value(loss)[0] < 1e-12);
    }
    SECTION("hand-computed weighted mean with one misclassified pixel") {
        // 101 pixels: 100 background predicted perfectly, 1 foreground pixel
        // at softmax probability 0.5 -> loss = 10 * ln 2 / 101
        Tensor<double> t({1, 2, 1, 101});
        std::vector<int> labels(101, 0);
        labels[100] = 1;
        for (int w = 0; w < 100; ++w) t.at4(0, 0, 0, w) = 50.0;  // confident background
        // last pixel left at logits (0, 0): probability 0.5 on its class
        Tape<double> tape;
        auto l = tape.leaf(t);
        auto loss = tape.weighted_cross_entropy(l, labels, {1.0, 10.0});
        REQUIRE(tape.value(loss)[0] ==
                Catch::Approx(10.0 * std::log(2.0) / 101.0).margin(1e-9));
    }
    SECTION("non-finite logits are rejected") {
        Tensor<double> t({1, 2, 1, 1});
        t[0] = std::numeric_limits<double>::infinity();
        Tape<double> tape;
        auto l = tape.leaf(t);
        std::vector<int> labels{0};
        std::vector<double> w{1.0, 1.0};
        REQUIRE_THROWS(tape.weighted_cross_entropy(l, labels, w));
    }
    SECTION("loss gradient matches finite differences") {
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> d(-1, 1);
        Tensor<double> t({1, 2, 3, 3});
        for (double& v : t.values()) v = d(rng);
        std::vector<int> labels(9);
        for (int& l : labels) l = static_cast<int>(rng() % 2);
        auto run = [&](std::vector<double>* g) {
            Tape<double> tape;
            auto l = tape.leaf(t);
            auto loss = tape.weighted_cross_entropy(l, labels, {1.0, 5.0});
            if (g) {
                tape.backward(loss);
                *g = tape.grad(l).values();
            }
            return tape.value(loss)[0];
        };
        std::vector<double> g;
        run(&g);
        REQUIRE(testsupport::max_grad_rel_err(t.values(), g, [&]() { return run(nullptr); }) <
                1e-4);
    }
}

TEST_CASE("mean IoU") {
    SECTION("identical masks score 1") {
        std::vector<int> m{0, 1, 1, 0};
        REQUIRE(mean_iou(m, m) == 1.0);
    }
    SECTION("disjoint equal-area foregrounds have foreground IoU 0") {
        std::vector<int> a{1, 1, 0, 0, 0, 0};
        std::vector<int> b{0, 0, 1, 1, 0, 0};
        // background IoU = 2/6, foreground 0 -> mean 1/6
        REQUIRE(mean_iou(a, b) == Catch::Approx(1.0 / 6).margin(1e-12));
    }
    SECTION("half coverage of equal areas gives foreground IoU 1/3") {
        // gt covers 2 pixels, pred covers 2 pixels, overlap 1
        std::vector<int> gt{1, 1, 0, 0};
        std::vector<int> pr{0, 1, 1, 0};
        // fg: 1/3; bg: 1/3; mean = 1/3
        REQUIRE(mean_iou(pr, gt) == Catch::Approx(1.0 / 3).margin(1e-12));
    }
    SECTION("both masks empty score 1 for both classes") {
        std::vector<int> z(8, 0);
        REQUIRE(mean_iou(z, z) == 1.0);
    }
    SECTION("symmetry and bounds") {
        std::mt19937_64 rng(7);
        for (int it = 0; it < 100; ++it) {
            std::vector<int> a(25), b(25);
            for (int& v : a) v = static_cast<int>(rng() % 2);
            for (int& v : b) v = static_cast<int>(rng() % 2);
            const double ab = mean_iou(a, b);
            REQUIRE(ab == mean_iou(b, a));
            REQUIRE(ab >= 0.0);
            REQUIRE(ab <= 1.0);
        }
    }
}

TEST_CASE("object-level precision-recall") {
    const int H = 8, W = 8;
    auto blank = []() { return std::vector<int>(64, 0); };
    auto block = [&](std::vector<int>& m, int r0, int c0, int r1, int c1) {
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) m[r * 8 + c] = 1;
    };
    const std::vector<double> th{0.25, 0.5, 0.75, 1.0};

    SECTION("perfect prediction is P=R=1 everywhere") {
        auto gt = blank();
        block(gt, 1, 1, 3, 3);
        block(gt, 5, 5, 7, 7);
        auto rep = pr_curve({gt}, {gt}, H, W, th);
        for (const auto& p : rep.pr_points) {
            REQUIRE(p.precision == 1.0);
            REQUIRE(p.recall == 1.0);
        }
        REQUIRE(rep.mean_iou == 1.0);
    }
    SECTION("no predictions: precision 1 by convention, recall 0") {
        auto gt = blank();
        block(gt, 2, 2, 4, 4);
        auto rep = pr_curve({blank()}, {gt}, H, W, th);
        for (const auto& p : rep.pr_points) {
            REQUIRE(p.precision == 1.0);
            REQUIRE(p.recall == 0.0);
            REQUIRE(p.fn == 1);
        }
    }
    SECTION("one of two objects found: P=1, R=0.5 at every threshold") {
        auto gt = blank();
        block(gt, 0, 0, 2, 2);
        block(gt, 5, 5, 7, 7);
        auto pred = blank();
        block(pred, 0, 0, 2, 2);
        auto rep = pr_curve({pred}, {gt}, H, W, th);
        for (const auto& p : rep.pr_points) {
            REQUIRE(p.precision == 1.0);
            REQUIRE(p.recall == 0.5);
            REQUIRE(p.tp == 1);
            REQUIRE(p.fp == 0);
            REQUIRE(p.fn == 1);
        }
    }
    SECTION("precision and recall never increase with the threshold") {
        std::mt19937_64 rng(8);
        for (int it = 0; it < 20; ++it) {
            std::vector<int> pred(64), gt(64);
            for (int& v : pred) v = rng() % 3 == 0;
            for (int& v : gt) v = rng() % 3 == 0;
            auto rep = pr_curve({pred}, {gt}, H, W, th);
            for (std::size_t i = 1; i < rep.pr_points.size(); ++i) {
                REQUIRE(rep.pr_points[i].precision <= rep.pr_points[i - 1].precision + 1e-12);
                REQUIRE(rep.pr_points[i].recall <= rep.pr_points[i - 1].recall + 1e-12);
            }
        }
    }
    SECTION("thresholds must be strictly increasing") {
        auto gt = blank();
        REQUIRE_THROWS(pr_curve({gt}, {gt}, H, W, {0.5, 0.5}));
    }
    SECTION("PR csv export") {
        auto gt = blank();
        block(gt, 2, 2, 4, 4);
        auto rep = pr_curve({gt}, {gt}, H, W, th);
        const std::string path = "pr_test.csv";
        save_pr_csv(rep, path);
        std::ifstream f(path);
        std::string header;
        std::getline(f, header);
        REQUIRE(header.find("threshold") != std::string::npos);
        int lines = 0;
        for (std::string line; std::getline(f, line);) ++lines;
        REQUIRE(lines == static_cast<int>(th.size()));
        std::remove(path.c_str());
    }
}

TEST_CASE("connected components use 4-connectivity") {
    // two diagonal pixels are separate objects under 4-connectivity
    std::vector<int> m(16, 0);
    m[0] = 1;       // (0,0)
    m[5] = 1;       // (1,1)
    std::vector<int> labels;
    REQUIRE(connected_components(m, 4, 4, labels) == 2);
    m[1] = 1;  // (0,1) bridges them
    REQUIRE(connected_components(m, 4, 4, labels) == 1);
}
