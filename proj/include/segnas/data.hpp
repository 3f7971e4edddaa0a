#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "segnas/tensor.hpp"

namespace segnas {

// Synthetic two-class segmentation patches: textured grayscale background
// with 0-3 bright elliptical or rectangular objects, some clipped at the
// borders, some patches empty. Deterministic per seed.
struct DatasetConfig {
    int height = 64;
    int width = 64;
    int n_patches = 512;
    double object_rate = 0.8;   // probability a patch contains objects at all
    double edge_clipping = 0.3; // fraction of objects centered near the border
    double max_object_frac = 0.25;  // max radius as a fraction of min(H, W)
    bool rectangles = true;     // mix rectangles in with ellipses
};

template <typename T>
struct Patch {
    Tensor<T> image;         // (1, 1, H, W)
    std::vector<int> mask;   // H*W, {0,1}
};

template <typename T>
struct DatasetSplit {
    std::vector<Patch<T>> patches;
    std::string role;  // train | valid | test
    std::uint64_t seed = 0;
};

template <typename T>
DatasetSplit<T> generate_synthetic_dataset(const DatasetConfig& cfg, std::uint64_t seed,
                                           const std::string& role = "train") {
    const int H = cfg.height, W = cfg.width;
    if (H < 16 || W < 16) throw std::invalid_argument("patch size must be >= 16");
    const double max_r = cfg.max_object_frac * std::min(H, W);
    if (max_r >= std::min(H, W) / 2.0 + 1)
        throw std::invalid_argument("max_object_frac allows objects larger than the patch");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    DatasetSplit<T> split;
    split.role = role;
    split.seed = seed;
    split.patches.reserve(cfg.n_patches);
    for (int p = 0; p < cfg.n_patches; ++p) {
        Patch<T> patch{Tensor<T>(Shape{1, 1, H, W}), std::vector<int>(H * W, 0)};
        // low-frequency texture + pixel noise
        const double fx = 1 + 3 * uni(rng), fy = 1 + 3 * uni(rng);
        const double phx = 2 * std::numbers::pi * uni(rng);
        const double phy = 2 * std::numbers::pi * uni(rng);
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double v = 0.25 + 0.08 * std::sin(fx * w * 2 * std::numbers::pi / W + phx) *
                                      std::cos(fy * h * 2 * std::numbers::pi / H + phy);
                v += 0.04 * (uni(rng) - 0.5);
                patch.image[static_cast<std::size_t>(h) * W + w] = static_cast<T>(v);
            }
        int n_obj = 0;
        if (cfg.object_rate > 0 && uni(rng) < cfg.object_rate)
            n_obj = 1 + static_cast<int>(uni(rng) * 3.0);  // 1..3
        for (int o = 0; o < n_obj; ++o) {
            const bool clipped = uni(rng) < cfg.edge_clipping;
            double cx, cy;
            if (clipped) {
                // center within one radius of a border
                const int side = static_cast<int>(uni(rng) * 4.0);
                const double m = max_r * 0.5;
                cx = (side == 0) ? uni(rng) * m
                                 : (side == 1 ? W - uni(rng) * m : uni(rng) * W);
                cy = (side == 2) ? uni(rng) * m
                                 : (side == 3 ? H - uni(rng) * m : uni(rng) * H);
            } else {
                cx = max_r + uni(rng) * (W - 2 * max_r);
                cy = max_r + uni(rng) * (H - 2 * max_r);
            }
            const double ra = 2.0 + uni(rng) * (max_r - 2.0);
            const double rb = 2.0 + uni(rng) * (max_r - 2.0);
            const double ang = std::numbers::pi * uni(rng);
            const double ca = std::cos(ang), sa = std::sin(ang);
            const bool rect = cfg.rectangles && uni(rng) < 0.4;
            const double bright = 0.65 + 0.3 * uni(rng);
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const double dx = w - cx, dy = h - cy;
                    const double u = ca * dx + sa * dy;
                    const double v2 = -sa * dx + ca * dy;
                    const bool inside = rect ? (std::abs(u) <= ra && std::abs(v2) <= rb)
                                             : (u * u / (ra * ra) + v2 * v2 / (rb * rb) <= 1.0);
                    if (inside) {
                        const std::size_t i = static_cast<std::size_t>(h) * W + w;
                        patch.image[i] = static_cast<T>(bright + 0.05 * (uni(rng) - 0.5));
                        patch.mask[i] = 1;
                    }
                }
        }
        split.patches.push_back(std::move(patch));
    }
    return split;
}

// ---- on-disk cache: JSON index + raw binary tiles ----
// Layout per patch, little-endian: H*W float32 image values then H*W uint8
// mask values, patches in index order.

template <typename T>
void save_dataset(const DatasetSplit<T>& split, const std::string& dir,
                  const std::string& name) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string bin_path = dir + "/" + name + ".bin";
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + bin_path);
    nlohmann::json idx;
    idx["role"] = split.role;
    idx["seed"] = split.seed;
    idx["count"] = split.patches.size();
    if (!split.patches.empty()) {
        idx["height"] = split.patches[0].image.dim(2);
        idx["width"] = split.patches[0].image.dim(3);
    }
    for (const auto& p : split.patches) {
        for (const T& v : p.image.values()) {
            const float f = static_cast<float>(v);
            bin.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
        for (int m : p.mask) {
            const std::uint8_t b = static_cast<std::uint8_t>(m);
            bin.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
    std::ofstream(dir + "/" + name + ".json") << idx.dump(2) << "\n";
}

template <typename T>
DatasetSplit<T> load_dataset(const std::string& dir, const std::string& name) {
    std::ifstream idxf(dir + "/" + name + ".json");
    if (!idxf) throw std::runtime_error("missing dataset index " + dir + "/" + name + ".json");
    nlohmann::json idx;
    idxf >> idx;
    DatasetSplit<T> split;
    split.role = idx.at("role");
    split.seed = idx.at("seed");
    const std::size_t count = idx.at("count");
    const int H = idx.value("height", 0), W = idx.value("width", 0);
    std::ifstream bin(dir + "/" + name + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("missing dataset tiles " + dir + "/" + name + ".bin");
    for (std::size_t p = 0; p < count; ++p) {
        Patch<T> patch{Tensor<T>(Shape{1, 1, H, W}), std::vector<int>(H * W, 0)};
        for (T& v : patch.image.values()) {
            float f;
            bin.read(reinterpret_cast<char*>(&f), sizeof(float));
            v = static_cast<T>(f);
        }
        for (int& m : patch.mask) {
            std::uint8_t b;
            bin.read(reinterpret_cast<char*>(&b), 1);
            m = b;
        }
        if (!bin) throw std::runtime_error("truncated dataset tiles for " + name);
        split.patches.push_back(std::move(patch));
    }
    return split;
}

// Stack n consecutive patches (wrapping) into one batch tensor + label vector.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> make_batch(const DatasetSplit<T>& split,
                                                  std::size_t start, int n) {
    const int H = split.patches.at(0).image.dim(2);
    const int W = split.patches.at(0).image.dim(3);
    Tensor<T> batch(Shape{n, 1, H, W});
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(n) * H * W);
    for (int i = 0; i < n; ++i) {
        const auto& p = split.patches[(start + i) % split.patches.size()];
        std::copy(p.image.values().begin(), p.image.values().end(),
                  batch.data() + static_cast<std::size_t>(i) * H * W);
        labels.insert(labels.end(), p.mask.begin(), p.mask.end());
    }
    return {std::move(batch), std::move(labels)};
}

}  // namespace segnas
