#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "dumpwatch/dataset.hpp"
#include "dumpwatch/random.hpp"

namespace dumpwatch {

std::map<std::string, SpectralProfile> SynthConfig::default_profiles() {
    // Surface reflectance in band order R, G, B, NIR, SWIR1, SWIR2.
    return {
        {"vegetation", {{0.04, 0.07, 0.03, 0.35, 0.18, 0.09}, {0.012, 0.012, 0.012, 0.025, 0.015, 0.012}}},
        {"soil", {{0.14, 0.12, 0.10, 0.22, 0.28, 0.22}, {0.012, 0.012, 0.012, 0.02, 0.015, 0.015}}},
        {"distractor", {{0.20, 0.18, 0.16, 0.24, 0.30, 0.27}, {0.02, 0.02, 0.02, 0.02, 0.02, 0.02}}},
        {"dump", {{0.20, 0.18, 0.16, 0.24, 0.34, 0.15}, {0.02, 0.02, 0.02, 0.02, 0.02, 0.02}}},
    };
}

void SynthConfig::validate() const {
    if (scene_size < 8) throw std::invalid_argument("synth.scene_size must be >= 8");
    if (!(pixel_size > 0.0)) throw std::invalid_argument("synth.pixel_size must be positive");
    if (dump_count < 0) throw std::invalid_argument("synth.dump_count must be >= 0");
    if (distractor_count < -1) throw std::invalid_argument("synth.distractor_count must be >= 0 (or -1)");
    if (!(dump_radius_min > 0.0) || !(dump_radius_max >= dump_radius_min)) {
        throw std::invalid_argument("synth.dump_radius range must be positive and ordered");
    }
    if (!(dump_radius_max < scene_size / 2.0)) {
        throw std::invalid_argument("synth.dump_radius_max must be smaller than scene_size/2");
    }
    for (const char* key : {"vegetation", "soil", "distractor", "dump"}) {
        auto it = spectral_profiles.find(key);
        if (it == spectral_profiles.end()) {
            throw std::invalid_argument(std::string("synth.spectral_profiles lacks class ") + key);
        }
        for (double s : it->second.stddev) {
            if (!(s >= 0.0)) throw std::invalid_argument(std::string("synth.spectral_profiles.") + key + " has negative std");
        }
    }
}

namespace {

constexpr int kEllipseVertices = 24;
constexpr int kTextureCell = 16;

struct Blob {
    double cx, cy;  // pixel coordinates
    double a, b, angle;
};

// Bilinear value noise on a coarse lattice, values in [0, 1].
std::vector<double> value_noise(int size, Rng& rng) {
    const int cells = size / kTextureCell + 2;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> lattice(static_cast<std::size_t>(cells) * cells);
    for (auto& v : lattice) v = u(rng);
    std::vector<double> field(static_cast<std::size_t>(size) * size);
    for (int r = 0; r < size; ++r) {
        const double fy = static_cast<double>(r) / kTextureCell;
        const int y0 = static_cast<int>(fy);
        const double ty = fy - y0;
        for (int c = 0; c < size; ++c) {
            const double fx = static_cast<double>(c) / kTextureCell;
            const int x0 = static_cast<int>(fx);
            const double tx = fx - x0;
            auto L = [&](int y, int x) { return lattice[static_cast<std::size_t>(y) * cells + x]; };
            const double top = L(y0, x0) * (1 - tx) + L(y0, x0 + 1) * tx;
            const double bot = L(y0 + 1, x0) * (1 - tx) + L(y0 + 1, x0 + 1) * tx;
            // Smoothstep sharpens the vegetation/soil boundaries a little.
            const double v = top * (1 - ty) + bot * ty;
            field[static_cast<std::size_t>(r) * size + c] = v * v * (3 - 2 * v);
        }
    }
    return field;
}

PolygonAnnotation blob_polygon(const Blob& blob, const GeoTransform& t) {
    PolygonAnnotation poly;
    for (int k = 0; k < kEllipseVertices; ++k) {
        const double theta = 2.0 * std::numbers::pi * k / kEllipseVertices;
        const double ex = blob.a * std::cos(theta);
        const double ey = blob.b * std::sin(theta);
        const double px = blob.cx + ex * std::cos(blob.angle) - ey * std::sin(blob.angle);
        const double py = blob.cy + ex * std::sin(blob.angle) + ey * std::cos(blob.angle);
        poly.exterior.push_back({t.origin_x + px * t.pixel_width, t.origin_y - py * t.pixel_height});
    }
    poly.exterior.push_back(poly.exterior.front());
    // Counter-clockwise exterior in world coordinates.
    if (signed_ring_area(poly.exterior) < 0) std::reverse(poly.exterior.begin(), poly.exterior.end());
    return poly;
}

}  // namespace

SyntheticScene generate_synthetic(const SynthConfig& config) {
    config.validate();
    const int n = config.scene_size;
    const GeoTransform transform{config.origin_x, config.origin_y, config.pixel_size, config.pixel_size};
    Rng rng(config.background_texture_seed);

    const auto texture = value_noise(n, rng);
    const auto& veg = config.spectral_profiles.at("vegetation");
    const auto& soil = config.spectral_profiles.at("soil");
    SyntheticScene scene;
    scene.raster = Raster(n, n, 6, transform, std::numeric_limits<float>::quiet_NaN(), kSourceBands);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int b = 0; b < 6; ++b) {
        auto band = scene.raster.band(b);
        for (std::size_t i = 0; i < band.size(); ++i) {
            const double f = texture[i];
            const double mean = (1 - f) * veg.mean[b] + f * soil.mean[b];
            const double sd = (1 - f) * veg.stddev[b] + f * soil.stddev[b];
            band[i] = static_cast<float>(std::max(1e-4, mean + sd * gauss(rng)));
        }
    }

    // Place non-overlapping blobs: dumps first, then distractors.
    const int distractors = config.distractor_count < 0 ? config.dump_count : config.distractor_count;
    const int total = config.dump_count + distractors;
    std::uniform_real_distribution<double> radius(config.dump_radius_min, config.dump_radius_max);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    const double margin = config.dump_radius_max + 1.0;
    if (!(margin < n - margin)) throw std::invalid_argument("synth: dump_radius_max too large for scene_size");
    std::uniform_real_distribution<double> centre(margin, n - margin);
    std::vector<Blob> blobs;
    for (int k = 0; k < total; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            Blob blob{centre(rng), centre(rng), radius(rng), radius(rng), angle(rng)};
            const double reach = std::max(blob.a, blob.b);
            placed = std::none_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
                return std::hypot(o.cx - blob.cx, o.cy - blob.cy) < reach + std::max(o.a, o.b) + 2.0;
            });
            if (placed) blobs.push_back(blob);
        }
        if (!placed) throw std::invalid_argument("synth: scene too small to place " + std::to_string(total) + " blobs");
    }

    for (int k = 0; k < total; ++k) {
        const bool is_dump = k < config.dump_count;
        auto poly = blob_polygon(blobs[k], transform);
        const auto& profile = config.spectral_profiles.at(is_dump ? "dump" : "distractor");
        const Mask footprint = rasterize_mask(std::span(&poly, 1), transform, n, n);
        for (int b = 0; b < 6; ++b) {
            auto band = scene.raster.band(b);
            for (std::size_t i = 0; i < band.size(); ++i) {
                if (!footprint.data[i]) continue;
                band[i] = static_cast<float>(std::max(1e-4, profile.mean[b] + profile.stddev[b] * gauss(rng)));
            }
        }
        if (is_dump) scene.annotations.push_back(std::move(poly));
    }
    return scene;
}

}  // namespace dumpwatch
