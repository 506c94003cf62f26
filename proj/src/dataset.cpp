#include "dumpwatch/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dumpwatch/random.hpp"

namespace dumpwatch {

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

// ---------------------------------------------------------------------------
// band stacking

BandSpec BandSpec::default_six() {
    return {{BandSource::raw("R"), BandSource::raw("G"), BandSource::raw("B"), BandSource::raw("NIR"),
             BandSource::raw("SWIR1"), BandSource::ndsw()}};
}

BandSpec BandSpec::parse(const std::string& list) {
    BandSpec spec;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        spec.sources.push_back(item == "NDSW" ? BandSource::ndsw() : BandSource::raw(item));
    }
    if (spec.sources.empty()) throw std::invalid_argument("band spec: empty band list");
    return spec;
}

std::vector<std::string> BandSpec::names() const {
    std::vector<std::string> out;
    for (const auto& s : sources) out.push_back(s.name);
    return out;
}

std::string BandSpec::label() const {
    auto names_list = names();
    std::vector<std::string> parts;
    std::size_t i = 0;
    if (names_list.size() >= 3 && names_list[0] == "R" && names_list[1] == "G" && names_list[2] == "B") {
        parts.push_back("RGB");
        i = 3;
    }
    for (; i < names_list.size(); ++i) parts.push_back(names_list[i] == "SWIR1" ? "SWIR" : names_list[i]);
    std::string label;
    for (std::size_t k = 0; k < parts.size(); ++k) label += (k ? "-" : "") + parts[k];
    return label;
}

std::vector<float> compute_ndsw(std::span<const float> swir1, std::span<const float> swir2,
                                std::optional<float> nodata) {
    if (swir1.size() != swir2.size()) {
        throw std::invalid_argument("compute_ndsw: dimension mismatch (" + std::to_string(swir1.size()) +
                                    " vs " + std::to_string(swir2.size()) + " samples)");
    }
    const float fill = nodata.value_or(std::numeric_limits<float>::quiet_NaN());
    auto missing = [&](float v) {
        return std::isnan(v) || (nodata && !std::isnan(*nodata) && v == *nodata);
    };
    std::vector<float> out(swir1.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (missing(swir1[i]) || missing(swir2[i])) {
            out[i] = fill;
            continue;
        }
        const double a = swir1[i];
        const double b = swir2[i];
        const double s = a + b;
        out[i] = std::abs(s) < kNdswEpsilon ? 0.0f : static_cast<float>((a - b) / s);
    }
    return out;
}

Raster stack_bands(const Raster& raster, const BandSpec& spec) {
    raster.validate();
    if (spec.sources.empty()) throw std::invalid_argument("stack_bands: empty band spec");
    auto require = [&](const std::string& name) {
        const int idx = raster.band_index(name);
        if (idx < 0) throw std::invalid_argument("stack_bands: missing source band " + name);
        return idx;
    };
    Raster out(raster.width, raster.height, static_cast<int>(spec.sources.size()), raster.transform,
               raster.nodata, spec.names());
    for (std::size_t b = 0; b < spec.sources.size(); ++b) {
        const auto& src = spec.sources[b];
        auto dst = out.band(static_cast<int>(b));
        if (src.kind == BandSource::Kind::kRaw) {
            auto in = raster.band(require(src.name));
            std::copy(in.begin(), in.end(), dst.begin());
        } else {
            const auto ndsw = compute_ndsw(raster.band(require("SWIR1")), raster.band(require("SWIR2")),
                                           raster.nodata);
            std::copy(ndsw.begin(), ndsw.end(), dst.begin());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// mask rasterization

namespace {

// X positions where the horizontal line at y crosses the ring, using the
// half-open rule (y1 > y) != (y2 > y) so vertices are never double counted.
void ring_crossings(const Ring& ring, double y, std::vector<double>& xs) {
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const auto& a = ring[i];
        const auto& b = ring[i + 1];
        if ((a.y > y) != (b.y > y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
    }
}

}  // namespace

bool point_in_polygon(const PolygonAnnotation& polygon, WorldPoint p) {
    std::vector<double> xs;
    ring_crossings(polygon.exterior, p.y, xs);
    for (const auto& h : polygon.holes) ring_crossings(h, p.y, xs);
    const auto right = std::count_if(xs.begin(), xs.end(), [&](double x) { return p.x < x; });
    return right % 2 == 1;
}

Mask rasterize_mask(std::span<const PolygonAnnotation> polygons, const GeoTransform& transform, int width,
                    int height) {
    transform.validate();
    Mask mask(width, height);
    std::vector<double> xs;
    for (const auto& poly : polygons) {
        for (int r = 0; r < height; ++r) {
            const double y = transform.origin_y - (r + 0.5) * transform.pixel_height;
            xs.clear();
            ring_crossings(poly.exterior, y, xs);
            for (const auto& h : poly.holes) ring_crossings(h, y, xs);
            if (xs.size() < 2) continue;
            std::sort(xs.begin(), xs.end());
            // A centre is inside iff an odd number of crossings lie strictly
            // to its right, i.e. it sits in [xs[2k], xs[2k+1]).
            for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
                const double c0 = std::ceil((xs[k] - transform.origin_x) / transform.pixel_width - 0.5);
                int c = static_cast<int>(std::clamp(c0 - 1.0, 0.0, static_cast<double>(width)));
                for (; c < width; ++c) {
                    const double xc = transform.origin_x + (c + 0.5) * transform.pixel_width;
                    if (xc < xs[k]) continue;
                    if (!(xc < xs[k + 1])) break;
                    mask.at(r, c) = 1;
                }
            }
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// chips

void ChipParams::validate() const {
    if (chip_size < 1) throw std::invalid_argument("chip_size must be >= 1");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (!(negatives_per_positive >= 0.0) || !std::isfinite(negatives_per_positive)) {
        throw std::invalid_argument("negatives_per_positive must be >= 0");
    }
}

namespace {

// Summed-area table over the mask for O(1) window counts.
class MaskIntegral {
public:
    explicit MaskIntegral(const Mask& m) : w_(m.width + 1), sums_(static_cast<std::size_t>(m.width + 1) * (m.height + 1), 0) {
        for (int r = 0; r < m.height; ++r) {
            for (int c = 0; c < m.width; ++c) {
                at(r + 1, c + 1) = m.at(r, c) + at(r, c + 1) + at(r + 1, c) - at(r, c);
            }
        }
    }
    long window(int row, int col, int size) const {
        return at(row + size, col + size) - at(row, col + size) - at(row + size, col) + at(row, col);
    }

private:
    long& at(int r, int c) { return sums_[static_cast<std::size_t>(r) * w_ + c]; }
    long at(int r, int c) const { return sums_[static_cast<std::size_t>(r) * w_ + c]; }
    int w_;
    std::vector<long> sums_;
};

Chip cut_chip(const Raster& image, const Mask& mask, int col, int row, int size, const std::string& scene) {
    Chip chip;
    chip.size = size;
    chip.band_names = image.band_names;
    if (chip.band_names.empty()) {
        for (int b = 0; b < image.band_count; ++b) chip.band_names.push_back("band" + std::to_string(b));
    }
    chip.samples.resize(static_cast<std::size_t>(image.band_count) * size * size);
    for (int b = 0; b < image.band_count; ++b) {
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                chip.samples[(static_cast<std::size_t>(b) * size + r) * size + c] = image.at(b, row + r, col + c);
            }
        }
    }
    chip.mask = Mask(size, size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) chip.mask.at(r, c) = mask.at(row + r, col + c);
    }
    chip.origin = {col, row};
    chip.transform = image.transform.window(col, row);
    chip.scene_id = scene;
    return chip;
}

}  // namespace

std::vector<Chip> extract_chips(const Raster& image, const Mask& mask, const ChipParams& params,
                                const std::string& scene_id) {
    params.validate();
    image.validate();
    if (mask.width != image.width || mask.height != image.height) {
        throw std::invalid_argument("extract_chips: mask and raster dimensions differ");
    }
    const int size = params.chip_size;
    if (size > image.width || size > image.height) {
        throw std::invalid_argument("extract_chips: chip_size " + std::to_string(size) +
                                    " larger than raster " + std::to_string(image.width) + "x" +
                                    std::to_string(image.height));
    }
    const MaskIntegral integral(mask);
    std::vector<Chip> chips;
    std::set<std::pair<int, int>> taken;
    for (int row = 0; row + size <= image.height; row += params.stride) {
        for (int col = 0; col + size <= image.width; col += params.stride) {
            if (integral.window(row, col, size) > 0) {
                chips.push_back(cut_chip(image, mask, col, row, size, scene_id));
                taken.insert({row, col});
            }
        }
    }
    const std::size_t positives = chips.size();
    const auto wanted = static_cast<std::size_t>(std::ceil(params.negatives_per_positive * static_cast<double>(positives)));
    if (wanted == 0) return chips;

    Rng rng(params.seed);
    const std::uint64_t rows = static_cast<std::uint64_t>(image.height - size + 1);
    const std::uint64_t cols = static_cast<std::uint64_t>(image.width - size + 1);
    const std::size_t max_draws = 50 * wanted + 1000;
    std::size_t found = 0;
    for (std::size_t draw = 0; draw < max_draws && found < wanted; ++draw) {
        const int row = static_cast<int>(uniform_index(rng, rows));
        const int col = static_cast<int>(uniform_index(rng, cols));
        if (integral.window(row, col, size) != 0 || !taken.insert({row, col}).second) continue;
        chips.push_back(cut_chip(image, mask, col, row, size, scene_id));
        ++found;
    }
    if (found < wanted) {
        std::cerr << "extract_chips: only " << found << " of " << wanted
                  << " negative windows available in scene '" << scene_id << "'\n";
    }
    return chips;
}

SplitSizes split_sizes(std::size_t n, double test_frac, double val_frac) {
    if (!(test_frac >= 0.0) || !(val_frac >= 0.0) || !(test_frac + val_frac < 1.0)) {
        throw std::invalid_argument("split fractions must be >= 0 and sum below 1");
    }
    const auto test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
    const auto val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
    if (test + val > n) throw std::invalid_argument("split fractions leave no room for training chips");
    return {n - test - val, val, test};
}

DatasetSplit split_dataset(std::vector<Chip> chips, double test_frac, double val_frac, std::uint64_t seed) {
    if (chips.empty()) throw std::invalid_argument("split_dataset: empty chip list");
    const auto sizes = split_sizes(chips.size(), test_frac, val_frac);
    std::vector<std::size_t> order(chips.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    DatasetSplit split;
    split.seed = seed;
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto& chip = chips[order[k]];
        if (k < sizes.test) {
            split.test.push_back(std::move(chip));
        } else if (k < sizes.test + sizes.val) {
            split.val.push_back(std::move(chip));
        } else {
            split.train.push_back(std::move(chip));
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// normalization

NormalizationStats fit_normalization(std::span<const Chip> train_chips) {
    if (train_chips.empty()) throw std::invalid_argument("fit_normalization: empty training set");
    NormalizationStats stats;
    stats.band_names = train_chips.front().band_names;
    const std::size_t bands = stats.band_names.size();
    std::vector<double> sum(bands, 0.0), sq(bands, 0.0);
    std::vector<std::size_t> count(bands, 0);
    for (const auto& chip : train_chips) {
        if (chip.band_names != stats.band_names) {
            throw std::invalid_argument("fit_normalization: chips disagree on band layout");
        }
        const std::size_t plane = static_cast<std::size_t>(chip.size) * chip.size;
        for (std::size_t b = 0; b < bands; ++b) {
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = chip.samples[b * plane + i];
                if (std::isnan(v)) continue;
                sum[b] += v;
                ++count[b];
            }
        }
    }
    stats.mean.resize(bands);
    for (std::size_t b = 0; b < bands; ++b) {
        if (count[b] == 0) throw std::invalid_argument("fit_normalization: band " + stats.band_names[b] + " has no valid samples");
        stats.mean[b] = sum[b] / static_cast<double>(count[b]);
    }
    // Second pass for the variance, which is better conditioned than E[x^2]-E[x]^2.
    for (const auto& chip : train_chips) {
        const std::size_t plane = static_cast<std::size_t>(chip.size) * chip.size;
        for (std::size_t b = 0; b < bands; ++b) {
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = chip.samples[b * plane + i];
                if (!std::isnan(v)) sq[b] += (v - stats.mean[b]) * (v - stats.mean[b]);
            }
        }
    }
    stats.stddev.resize(bands);
    for (std::size_t b = 0; b < bands; ++b) {
        stats.stddev[b] = std::sqrt(sq[b] / static_cast<double>(count[b]));
        if (!(stats.stddev[b] > 1e-12)) {
            throw std::invalid_argument("fit_normalization: constant band " + stats.band_names[b] + " (std = 0)");
        }
    }
    return stats;
}

Chip apply_normalization(Chip chip, const NormalizationStats& stats) {
    if (chip.band_names != stats.band_names) {
        throw std::invalid_argument("apply_normalization: chip bands do not match normalization stats");
    }
    const std::size_t plane = static_cast<std::size_t>(chip.size) * chip.size;
    for (std::size_t b = 0; b < stats.mean.size(); ++b) {
        for (std::size_t i = 0; i < plane; ++i) {
            float& v = chip.samples[b * plane + i];
            v = static_cast<float>((v - stats.mean[b]) / stats.stddev[b]);
        }
    }
    return chip;
}

std::vector<Chip> apply_normalization(std::vector<Chip> chips, const NormalizationStats& stats) {
    for (auto& c : chips) c = apply_normalization(std::move(c), stats);
    return chips;
}

Chip select_bands(const Chip& chip, std::span<const std::string> names) {
    Chip out = chip;
    out.band_names.assign(names.begin(), names.end());
    const std::size_t plane = static_cast<std::size_t>(chip.size) * chip.size;
    out.samples.resize(names.size() * plane);
    for (std::size_t k = 0; k < names.size(); ++k) {
        auto it = std::find(chip.band_names.begin(), chip.band_names.end(), names[k]);
        if (it == chip.band_names.end()) throw std::invalid_argument("select_bands: chip lacks band " + names[k]);
        const auto src = static_cast<std::size_t>(it - chip.band_names.begin());
        std::copy_n(chip.samples.begin() + src * plane, plane, out.samples.begin() + k * plane);
    }
    return out;
}

}  // namespace dumpwatch
