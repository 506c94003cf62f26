#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dumpwatch/geodata.hpp"

namespace dumpwatch {

/// Binary grid, row-major, values 0 or 1.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

    std::uint8_t& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
    std::uint8_t at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
    std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

inline constexpr double kNdswEpsilon = 1e-12;

/// One input channel: a raw source band by name, or the normalized
/// difference of the two SWIR bands.
struct BandSource {
    enum class Kind { kRaw, kNdsw };
    Kind kind = Kind::kRaw;
    std::string name;

    static BandSource raw(std::string band) { return {Kind::kRaw, std::move(band)}; }
    static BandSource ndsw() { return {Kind::kNdsw, "NDSW"}; }
    bool operator==(const BandSource&) const = default;
};

struct BandSpec {
    std::vector<BandSource> sources;

    /// R, G, B, NIR, SWIR1, NDSW.
    static BandSpec default_six();
    /// Comma-separated band names; "NDSW" denotes the derived band.
    static BandSpec parse(const std::string& list);
    std::vector<std::string> names() const;
    /// Table label such as "RGB-NIR-SWIR-NDSW".
    std::string label() const;
    bool operator==(const BandSpec&) const = default;
};

/// (swir1 - swir2) / (swir1 + swir2); 0 where the sum is below kNdswEpsilon in
/// magnitude; nodata (or NaN) in either input gives the nodata value.
std::vector<float> compute_ndsw(std::span<const float> swir1, std::span<const float> swir2,
                                std::optional<float> nodata = std::nullopt);

Raster stack_bands(const Raster& raster, const BandSpec& spec);

/// Even-odd containment over the exterior and hole rings. Points exactly on
/// an edge are resolved by the crossing rule and should be avoided by callers.
bool point_in_polygon(const PolygonAnnotation& polygon, WorldPoint p);

/// 1 where the pixel centre lies inside any polygon.
Mask rasterize_mask(std::span<const PolygonAnnotation> polygons, const GeoTransform& transform,
                    int width, int height);

struct Chip {
    int size = 0;
    std::vector<std::string> band_names;
    std::vector<float> samples;  ///< band-major, size x size per band
    Mask mask;
    PixelIndex origin;  ///< top-left cell in the source raster
    GeoTransform transform;
    std::string scene_id;

    int band_count() const { return static_cast<int>(band_names.size()); }
    bool positive() const { return mask.count() > 0; }
};

struct ChipParams {
    int chip_size = 100;
    int stride = 50;
    double negatives_per_positive = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Every window on the stride lattice with at least one positive pixel, in
/// (row, col) order, followed by ceil(ratio * positives) random all-negative
/// windows in draw order.
std::vector<Chip> extract_chips(const Raster& image, const Mask& mask, const ChipParams& params,
                                const std::string& scene_id = "");

struct DatasetSplit {
    std::vector<Chip> train;
    std::vector<Chip> val;
    std::vector<Chip> test;
    std::uint64_t seed = 0;

    std::size_t size() const { return train.size() + val.size() + test.size(); }
};

struct SplitSizes {
    std::size_t train, val, test;
};
SplitSizes split_sizes(std::size_t n, double test_frac, double val_frac);

DatasetSplit split_dataset(std::vector<Chip> chips, double test_frac = 0.1, double val_frac = 0.2,
                           std::uint64_t seed = 0);

struct NormalizationStats {
    std::vector<std::string> band_names;
    std::vector<double> mean;
    std::vector<double> stddev;
};

NormalizationStats fit_normalization(std::span<const Chip> train_chips);
Chip apply_normalization(Chip chip, const NormalizationStats& stats);
std::vector<Chip> apply_normalization(std::vector<Chip> chips, const NormalizationStats& stats);

/// Copy of the chip restricted to the named bands, in the given order.
Chip select_bands(const Chip& chip, std::span<const std::string> names);

// --- synthetic scenes -------------------------------------------------------

/// Source band order of synthetic scenes.
inline const std::vector<std::string> kSourceBands = {"R", "G", "B", "NIR", "SWIR1", "SWIR2"};

struct SpectralProfile {
    std::array<double, 6> mean{};
    std::array<double, 6> stddev{};
};

struct SynthConfig {
    int scene_size = 256;
    double pixel_size = 10.0;
    int dump_count = 4;
    double dump_radius_min = 4.0;  ///< pixels
    double dump_radius_max = 12.0;
    int distractor_count = -1;  ///< bare-ground blobs without annotation; -1 = dump_count
    std::uint64_t background_texture_seed = 0;
    double origin_x = 300000.0;
    double origin_y = 6170000.0;
    /// Keys: "vegetation", "soil", "distractor", "dump".
    std::map<std::string, SpectralProfile> spectral_profiles = default_profiles();

    static std::map<std::string, SpectralProfile> default_profiles();
    void validate() const;
};

struct SyntheticScene {
    Raster raster;
    std::vector<PolygonAnnotation> annotations;
};

/**
 * Textured vegetation/soil background carrying elliptical dump blobs and an
 * equal number of bare-ground distractors. Distractors share the dump's
 * visible and NIR response; only the SWIR pair tells them apart. The dump
 * annotations rasterize back onto exactly the painted dump pixels.
 */
SyntheticScene generate_synthetic(const SynthConfig& config);

// --- persistence --------------------------------------------------------------

enum class SplitName { kTrain, kVal, kTest };

/// Directory holding one native raster per chip (image bands plus a final
/// "mask" band) and index.json describing origin, split and positivity.
void write_chip_catalog(const std::filesystem::path& dir, const DatasetSplit& split);
DatasetSplit read_chip_catalog(const std::filesystem::path& dir);

void write_normalization(const NormalizationStats& stats, const std::filesystem::path& path);
NormalizationStats read_normalization(const std::filesystem::path& path);

}  // namespace dumpwatch
