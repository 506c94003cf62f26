#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dumpwatch/dataset.hpp"
#include "dumpwatch/unet.hpp"

namespace dumpwatch {

struct InferenceConfig {
    int tile_size = 256;
    int overlap = 32;
    int batch_size = 4;

    /// Throws unless overlap < tile_size / 2 and tile_size is a multiple of divisor.
    void validate(int divisor = 1) const;
};

struct PostprocConfig {
    double probability_threshold = 0.5;
    double min_area = 100.0;  ///< world units squared
    int connectivity = 8;

    void validate() const;
};

/// Tile origins along one axis of the given length: multiples of the stride
/// (tile - overlap) until a tile reaches the far edge.
std::vector<int> tile_starts(int length, int tile, int overlap);

/**
 * Probability of the waste class per pixel. The raster must provide the
 * bands named by the normalization stats, either directly or as sources of a
 * derived band. Tiles hanging over the raster edge are filled by reflection;
 * overlapping tiles are averaged. Pixels that are nodata in any input band
 * come out as NaN, which is also the output's nodata value.
 */
Raster predict_raster(const ParameterSet& params, const UNetConfig& config, const Raster& raster,
                      const NormalizationStats& stats, const InferenceConfig& icfg);

/// 1 where probability >= t; nodata and NaN give 0.
Mask threshold_probability(const Raster& probability, double t);

struct Components {
    int width = 0;
    int height = 0;
    std::vector<int> labels;  ///< 0 background, 1..count in first-encounter row-major order
    std::vector<std::size_t> sizes;  ///< sizes[k - 1] is the pixel count of label k

    int count() const { return static_cast<int>(sizes.size()); }
    int at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
};

Components connected_components(const Mask& binary, int connectivity = 8);

struct Detection {
    std::vector<PolygonAnnotation> parts;  ///< one part per exterior ring, holes attached
    double area = 0.0;
    double mean_probability = 1.0;
    std::size_t pixel_count = 0;
    int label = 0;
};

/**
 * One detection per component, tracing the exact outline of its pixel
 * squares. Exterior rings run counter-clockwise in world coordinates, holes
 * clockwise. Without a probability raster mean_probability is left at 1.
 */
std::vector<Detection> polygonize(const Components& components, const GeoTransform& transform,
                                  const Raster* probability = nullptr);

/// Detections with area >= min_area, order kept.
std::vector<Detection> filter_detections(std::vector<Detection> detections, const PostprocConfig& pcfg);

struct PostprocResult {
    Mask binary;
    std::vector<Detection> all;
    std::vector<Detection> kept;
};

/// threshold, label, polygonize, filter.
PostprocResult postprocess(const Raster& probability, const PostprocConfig& pcfg);

/// FeatureCollection with one Polygon (or MultiPolygon, for several parts)
/// feature per detection and properties area_m2, mean_probability,
/// pixel_count.
void export_geojson(std::span<const Detection> detections, const std::filesystem::path& path);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace dumpwatch
