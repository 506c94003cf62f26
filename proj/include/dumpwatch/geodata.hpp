#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dumpwatch {

/**
 * North-up, axis-aligned georeferencing of a raster grid.
 *
 * Column index grows eastward from origin_x, row index grows southward from
 * origin_y. Rotation and shear terms are not supported.
 */
struct GeoTransform {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_width = 1.0;
    double pixel_height = 1.0;

    void validate() const;
    double pixel_area() const { return pixel_width * pixel_height; }

    /// Transform of the window whose top-left cell is (col, row).
    GeoTransform window(long col, long row) const;

    bool operator==(const GeoTransform&) const = default;
};

struct PixelIndex {
    long col = 0;
    long row = 0;
    bool operator==(const PixelIndex&) const = default;
};

struct WorldPoint {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const WorldPoint&) const = default;
};

/// Cell containing the point; may fall outside the raster.
PixelIndex world_to_pixel(const GeoTransform& t, double x, double y);
/// Top-left corner of the cell.
WorldPoint pixel_to_world(const GeoTransform& t, long col, long row);

/// Geo-referenced multi-band float grid, band-major then row-major.
struct Raster {
    int width = 0;
    int height = 0;
    int band_count = 0;
    std::vector<float> samples;
    GeoTransform transform;
    std::optional<float> nodata;
    std::vector<std::string> band_names;

    Raster() = default;
    Raster(int width, int height, int band_count, GeoTransform transform = {},
           std::optional<float> nodata = std::nullopt, std::vector<std::string> band_names = {});

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
    std::span<float> band(int b);
    std::span<const float> band(int b) const;
    float& at(int b, int row, int col) { return samples[index(b, row, col)]; }
    float at(int b, int row, int col) const { return samples[index(b, row, col)]; }

    /// Index of a named band, or -1.
    int band_index(const std::string& name) const;
    bool is_nodata(float v) const;

    /// Throws when the size or band-name invariants are violated.
    void validate() const;

private:
    std::size_t index(int b, int row, int col) const {
        return (static_cast<std::size_t>(b) * height + row) * width + col;
    }
};

/// Sample-for-sample bit equality, including NaN payloads.
bool bitwise_equal(const Raster& a, const Raster& b);

// Native raster format: a UTF-8 JSON header at `path` plus a raw payload of
// little-endian float32 samples (band-major, then row-major) in the file the
// header names. The payload sits next to the header, with the header's
// extension replaced by ".f32".
void write_raster(const Raster& raster, const std::filesystem::path& path);
Raster read_raster(const std::filesystem::path& path);
std::filesystem::path payload_path_for(const std::filesystem::path& header_path);

using Ring = std::vector<WorldPoint>;

struct PolygonAnnotation {
    Ring exterior;
    std::vector<Ring> holes;
    std::string label = "waste_dump";
};

struct AnnotationSet {
    std::vector<PolygonAnnotation> polygons;
    std::size_t skipped = 0;  ///< features whose geometry was not (multi)polygon
};

/// Closed, at least three distinct vertices, no self-intersection.
void validate_ring(const Ring& ring);
double signed_ring_area(const Ring& ring);

/// GeoJSON FeatureCollection of Polygon/MultiPolygon features. Multipolygons
/// are split into one annotation per part. Coordinates are taken to be in the
/// raster's world CRS; nothing checks that.
AnnotationSet read_annotations(const std::filesystem::path& path);
void write_annotations(std::span<const PolygonAnnotation> polygons, const std::filesystem::path& path);

// Small file helpers shared by every writer.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
std::vector<std::byte> read_bytes(const std::filesystem::path& path);

void append_f32_le(std::vector<std::byte>& out, std::span<const float> values);
void decode_f32_le(std::span<const std::byte> in, std::span<float> out);

}  // namespace dumpwatch
