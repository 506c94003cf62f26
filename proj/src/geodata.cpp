#include "dumpwatch/geodata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dumpwatch {

namespace fs = std::filesystem;
using nlohmann::json;

void GeoTransform::validate() const {
    if (!(pixel_width > 0.0) || !(pixel_height > 0.0) || !std::isfinite(pixel_width) ||
        !std::isfinite(pixel_height)) {
        throw std::invalid_argument("geotransform: pixel sizes must be positive and finite");
    }
    if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) {
        throw std::invalid_argument("geotransform: origin must be finite");
    }
}

GeoTransform GeoTransform::window(long col, long row) const {
    GeoTransform t = *this;
    t.origin_x = origin_x + static_cast<double>(col) * pixel_width;
    t.origin_y = origin_y - static_cast<double>(row) * pixel_height;
    return t;
}

PixelIndex world_to_pixel(const GeoTransform& t, double x, double y) {
    PixelIndex p{static_cast<long>(std::floor((x - t.origin_x) / t.pixel_width)),
                 static_cast<long>(std::floor((t.origin_y - y) / t.pixel_height))};
    // Snap against the corners pixel_to_world would produce, so the two
    // functions agree exactly despite rounding in the division.
    auto corner = [&](long col, long row) { return pixel_to_world(t, col, row); };
    if (corner(p.col + 1, 0).x <= x) ++p.col;
    else if (corner(p.col, 0).x > x) --p.col;
    if (corner(0, p.row + 1).y >= y) ++p.row;
    else if (corner(0, p.row).y < y) --p.row;
    return p;
}

WorldPoint pixel_to_world(const GeoTransform& t, long col, long row) {
    return {t.origin_x + static_cast<double>(col) * t.pixel_width,
            t.origin_y - static_cast<double>(row) * t.pixel_height};
}

Raster::Raster(int w, int h, int bands, GeoTransform t, std::optional<float> nd,
               std::vector<std::string> names)
    : width(w), height(h), band_count(bands), transform(t), nodata(nd), band_names(std::move(names)) {
    if (w < 0 || h < 0 || bands < 0) throw std::invalid_argument("raster: negative dimension");
    samples.assign(static_cast<std::size_t>(w) * h * bands, 0.0f);
}

std::span<float> Raster::band(int b) {
    if (b < 0 || b >= band_count) throw std::out_of_range("raster: band index " + std::to_string(b));
    return std::span<float>(samples).subspan(static_cast<std::size_t>(b) * plane_size(), plane_size());
}

std::span<const float> Raster::band(int b) const {
    if (b < 0 || b >= band_count) throw std::out_of_range("raster: band index " + std::to_string(b));
    return std::span<const float>(samples).subspan(static_cast<std::size_t>(b) * plane_size(),
                                                   plane_size());
}

int Raster::band_index(const std::string& name) const {
    auto it = std::find(band_names.begin(), band_names.end(), name);
    return it == band_names.end() ? -1 : static_cast<int>(it - band_names.begin());
}

bool Raster::is_nodata(float v) const {
    if (!nodata) return false;
    return std::isnan(*nodata) ? std::isnan(v) : v == *nodata;
}

void Raster::validate() const {
    if (width < 0 || height < 0 || band_count < 0) throw std::invalid_argument("raster: negative dimension");
    if (samples.size() != static_cast<std::size_t>(width) * height * band_count) {
        throw std::invalid_argument("raster: band/sample mismatch");
    }
    if (!band_names.empty() && band_names.size() != static_cast<std::size_t>(band_count)) {
        throw std::invalid_argument("raster: band_names length differs from band_count");
    }
    transform.validate();
}

bool bitwise_equal(const Raster& a, const Raster& b) {
    if (a.width != b.width || a.height != b.height || a.band_count != b.band_count ||
        a.transform != b.transform || a.band_names != b.band_names ||
        a.nodata.has_value() != b.nodata.has_value()) {
        return false;
    }
    if (a.nodata && !(std::isnan(*a.nodata) && std::isnan(*b.nodata)) && *a.nodata != *b.nodata) {
        return false;
    }
    return a.samples.size() == b.samples.size() &&
           std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------
// file helpers

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw std::runtime_error("cannot write " + path.string());
    }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::vector<std::byte> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw std::runtime_error("read failed for " + path.string());
    return bytes;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void append_f32_le(std::vector<std::byte>& out, std::span<const float> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int k = 0; k < 4; ++k) out[start + 4 * i + k] = static_cast<std::byte>((bits >> (8 * k)) & 0xffu);
    }
}

void decode_f32_le(std::span<const std::byte> in, std::span<float> out) {
    if (in.size() != out.size() * 4) throw std::invalid_argument("payload length mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= std::to_integer<std::uint32_t>(in[4 * i + k]) << (8 * k);
        out[i] = std::bit_cast<float>(bits);
    }
}

// ---------------------------------------------------------------------------
// native raster format

namespace {

constexpr int kRasterFormatVersion = 1;

json nodata_to_json(const std::optional<float>& nodata) {
    if (!nodata) return nullptr;
    if (std::isnan(*nodata)) return "NaN";
    if (std::isinf(*nodata)) return *nodata > 0 ? "Infinity" : "-Infinity";
    return *nodata;
}

std::optional<float> nodata_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "NaN") return std::numeric_limits<float>::quiet_NaN();
        if (s == "Infinity") return std::numeric_limits<float>::infinity();
        if (s == "-Infinity") return -std::numeric_limits<float>::infinity();
        throw std::runtime_error("malformed header: bad nodata value '" + s + "'");
    }
    return j.get<float>();
}

}  // namespace

fs::path payload_path_for(const fs::path& header_path) {
    fs::path p = header_path;
    if (p.extension() == ".json") {
        p.replace_extension(".f32");
    } else {
        p += ".f32";
    }
    return p;
}

void write_raster(const Raster& raster, const fs::path& path) {
    if (raster.band_count == 0 || raster.width == 0 || raster.height == 0) {
        throw std::invalid_argument("write_raster: empty raster");
    }
    raster.validate();
    const fs::path payload = payload_path_for(path);
    json header = {
        {"format", "dumpwatch-raster"},
        {"version", kRasterFormatVersion},
        {"width", raster.width},
        {"height", raster.height},
        {"band_count", raster.band_count},
        {"band_names", raster.band_names},
        {"transform",
         {{"origin_x", raster.transform.origin_x},
          {"origin_y", raster.transform.origin_y},
          {"pixel_width", raster.transform.pixel_width},
          {"pixel_height", raster.transform.pixel_height}}},
        {"nodata", nodata_to_json(raster.nodata)},
        {"dtype", "float32"},
        {"byte_order", "little"},
        {"interleave", "band"},
        {"payload", payload.filename().string()},
    };
    std::vector<std::byte> bytes;
    bytes.reserve(raster.samples.size() * 4);
    append_f32_le(bytes, raster.samples);
    write_file_atomic(payload, bytes);
    write_text_atomic(path, header.dump(2) + "\n");
}

Raster read_raster(const fs::path& path) {
    if (!fs::exists(path)) throw std::runtime_error("read_raster: missing file " + path.string());
    json header;
    try {
        header = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("read_raster: malformed header in " + path.string() + ": " + e.what());
    }
    Raster r;
    fs::path payload;
    try {
        if (header.at("format").get<std::string>() != "dumpwatch-raster") {
            throw std::runtime_error("not a dumpwatch raster");
        }
        if (header.at("version").get<int>() != kRasterFormatVersion) {
            throw std::runtime_error("unsupported version");
        }
        if (header.at("dtype").get<std::string>() != "float32") throw std::runtime_error("unsupported dtype");
        r.width = header.at("width").get<int>();
        r.height = header.at("height").get<int>();
        r.band_count = header.at("band_count").get<int>();
        r.band_names = header.value("band_names", std::vector<std::string>{});
        const auto& t = header.at("transform");
        r.transform = {t.at("origin_x").get<double>(), t.at("origin_y").get<double>(),
                       t.at("pixel_width").get<double>(), t.at("pixel_height").get<double>()};
        r.nodata = nodata_from_json(header.value("nodata", json(nullptr)));
        payload = path.parent_path() / header.at("payload").get<std::string>();
    } catch (const json::exception& e) {
        throw std::runtime_error("read_raster: malformed header in " + path.string() + ": " + e.what());
    }
    if (r.width <= 0 || r.height <= 0 || r.band_count <= 0) {
        throw std::runtime_error("read_raster: malformed header in " + path.string() + ": empty raster");
    }
    const auto bytes = read_bytes(payload);
    const std::size_t expected = static_cast<std::size_t>(r.width) * r.height * r.band_count;
    if (bytes.size() != expected * 4) {
        throw std::runtime_error("read_raster: band/sample mismatch in " + path.string() + " (header needs " +
                                 std::to_string(expected * 4) + " bytes, payload has " +
                                 std::to_string(bytes.size()) + ")");
    }
    r.samples.resize(expected);
    decode_f32_le(bytes, r.samples);
    r.validate();
    return r;
}

// ---------------------------------------------------------------------------
// vector annotations

double signed_ring_area(const Ring& ring) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        acc += ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
    }
    return acc / 2.0;
}

namespace {

int orientation(const WorldPoint& a, const WorldPoint& b, const WorldPoint& c) {
    const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    return (v > 0) - (v < 0);
}

bool on_segment(const WorldPoint& a, const WorldPoint& b, const WorldPoint& p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
}

// Closed-segment intersection, touching included.
bool segments_intersect(const WorldPoint& p1, const WorldPoint& p2, const WorldPoint& q1,
                        const WorldPoint& q2) {
    const int o1 = orientation(p1, p2, q1);
    const int o2 = orientation(p1, p2, q2);
    const int o3 = orientation(q1, q2, p1);
    const int o4 = orientation(q1, q2, p2);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(p1, p2, q1)) return true;
    if (o2 == 0 && on_segment(p1, p2, q2)) return true;
    if (o3 == 0 && on_segment(q1, q2, p1)) return true;
    if (o4 == 0 && on_segment(q1, q2, p2)) return true;
    return false;
}

}  // namespace

void validate_ring(const Ring& ring) {
    if (ring.size() < 4 || ring.front() != ring.back()) {
        throw std::invalid_argument("ring is not closed or has fewer than 3 vertices");
    }
    std::set<std::pair<double, double>> distinct;
    for (const auto& p : ring) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("ring has non-finite vertex");
        distinct.insert({p.x, p.y});
    }
    if (distinct.size() < 3) throw std::invalid_argument("ring has fewer than 3 distinct vertices");
    if (distinct.size() != ring.size() - 1) throw std::invalid_argument("ring revisits a vertex");

    const std::size_t n = ring.size() - 1;  // edge count
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a1 = ring[i];
        const auto& a2 = ring[i + 1];
        // Consecutive edges may only share their joint vertex.
        const auto& b2 = ring[(i + 2) % n];
        if (orientation(a1, a2, b2) == 0 && on_segment(a1, a2, b2)) {
            throw std::invalid_argument("ring folds back on itself");
        }
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;
            if (segments_intersect(a1, a2, ring[j], ring[j + 1])) {
                throw std::invalid_argument("ring self-intersects");
            }
        }
    }
}

namespace {

Ring parse_ring(const json& coords) {
    Ring ring;
    for (const auto& pt : coords) {
        if (!pt.is_array() || pt.size() < 2) throw std::runtime_error("malformed coordinate");
        ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    return ring;
}

PolygonAnnotation parse_polygon(const json& rings) {
    if (!rings.is_array() || rings.empty()) throw std::runtime_error("polygon without rings");
    PolygonAnnotation poly;
    poly.exterior = parse_ring(rings[0]);
    validate_ring(poly.exterior);
    for (std::size_t i = 1; i < rings.size(); ++i) {
        poly.holes.push_back(parse_ring(rings[i]));
        validate_ring(poly.holes.back());
    }
    return poly;
}

json ring_to_json(const Ring& ring) {
    json arr = json::array();
    for (const auto& p : ring) arr.push_back({p.x, p.y});
    return arr;
}

}  // namespace

AnnotationSet read_annotations(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("read_annotations: unparseable file " + path.string() + ": " + e.what());
    }
    AnnotationSet out;
    try {
        if (doc.at("type").get<std::string>() != "FeatureCollection") {
            throw std::runtime_error("not a FeatureCollection");
        }
        for (const auto& feature : doc.at("features")) {
            const auto& geom = feature.at("geometry");
            const std::string type = geom.is_null() ? "" : geom.at("type").get<std::string>();
            std::string label = "waste_dump";
            if (feature.contains("properties") && feature["properties"].is_object()) {
                label = feature["properties"].value("label", label);
            }
            if (type == "Polygon") {
                out.polygons.push_back(parse_polygon(geom.at("coordinates")));
                out.polygons.back().label = label;
            } else if (type == "MultiPolygon") {
                for (const auto& part : geom.at("coordinates")) {
                    out.polygons.push_back(parse_polygon(part));
                    out.polygons.back().label = label;
                }
            } else {
                ++out.skipped;
            }
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("read_annotations: malformed GeoJSON in " + path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("read_annotations: invalid polygon in " + path.string() + ": " + e.what());
    }
    if (out.skipped > 0) {
        std::cerr << "read_annotations: skipped " << out.skipped << " non-polygon feature(s) in "
                  << path.string() << "\n";
    }
    return out;
}

void write_annotations(std::span<const PolygonAnnotation> polygons, const fs::path& path) {
    json features = json::array();
    for (const auto& poly : polygons) {
        json rings = json::array({ring_to_json(poly.exterior)});
        for (const auto& hole : poly.holes) rings.push_back(ring_to_json(hole));
        features.push_back({{"type", "Feature"},
                            {"properties", {{"label", poly.label}}},
                            {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}}});
    }
    json doc = {{"type", "FeatureCollection"}, {"features", features}};
    write_text_atomic(path, doc.dump() + "\n");
}

}  // namespace dumpwatch
