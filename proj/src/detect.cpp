#include "dumpwatch/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "dumpwatch/ops.hpp"
#include "dumpwatch/training.hpp"

namespace dumpwatch {

using nlohmann::json;

void InferenceConfig::validate(int divisor) const {
    if (tile_size < 1) throw std::invalid_argument("inference.tile_size must be positive");
    if (divisor > 0 && tile_size % divisor != 0) {
        throw std::invalid_argument("inference.tile_size must be a multiple of " + std::to_string(divisor));
    }
    if (overlap < 0 || 2 * overlap >= tile_size) {
        throw std::invalid_argument("inference.overlap must be in [0, tile_size / 2)");
    }
    if (batch_size < 1) throw std::invalid_argument("inference.batch_size must be >= 1");
}

void PostprocConfig::validate() const {
    if (!(probability_threshold > 0.0 && probability_threshold < 1.0)) {
        throw std::invalid_argument("postprocess.threshold must be in (0, 1)");
    }
    if (!(min_area >= 0.0)) throw std::invalid_argument("postprocess.min_area must be >= 0");
    if (connectivity != 4 && connectivity != 8) {
        throw std::invalid_argument("postprocess.connectivity must be 4 or 8");
    }
}

std::vector<int> tile_starts(int length, int tile, int overlap) {
    if (length < 1) throw std::invalid_argument("tile_starts: empty axis");
    const int stride = tile - overlap;
    std::vector<int> starts{0};
    while (starts.back() + tile < length) starts.push_back(starts.back() + stride);
    return starts;
}

namespace {

Raster model_input(const Raster& raster, const NormalizationStats& stats) {
    bool direct = true;
    for (const auto& name : stats.band_names) direct = direct && raster.band_index(name) >= 0;
    if (direct) {
        Raster out(raster.width, raster.height, static_cast<int>(stats.band_names.size()), raster.transform,
                   raster.nodata, stats.band_names);
        for (std::size_t b = 0; b < stats.band_names.size(); ++b) {
            auto src = raster.band(raster.band_index(stats.band_names[b]));
            std::copy(src.begin(), src.end(), out.band(static_cast<int>(b)).begin());
        }
        return out;
    }
    std::string list;
    for (const auto& name : stats.band_names) list += (list.empty() ? "" : ",") + name;
    try {
        return stack_bands(raster, BandSpec::parse(list));
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("predict_raster: band mismatch with checkpoint (" + list + "): " + e.what());
    }
}

}  // namespace

Raster predict_raster(const ParameterSet& params, const UNetConfig& config, const Raster& raster,
                      const NormalizationStats& stats, const InferenceConfig& icfg) {
    icfg.validate(config.divisor());
    if (raster.width < 1 || raster.height < 1) throw std::invalid_argument("predict_raster: empty raster");
    if (static_cast<int>(stats.band_names.size()) != config.in_channels) {
        throw std::invalid_argument("predict_raster: normalization has " + std::to_string(stats.band_names.size()) +
                                    " bands, model expects " + std::to_string(config.in_channels));
    }
    const Raster input = model_input(raster, stats);
    const int w = input.width, h = input.height, bands = input.band_count;
    const std::size_t plane = input.plane_size();

    std::vector<std::uint8_t> invalid(plane, 0);
    std::vector<float> norm(input.samples.size());
    for (int b = 0; b < bands; ++b) {
        auto src = input.band(b);
        for (std::size_t i = 0; i < plane; ++i) {
            if (input.is_nodata(src[i]) || std::isnan(src[i])) invalid[i] = 1;
        }
    }
    for (int b = 0; b < bands; ++b) {
        auto src = input.band(b);
        float* dst = norm.data() + static_cast<std::size_t>(b) * plane;
        const auto bi = static_cast<std::size_t>(b);
        for (std::size_t i = 0; i < plane; ++i) {
            dst[i] = invalid[i] ? 0.0f : static_cast<float>((src[i] - stats.mean[bi]) / stats.stddev[bi]);
        }
    }

    struct Tile {
        int row, col;
    };
    std::vector<Tile> tiles;
    const int t = icfg.tile_size;
    for (int r : tile_starts(h, t, icfg.overlap))
        for (int c : tile_starts(w, t, icfg.overlap)) tiles.push_back({r, c});

    std::vector<double> acc(plane, 0.0);
    std::vector<std::uint16_t> hits(plane, 0);
    const auto ts = static_cast<std::size_t>(t);
    for (std::size_t first = 0; first < tiles.size(); first += static_cast<std::size_t>(icfg.batch_size)) {
        const std::size_t n = std::min(tiles.size() - first, static_cast<std::size_t>(icfg.batch_size));
        Tensor batch({n, static_cast<std::size_t>(bands), ts, ts});
        auto out = batch.values();
        for (std::size_t k = 0; k < n; ++k) {
            const Tile& tile = tiles[first + k];
            for (int b = 0; b < bands; ++b) {
                const float* src = norm.data() + static_cast<std::size_t>(b) * plane;
                float* dst = out.data() + (k * bands + b) * ts * ts;
                for (int r = 0; r < t; ++r) {
                    const long sr = reflect_index(tile.row + r, h);
                    for (int c = 0; c < t; ++c) {
                        dst[static_cast<std::size_t>(r) * ts + c] = src[sr * w + reflect_index(tile.col + c, w)];
                    }
                }
            }
        }
        Graph<float> g(Graph<float>::Mode::kInference);
        const Tensor logits = unet_forward(g, params, config, batch);
        const auto lv = logits.values();
        for (std::size_t k = 0; k < n; ++k) {
            const Tile& tile = tiles[first + k];
            const int rows = std::min(t, h - tile.row), cols = std::min(t, w - tile.col);
            for (int r = 0; r < rows; ++r) {
                for (int c = 0; c < cols; ++c) {
                    const std::size_t i = static_cast<std::size_t>(tile.row + r) * w + (tile.col + c);
                    acc[i] += stable_sigmoid(lv[k * ts * ts + static_cast<std::size_t>(r) * ts + c]);
                    ++hits[i];
                }
            }
        }
    }

    const float nan = std::numeric_limits<float>::quiet_NaN();
    Raster prob(w, h, 1, raster.transform, nan, {"probability"});
    const float lo = std::numeric_limits<float>::min(), hi = std::nextafter(1.0f, 0.0f);
    for (std::size_t i = 0; i < plane; ++i) {
        prob.samples[i] = invalid[i] ? nan : std::clamp(static_cast<float>(acc[i] / hits[i]), lo, hi);
    }
    return prob;
}

Mask threshold_probability(const Raster& probability, double t) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("threshold_probability: threshold must be in (0, 1)");
    if (probability.band_count < 1) throw std::invalid_argument("threshold_probability: no band");
    Mask mask(probability.width, probability.height);
    auto band = probability.band(0);
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        const float v = band[i];
        mask.data[i] = !probability.is_nodata(v) && !std::isnan(v) && v >= t;
    }
    return mask;
}

namespace {

struct DisjointSets {
    std::vector<int> parent;

    int make() {
        parent.push_back(static_cast<int>(parent.size()));
        return parent.back();
    }
    int find(int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

Components connected_components(const Mask& binary, int connectivity) {
    if (connectivity != 4 && connectivity != 8) {
        throw std::invalid_argument("connected_components: connectivity must be 4 or 8");
    }
    const int w = binary.width, h = binary.height;
    Components out{w, h, std::vector<int>(binary.data.size(), -1), {}};
    DisjointSets sets;
    auto provisional = [&](int r, int c) {
        return r < 0 || c < 0 || c >= w ? -1 : out.labels[static_cast<std::size_t>(r) * w + c];
    };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (!binary.at(r, c)) continue;
            int neighbours[4] = {provisional(r, c - 1), provisional(r - 1, c), -1, -1};
            if (connectivity == 8) {
                neighbours[2] = provisional(r - 1, c - 1);
                neighbours[3] = provisional(r - 1, c + 1);
            }
            int label = -1;
            for (int n : neighbours) {
                if (n < 0) continue;
                if (label < 0) {
                    label = n;
                } else {
                    sets.unite(label, n);
                }
            }
            out.labels[static_cast<std::size_t>(r) * w + c] = label < 0 ? sets.make() : label;
        }
    }
    std::vector<int> final_label(sets.parent.size(), 0);
    for (auto& v : out.labels) {
        if (v < 0) {
            v = 0;
            continue;
        }
        const int root = sets.find(v);
        if (final_label[root] == 0) {
            out.sizes.push_back(0);
            final_label[root] = out.count();
        }
        v = final_label[root];
        ++out.sizes[v - 1];
    }
    return out;
}

std::vector<Detection> filter_detections(std::vector<Detection> detections, const PostprocConfig& pcfg) {
    std::erase_if(detections, [&](const Detection& d) { return !(d.area >= pcfg.min_area); });
    return detections;
}

PostprocResult postprocess(const Raster& probability, const PostprocConfig& pcfg) {
    pcfg.validate();
    PostprocResult out;
    out.binary = threshold_probability(probability, pcfg.probability_threshold);
    out.all = polygonize(connected_components(out.binary, pcfg.connectivity), probability.transform, &probability);
    out.kept = filter_detections(out.all, pcfg);
    return out;
}

namespace {

json ring_json(const Ring& ring) {
    json arr = json::array();
    for (const auto& p : ring) arr.push_back({p.x, p.y});
    return arr;
}

json polygon_json(const PolygonAnnotation& poly) {
    json rings = json::array({ring_json(poly.exterior)});
    for (const auto& hole : poly.holes) rings.push_back(ring_json(hole));
    return rings;
}

Ring ring_from_json(const json& coords) {
    Ring ring;
    for (const auto& pt : coords) ring.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    validate_ring(ring);
    return ring;
}

PolygonAnnotation polygon_from_json(const json& rings) {
    if (!rings.is_array() || rings.empty()) throw std::runtime_error("polygon without rings");
    PolygonAnnotation poly;
    poly.exterior = ring_from_json(rings[0]);
    for (std::size_t i = 1; i < rings.size(); ++i) poly.holes.push_back(ring_from_json(rings[i]));
    return poly;
}

}  // namespace

void export_geojson(std::span<const Detection> detections, const std::filesystem::path& path) {
    json features = json::array();
    for (const auto& d : detections) {
        json geometry;
        if (d.parts.size() == 1) {
            geometry = {{"type", "Polygon"}, {"coordinates", polygon_json(d.parts.front())}};
        } else {
            json parts = json::array();
            for (const auto& p : d.parts) parts.push_back(polygon_json(p));
            geometry = {{"type", "MultiPolygon"}, {"coordinates", parts}};
        }
        features.push_back({{"type", "Feature"},
                            {"properties",
                             {{"area_m2", d.area},
                              {"mean_probability", d.mean_probability},
                              {"pixel_count", d.pixel_count}}},
                            {"geometry", geometry}});
    }
    json doc = {{"type", "FeatureCollection"}, {"features", features}};
    write_text_atomic(path, doc.dump() + "\n");
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::vector<Detection> out;
    try {
        const json doc = json::parse(read_text(path));
        if (doc.at("type") != "FeatureCollection") throw std::runtime_error("not a FeatureCollection");
        int label = 0;
        for (const auto& feature : doc.at("features")) {
            Detection d;
            const auto& props = feature.at("properties");
            d.area = props.at("area_m2").get<double>();
            d.mean_probability = props.at("mean_probability").get<double>();
            d.pixel_count = props.at("pixel_count").get<std::size_t>();
            d.label = ++label;
            const auto& geom = feature.at("geometry");
            const std::string type = geom.at("type").get<std::string>();
            if (type == "Polygon") {
                d.parts.push_back(polygon_from_json(geom.at("coordinates")));
            } else if (type == "MultiPolygon") {
                for (const auto& part : geom.at("coordinates")) d.parts.push_back(polygon_from_json(part));
            } else {
                throw std::runtime_error("unexpected geometry " + type);
            }
            out.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("read_detections: malformed GeoJSON in " + path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("read_detections: invalid polygon in " + path.string() + ": " + e.what());
    }
    return out;
}

}  // namespace dumpwatch
