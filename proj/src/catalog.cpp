#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dumpwatch/dataset.hpp"

namespace dumpwatch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kCatalogVersion = 1;

const char* split_label(SplitName s) {
    switch (s) {
        case SplitName::kTrain: return "train";
        case SplitName::kVal: return "val";
        case SplitName::kTest: return "test";
    }
    return "train";
}

Raster chip_to_raster(const Chip& chip) {
    Raster r(chip.size, chip.size, chip.band_count() + 1, chip.transform,
             std::numeric_limits<float>::quiet_NaN(), chip.band_names);
    r.band_names.push_back("mask");
    std::copy(chip.samples.begin(), chip.samples.end(), r.samples.begin());
    auto mask_band = r.band(chip.band_count());
    for (std::size_t i = 0; i < mask_band.size(); ++i) mask_band[i] = chip.mask.data[i];
    return r;
}

Chip raster_to_chip(const Raster& r, PixelIndex origin, std::string scene) {
    if (r.band_count < 2 || r.band_names.empty() || r.band_names.back() != "mask" || r.width != r.height) {
        throw std::runtime_error("chip catalog: chip raster lacks a trailing mask band");
    }
    Chip chip;
    chip.size = r.width;
    chip.band_names.assign(r.band_names.begin(), r.band_names.end() - 1);
    chip.samples.assign(r.samples.begin(), r.samples.end() - static_cast<long>(r.plane_size()));
    chip.mask = Mask(r.width, r.height);
    auto mask_band = r.band(r.band_count - 1);
    for (std::size_t i = 0; i < mask_band.size(); ++i) {
        if (mask_band[i] != 0.0f && mask_band[i] != 1.0f) throw std::runtime_error("chip catalog: non-binary mask");
        chip.mask.data[i] = mask_band[i] != 0.0f;
    }
    chip.origin = origin;
    chip.transform = r.transform;
    chip.scene_id = std::move(scene);
    return chip;
}

}  // namespace

void write_chip_catalog(const fs::path& dir, const DatasetSplit& split) {
    fs::create_directories(dir);
    json entries = json::array();
    std::size_t index = 0;
    auto emit = [&](const std::vector<Chip>& chips, SplitName which) {
        for (const auto& chip : chips) {
            std::ostringstream name;
            name << "chip_" << std::setw(6) << std::setfill('0') << index++ << ".json";
            write_raster(chip_to_raster(chip), dir / name.str());
            entries.push_back({{"file", name.str()},
                               {"origin", {chip.origin.col, chip.origin.row}},
                               {"split", split_label(which)},
                               {"positive", chip.positive()},
                               {"scene", chip.scene_id}});
        }
    };
    emit(split.train, SplitName::kTrain);
    emit(split.val, SplitName::kVal);
    emit(split.test, SplitName::kTest);
    json doc = {{"format", "dumpwatch-chip-catalog"},
                {"version", kCatalogVersion},
                {"seed", split.seed},
                {"counts", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}}},
                {"chips", entries}};
    write_text_atomic(dir / "index.json", doc.dump(2) + "\n");
}

DatasetSplit read_chip_catalog(const fs::path& dir) {
    const fs::path index_path = dir / "index.json";
    if (!fs::exists(index_path)) throw std::runtime_error("chip catalog: missing " + index_path.string());
    DatasetSplit split;
    try {
        const json doc = json::parse(read_text(index_path));
        if (doc.at("format").get<std::string>() != "dumpwatch-chip-catalog" ||
            doc.at("version").get<int>() != kCatalogVersion) {
            throw std::runtime_error("chip catalog: unsupported format or version");
        }
        split.seed = doc.at("seed").get<std::uint64_t>();
        for (const auto& e : doc.at("chips")) {
            const auto origin = e.at("origin");
            Chip chip = raster_to_chip(read_raster(dir / e.at("file").get<std::string>()),
                                       {origin.at(0).get<long>(), origin.at(1).get<long>()},
                                       e.at("scene").get<std::string>());
            if (chip.positive() != e.at("positive").get<bool>()) {
                throw std::runtime_error("chip catalog: positivity flag disagrees with mask for " +
                                         e.at("file").get<std::string>());
            }
            const auto which = e.at("split").get<std::string>();
            if (which == "train") {
                split.train.push_back(std::move(chip));
            } else if (which == "val") {
                split.val.push_back(std::move(chip));
            } else if (which == "test") {
                split.test.push_back(std::move(chip));
            } else {
                throw std::runtime_error("chip catalog: unknown split '" + which + "'");
            }
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("chip catalog: malformed index " + index_path.string() + ": " + e.what());
    }
    return split;
}

void write_normalization(const NormalizationStats& stats, const fs::path& path) {
    json doc = {{"band_names", stats.band_names}, {"mean", stats.mean}, {"std", stats.stddev}};
    write_text_atomic(path, doc.dump(2) + "\n");
}

NormalizationStats read_normalization(const fs::path& path) {
    try {
        const json doc = json::parse(read_text(path));
        NormalizationStats s{doc.at("band_names").get<std::vector<std::string>>(),
                             doc.at("mean").get<std::vector<double>>(), doc.at("std").get<std::vector<double>>()};
        if (s.mean.size() != s.band_names.size() || s.stddev.size() != s.band_names.size()) {
            throw std::runtime_error("normalization stats: length mismatch in " + path.string());
        }
        return s;
    } catch (const json::exception& e) {
        throw std::runtime_error("normalization stats: malformed " + path.string() + ": " + e.what());
    }
}

}  // namespace dumpwatch
