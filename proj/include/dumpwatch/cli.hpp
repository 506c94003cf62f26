#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dumpwatch/dataset.hpp"
#include "dumpwatch/detect.hpp"
#include "dumpwatch/training.hpp"
#include "dumpwatch/unet.hpp"

namespace dumpwatch {

/// File locations. Relative entries resolve against `out`.
struct RunPaths {
    std::filesystem::path out = ".";
    std::string scene = "scene.json";
    std::string annotations = "annotations.geojson";
    std::string catalog = "chips";
    std::string checkpoint = "model.json";
    std::string report = "train_report.json";
    std::string input;  ///< raster to predict on; empty means the scene
    std::string probability = "probability.json";
    std::string detections = "detections.geojson";
    std::string truth;  ///< optional reference annotations for postprocess
    std::string ablation = "ablation.json";

    std::filesystem::path resolve(const std::string& entry) const;
};

/**
 * Declarative run configuration. JSON sections: seed, paths, synth, bands,
 * chips, model, train, inference, postprocess, evaluate, ablate. Fields left
 * out keep their defaults; unknown fields are rejected.
 */
struct RunConfig {
    std::uint64_t seed = 0;
    RunPaths paths;
    SynthConfig synth;
    BandSpec bands = BandSpec::default_six();
    ChipParams chips;
    double test_fraction = 0.1;
    double val_fraction = 0.2;
    UNetConfig model;
    Hyperparams train;
    InferenceConfig inference;
    PostprocConfig postprocess;
    std::string evaluate_split = "test";
    int ablate_seeds = 3;

    /// Overlays the fields present in `doc`; messages name the offending field.
    void merge(const nlohmann::json& doc);
    nlohmann::json to_json() const;
    /// Checks every section against its module's invariants.
    void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Runs one subcommand (args exclude the program name). Summary JSON goes to
/// `out`, logs and errors to `err`. Returns the exit status: 0 on success, 1
/// on runtime failure, 2 on usage or configuration errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dumpwatch
