#include "dumpwatch/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dumpwatch/random.hpp"

namespace dumpwatch {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path RunPaths::resolve(const std::string& entry) const {
    const fs::path p(entry);
    return p.is_absolute() ? p : out / p;
}

namespace {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Reads the fields of one JSON object, rejecting unknown keys and type
// mismatches with the dotted field name.
class Section {
public:
    Section(const json& doc, std::string name) : doc_(doc), name_(std::move(name)) {
        if (!doc_.is_object()) throw ConfigError("config section " + name_ + " must be an object");
    }

    template <typename T>
    void get(const std::string& key, T& dst) {
        if (!doc_.contains(key)) return;
        seen_.insert(key);
        const json& v = doc_.at(key);
        if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ConfigError(field(key) + ": expected a non-negative integer");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
        } else {
            if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
        }
        dst = v.get<T>();
    }

    const json* child(const std::string& key) {
        if (!doc_.contains(key)) return nullptr;
        seen_.insert(key);
        return &doc_.at(key);
    }

    std::string field(const std::string& key) const { return "config field " + name_ + "." + key; }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!seen_.count(key)) throw ConfigError("unknown config field " + name_ + "." + key);
        }
    }

private:
    const json& doc_;
    std::string name_;
    std::set<std::string> seen_;
};

BandSpec parse_bands(const json& v) {
    if (v.is_string()) return BandSpec::parse(v.get<std::string>());
    if (v.is_array()) {
        std::string list;
        for (const auto& b : v) {
            if (!b.is_string()) throw ConfigError("config field bands: expected band names");
            list += (list.empty() ? "" : ",") + b.get<std::string>();
        }
        return BandSpec::parse(list);
    }
    throw ConfigError("config field bands: expected a comma-separated string or an array");
}

}  // namespace

void RunConfig::merge(const json& doc) {
    Section root(doc, "config");
    root.get("seed", seed);
    if (const json* p = root.child("paths")) {
        Section s(*p, "paths");
        std::string out = paths.out.string();
        s.get("out", out);
        paths.out = out;
        s.get("scene", paths.scene);
        s.get("annotations", paths.annotations);
        s.get("catalog", paths.catalog);
        s.get("checkpoint", paths.checkpoint);
        s.get("report", paths.report);
        s.get("input", paths.input);
        s.get("probability", paths.probability);
        s.get("detections", paths.detections);
        s.get("truth", paths.truth);
        s.get("ablation", paths.ablation);
        s.finish();
    }
    if (const json* p = root.child("synth")) {
        Section s(*p, "synth");
        s.get("scene_size", synth.scene_size);
        s.get("pixel_size", synth.pixel_size);
        s.get("dump_count", synth.dump_count);
        s.get("dump_radius_min", synth.dump_radius_min);
        s.get("dump_radius_max", synth.dump_radius_max);
        s.get("distractor_count", synth.distractor_count);
        s.get("origin_x", synth.origin_x);
        s.get("origin_y", synth.origin_y);
        s.finish();
    }
    if (const json* p = root.child("bands")) {
        try {
            bands = parse_bands(*p);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config field bands: ") + e.what());
        }
    }
    if (const json* p = root.child("chips")) {
        Section s(*p, "chips");
        s.get("chip_size", chips.chip_size);
        s.get("stride", chips.stride);
        s.get("negatives_per_positive", chips.negatives_per_positive);
        s.get("test_fraction", test_fraction);
        s.get("val_fraction", val_fraction);
        s.finish();
    }
    if (const json* p = root.child("model")) {
        Section s(*p, "model");
        s.get("depth", model.depth);
        s.get("base_filters", model.base_filters);
        s.finish();
    }
    if (const json* p = root.child("train")) {
        Section s(*p, "train");
        s.get("batch_size", train.batch_size);
        s.get("max_epochs", train.max_epochs);
        s.get("learning_rate", train.learning_rate);
        if (const json* w = s.child("pos_weight")) {
            if (w->is_null()) {
                train.pos_weight.reset();
            } else if (w->is_number()) {
                train.pos_weight = w->get<double>();
            } else {
                throw ConfigError(s.field("pos_weight") + ": expected a number or null");
            }
        }
        s.get("plateau_patience", train.plateau_patience);
        s.get("plateau_min_delta", train.plateau_min_delta);
        s.get("threshold", train.threshold);
        s.finish();
    }
    if (const json* p = root.child("inference")) {
        Section s(*p, "inference");
        s.get("tile_size", inference.tile_size);
        s.get("overlap", inference.overlap);
        s.get("batch_size", inference.batch_size);
        s.finish();
    }
    if (const json* p = root.child("postprocess")) {
        Section s(*p, "postprocess");
        s.get("threshold", postprocess.probability_threshold);
        s.get("min_area", postprocess.min_area);
        s.get("connectivity", postprocess.connectivity);
        s.finish();
    }
    if (const json* p = root.child("evaluate")) {
        Section s(*p, "evaluate");
        s.get("split", evaluate_split);
        s.finish();
    }
    if (const json* p = root.child("ablate")) {
        Section s(*p, "ablate");
        s.get("seeds", ablate_seeds);
        s.finish();
    }
    root.finish();
}

json RunConfig::to_json() const {
    json pw = train.pos_weight ? json(*train.pos_weight) : json(nullptr);
    return {{"seed", seed},
            {"paths",
             {{"out", paths.out.string()},
              {"scene", paths.scene},
              {"annotations", paths.annotations},
              {"catalog", paths.catalog},
              {"checkpoint", paths.checkpoint},
              {"report", paths.report},
              {"input", paths.input},
              {"probability", paths.probability},
              {"detections", paths.detections},
              {"truth", paths.truth},
              {"ablation", paths.ablation}}},
            {"synth",
             {{"scene_size", synth.scene_size},
              {"pixel_size", synth.pixel_size},
              {"dump_count", synth.dump_count},
              {"dump_radius_min", synth.dump_radius_min},
              {"dump_radius_max", synth.dump_radius_max},
              {"distractor_count", synth.distractor_count},
              {"origin_x", synth.origin_x},
              {"origin_y", synth.origin_y}}},
            {"bands", bands.names()},
            {"chips",
             {{"chip_size", chips.chip_size},
              {"stride", chips.stride},
              {"negatives_per_positive", chips.negatives_per_positive},
              {"test_fraction", test_fraction},
              {"val_fraction", val_fraction}}},
            {"model", {{"depth", model.depth}, {"base_filters", model.base_filters}}},
            {"train",
             {{"batch_size", train.batch_size},
              {"max_epochs", train.max_epochs},
              {"learning_rate", train.learning_rate},
              {"pos_weight", pw},
              {"plateau_patience", train.plateau_patience},
              {"plateau_min_delta", train.plateau_min_delta},
              {"threshold", train.threshold}}},
            {"inference",
             {{"tile_size", inference.tile_size}, {"overlap", inference.overlap}, {"batch_size", inference.batch_size}}},
            {"postprocess",
             {{"threshold", postprocess.probability_threshold},
              {"min_area", postprocess.min_area},
              {"connectivity", postprocess.connectivity}}},
            {"evaluate", {{"split", evaluate_split}}},
            {"ablate", {{"seeds", ablate_seeds}}}};
}

void RunConfig::validate() const {
    synth.validate();
    if (bands.sources.empty()) throw ConfigError("config field bands: empty band list");
    std::set<std::string> seen;
    for (const auto& name : bands.names()) {
        const bool known = name == "NDSW" || std::find(kSourceBands.begin(), kSourceBands.end(), name) != kSourceBands.end();
        if (!known) throw ConfigError("config field bands: unknown band " + name);
        if (!seen.insert(name).second) throw ConfigError("config field bands: duplicate band " + name);
    }
    try {
        chips.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("chips.") + e.what());
    }
    split_sizes(1000, test_fraction, val_fraction);
    UNetConfig m = model;
    m.in_channels = static_cast<int>(bands.sources.size());
    m.validate();
    train.validate();
    inference.validate(m.divisor());
    postprocess.validate();
    if (evaluate_split != "train" && evaluate_split != "val" && evaluate_split != "test") {
        throw ConfigError("config field evaluate.split must be train, val or test");
    }
    if (ablate_seeds < 1) throw ConfigError("config field ablate.seeds must be >= 1");
}

RunConfig load_run_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    RunConfig cfg;
    cfg.merge(doc);
    return cfg;
}

namespace {

struct Context {
    RunConfig cfg;
    std::ostream& out;
    std::ostream& err;

    fs::path path(const std::string& entry) const { return cfg.paths.resolve(entry); }
    void log(const std::string& line) const { err << line << std::endl; }
    void summary(const json& doc) const { out << doc.dump() << std::endl; }
};

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw std::runtime_error("missing " + what + ": " + p.string());
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<Chip> with_bands(std::vector<Chip> chips, const std::vector<std::string>& names) {
    for (auto& c : chips) c = select_bands(c, names);
    return chips;
}

DatasetSplit prepare_split(const DatasetSplit& raw, const std::vector<std::string>& names,
                           const NormalizationStats& stats) {
    DatasetSplit s;
    s.seed = raw.seed;
    s.train = apply_normalization(with_bands(raw.train, names), stats);
    s.val = apply_normalization(with_bands(raw.val, names), stats);
    s.test = apply_normalization(with_bands(raw.test, names), stats);
    return s;
}

int cmd_synth(const Context& ctx) {
    SynthConfig sc = ctx.cfg.synth;
    sc.background_texture_seed = derive_seed(ctx.cfg.seed, "synth");
    sc.validate();
    const SyntheticScene scene = generate_synthetic(sc);
    const fs::path raster_path = ctx.path(ctx.cfg.paths.scene), ann_path = ctx.path(ctx.cfg.paths.annotations);
    ensure_parent(raster_path);
    ensure_parent(ann_path);
    write_raster(scene.raster, raster_path);
    write_annotations(scene.annotations, ann_path);
    if (!bitwise_equal(read_raster(raster_path), scene.raster) ||
        read_annotations(ann_path).polygons.size() != scene.annotations.size()) {
        throw std::runtime_error("synth: outputs failed the read-back check");
    }
    ctx.log("synth: wrote " + raster_path.string() + " with " + std::to_string(scene.annotations.size()) + " dumps");
    ctx.summary({{"command", "synth"},
                 {"scene", raster_path.string()},
                 {"annotations", ann_path.string()},
                 {"width", scene.raster.width},
                 {"height", scene.raster.height},
                 {"bands", scene.raster.band_names},
                 {"dump_count", scene.annotations.size()}});
    return 0;
}

int cmd_chip(const Context& ctx) {
    const fs::path raster_path = ctx.path(ctx.cfg.paths.scene), ann_path = ctx.path(ctx.cfg.paths.annotations);
    require_file(raster_path, "scene raster");
    require_file(ann_path, "annotations");
    const Raster raster = read_raster(raster_path);
    const AnnotationSet annotations = read_annotations(ann_path);
    const Raster stacked = stack_bands(raster, ctx.cfg.bands);
    const Mask mask = rasterize_mask(annotations.polygons, raster.transform, raster.width, raster.height);
    ChipParams params = ctx.cfg.chips;
    params.seed = derive_seed(ctx.cfg.seed, "chip");
    std::vector<Chip> chips = extract_chips(stacked, mask, params, raster_path.stem().string());
    std::size_t positives = 0;
    for (const auto& c : chips) positives += c.positive();
    if (positives == 0) ctx.log("chip: warning: no positive chips (no annotated pixels in the scene)");

    DatasetSplit split;
    if (!chips.empty()) {
        split = split_dataset(std::move(chips), ctx.cfg.test_fraction, ctx.cfg.val_fraction,
                              derive_seed(params.seed, "split"));
    } else {
        ctx.log("chip: warning: empty catalog");
    }
    const fs::path dir = ctx.path(ctx.cfg.paths.catalog);
    if (fs::exists(dir)) {
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().filename().string().rfind("chip_", 0) == 0) fs::remove(entry.path());
        }
    }
    write_chip_catalog(dir, split);
    if (!split.train.empty()) write_normalization(fit_normalization(split.train), dir / "normalization.json");
    const DatasetSplit back = read_chip_catalog(dir);
    if (back.train.size() != split.train.size() || back.val.size() != split.val.size() ||
        back.test.size() != split.test.size()) {
        throw std::runtime_error("chip: catalog failed the read-back check");
    }
    ctx.log("chip: " + std::to_string(split.size()) + " chips, " + std::to_string(positives) + " positive");
    ctx.summary({{"command", "chip"},
                 {"catalog", dir.string()},
                 {"train", split.train.size()},
                 {"val", split.val.size()},
                 {"test", split.test.size()},
                 {"positive", positives},
                 {"negative", split.size() - positives}});
    return 0;
}

int cmd_train(const Context& ctx) {
    const fs::path dir = ctx.path(ctx.cfg.paths.catalog);
    const DatasetSplit raw = read_chip_catalog(dir);
    if (raw.train.empty()) throw std::runtime_error("train: empty catalog " + dir.string());
    const auto names = ctx.cfg.bands.names();
    const NormalizationStats stats = fit_normalization(with_bands(raw.train, names));
    const DatasetSplit split = prepare_split(raw, names, stats);

    UNetConfig model = ctx.cfg.model;
    model.in_channels = static_cast<int>(names.size());
    Hyperparams hyper = ctx.cfg.train;
    hyper.seed = ctx.cfg.seed;
    const ParameterSet initial = build_unet<float>(model, derive_seed(ctx.cfg.seed, "init"));
    ctx.log("train: " + std::to_string(split.train.size()) + " train / " + std::to_string(split.val.size()) +
            " val / " + std::to_string(split.test.size()) + " test chips, " +
            std::to_string(initial.parameter_count()) + " parameters");
    TrainCallbacks callbacks{[&](const EpochRecord& e) {
        std::ostringstream line;
        line << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_iou "
             << e.val_mean_iou;
        ctx.log(line.str());
    }};
    TrainResult result = train(initial, model, split, hyper, callbacks);

    Checkpoint ckpt;
    ckpt.config = model;
    ckpt.parameters = std::move(result.params);
    ckpt.normalization = stats;
    ckpt.training_metadata = {{"seed", ctx.cfg.seed},
                              {"best_epoch", result.report.best_epoch},
                              {"stopping_epoch", result.report.stopping_epoch},
                              {"best_val_loss", result.report.best_val_loss},
                              {"pos_weight", result.report.pos_weight}};
    const fs::path ckpt_path = ctx.path(ctx.cfg.paths.checkpoint), report_path = ctx.path(ctx.cfg.paths.report);
    ensure_parent(ckpt_path);
    ensure_parent(report_path);
    save_checkpoint(ckpt, ckpt_path);
    const Checkpoint back = load_checkpoint(ckpt_path);
    if (back.parameters.parameter_count() != ckpt.parameters.parameter_count()) {
        throw std::runtime_error("train: checkpoint failed the read-back check");
    }
    const json report = result.report.to_json();
    write_text_atomic(report_path, report.dump(2) + "\n");
    if (json::parse(read_text(report_path)) != report) {
        throw std::runtime_error("train: report failed the read-back check");
    }
    ctx.err << result.report.to_table();

    json summary = {{"command", "train"},
                    {"checkpoint", ckpt_path.string()},
                    {"report", report_path.string()},
                    {"best_epoch", result.report.best_epoch},
                    {"stopping_epoch", result.report.stopping_epoch},
                    {"val_loss", result.report.best_val_loss},
                    {"pos_weight", result.report.pos_weight}};
    if (result.report.test) {
        summary["test_loss"] = result.report.test->loss;
        summary["test_mean_iou"] = result.report.test->mean_iou;
    }
    ctx.summary(summary);
    return 0;
}

int cmd_evaluate(const Context& ctx) {
    const fs::path ckpt_path = ctx.path(ctx.cfg.paths.checkpoint);
    require_file(ckpt_path, "checkpoint");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const DatasetSplit raw = read_chip_catalog(ctx.path(ctx.cfg.paths.catalog));
    const std::string& which = ctx.cfg.evaluate_split;
    const auto& chips = which == "train" ? raw.train : which == "val" ? raw.val : raw.test;
    if (chips.empty()) throw std::runtime_error("evaluate: split '" + which + "' is empty");
    const auto prepared =
        apply_normalization(with_bands(chips, ckpt.normalization.band_names), ckpt.normalization);
    const double pos_weight = ckpt.training_metadata.value("pos_weight", 1.0);
    const Metrics m = evaluate(ckpt.parameters, ckpt.config, prepared, ctx.cfg.train.threshold, pos_weight);
    json summary = m.to_json();
    summary["command"] = "evaluate";
    summary["split"] = which;
    summary["threshold"] = ctx.cfg.train.threshold;
    summary["chips"] = prepared.size();
    ctx.summary(summary);
    return 0;
}

int cmd_predict(const Context& ctx) {
    const fs::path ckpt_path = ctx.path(ctx.cfg.paths.checkpoint);
    require_file(ckpt_path, "checkpoint");
    const fs::path input = ctx.path(ctx.cfg.paths.input.empty() ? ctx.cfg.paths.scene : ctx.cfg.paths.input);
    require_file(input, "input raster");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const Raster raster = read_raster(input);
    const auto start = std::chrono::steady_clock::now();
    const Raster prob = predict_raster(ckpt.parameters, ckpt.config, raster, ckpt.normalization, ctx.cfg.inference);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const fs::path out = ctx.path(ctx.cfg.paths.probability);
    ensure_parent(out);
    write_raster(prob, out);
    if (!bitwise_equal(read_raster(out), prob)) throw std::runtime_error("predict: output failed the read-back check");
    const Mask above = threshold_probability(prob, ctx.cfg.postprocess.probability_threshold);
    ctx.log("predict: " + std::to_string(prob.width) + "x" + std::to_string(prob.height) + " in " +
            std::to_string(seconds) + " s");
    ctx.summary({{"command", "predict"},
                 {"input", input.string()},
                 {"probability", out.string()},
                 {"width", prob.width},
                 {"height", prob.height},
                 {"threshold", ctx.cfg.postprocess.probability_threshold},
                 {"pixels_above_threshold", above.count()}});
    return 0;
}

int cmd_postprocess(const Context& ctx) {
    const fs::path in = ctx.path(ctx.cfg.paths.probability);
    require_file(in, "probability raster");
    const Raster prob = read_raster(in);
    const PostprocResult res = postprocess(prob, ctx.cfg.postprocess);
    const fs::path out = ctx.path(ctx.cfg.paths.detections);
    ensure_parent(out);
    export_geojson(res.kept, out);
    if (read_detections(out).size() != res.kept.size()) {
        throw std::runtime_error("postprocess: output failed the read-back check");
    }
    double total_area = 0.0;
    std::vector<PolygonAnnotation> parts;
    for (const auto& d : res.kept) {
        total_area += d.area;
        parts.insert(parts.end(), d.parts.begin(), d.parts.end());
    }
    json summary = {{"command", "postprocess"},
                    {"detections", out.string()},
                    {"threshold", ctx.cfg.postprocess.probability_threshold},
                    {"min_area", ctx.cfg.postprocess.min_area},
                    {"pixels_above_threshold", res.binary.count()},
                    {"components", res.all.size()},
                    {"detection_count", res.kept.size()},
                    {"total_area_m2", total_area}};
    if (!ctx.cfg.paths.truth.empty()) {
        const fs::path truth_path = ctx.path(ctx.cfg.paths.truth);
        require_file(truth_path, "reference annotations");
        const auto truth = read_annotations(truth_path);
        const Mask reference = rasterize_mask(truth.polygons, prob.transform, prob.width, prob.height);
        summary["union_iou"] = iou(rasterize_mask(parts, prob.transform, prob.width, prob.height), reference);
    }
    ctx.summary(summary);
    return 0;
}

int cmd_ablate(const Context& ctx) {
    const DatasetSplit raw = read_chip_catalog(ctx.path(ctx.cfg.paths.catalog));
    if (raw.train.empty()) throw std::runtime_error("ablate: empty catalog");
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < ctx.cfg.ablate_seeds; ++i) seeds.push_back(ctx.cfg.seed + static_cast<std::uint64_t>(i));
    const auto specs = ablation_specs();
    Hyperparams hyper = ctx.cfg.train;
    const AblationTable table =
        ablate(raw, specs, ctx.cfg.model, hyper, seeds, [&](const std::string& line) { ctx.log(line); });
    const fs::path out = ctx.path(ctx.cfg.paths.ablation);
    ensure_parent(out);
    const json doc = table.to_json();
    write_text_atomic(out, doc.dump(2) + "\n");
    fs::path text = out;
    text.replace_extension(".txt");
    write_text_atomic(text, table.to_table());
    if (json::parse(read_text(out)) != doc) throw std::runtime_error("ablate: output failed the read-back check");
    ctx.err << table.to_table();
    json summary = doc;
    summary["command"] = "ablate";
    summary["table"] = out.string();
    ctx.summary(summary);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Waste dump detection on multispectral rasters", "dumpwatch"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, bands, out_dir, input, truth, split;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold, min_area;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed");
    app.add_option("--threshold", threshold, "probability threshold for metrics and post-processing");
    app.add_option("--min-area", min_area, "minimum detection area in m^2");
    app.add_option("--bands", bands, "comma-separated input bands, e.g. R,G,B,NIR,SWIR1,NDSW");
    app.add_option("--out", out_dir, "directory for relative paths");
    app.add_option("--input", input, "raster to predict on (predict)");
    app.add_option("--truth", truth, "reference annotations for scoring (postprocess)");
    app.add_option("--split", split, "split to evaluate: train, val or test (evaluate)");

    using Handler = int (*)(const Context&);
    const std::vector<std::pair<std::string, std::pair<std::string, Handler>>> commands = {
        {"synth", {"generate a synthetic scene and its annotations", cmd_synth}},
        {"chip", {"cut a scene into a chip catalog with splits", cmd_chip}},
        {"train", {"train a U-Net on the chip catalog", cmd_train}},
        {"evaluate", {"score a checkpoint on one split", cmd_evaluate}},
        {"predict", {"tiled probability map for a raster", cmd_predict}},
        {"postprocess", {"threshold, polygonize and filter a probability map", cmd_postprocess}},
        {"ablate", {"compare band stacks", cmd_ablate}},
    };
    for (const auto& [name, info] : commands) app.add_subcommand(name, info.first);

    std::vector<const char*> argv{"dumpwatch"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 2;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) {
            cfg = load_run_config(config_path);
        }
        if (seed) cfg.seed = *seed;
        if (threshold) {
            cfg.train.threshold = *threshold;
            cfg.postprocess.probability_threshold = *threshold;
        }
        if (min_area) cfg.postprocess.min_area = *min_area;
        if (!bands.empty()) cfg.bands = BandSpec::parse(bands);
        if (!out_dir.empty()) cfg.paths.out = out_dir;
        if (!input.empty()) cfg.paths.input = input;
        if (!truth.empty()) cfg.paths.truth = truth;
        if (!split.empty()) cfg.evaluate_split = split;
        cfg.validate();
    } catch (const std::exception& e) {
        err << "dumpwatch: invalid configuration: " << e.what() << std::endl;
        return 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    Context ctx{cfg, out, err};
    try {
        for (const auto& [cmd, info] : commands)
            if (cmd == name) return info.second(ctx);
    } catch (const std::exception& e) {
        err << "dumpwatch " << name << ": " << e.what() << std::endl;
        return 1;
    }
    return 2;
}

}  // namespace dumpwatch
