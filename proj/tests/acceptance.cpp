// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <chrono>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dumpwatch/cli.hpp"
#include "dumpwatch/detect.hpp"
#include "dumpwatch/parallel.hpp"
#include "dumpwatch/random.hpp"
#include "dumpwatch/training.hpp"
#include "grad_cases.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace dumpwatch {
namespace {

using nlohmann::json;
using testing::TempDir;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Result {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

// --- 1: gradients -------------------------------------------------------------

Result gradient_suite() {
    const auto t0 = Clock::now();
    constexpr int kCases = 25;
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    std::string worst_op;
    for (const auto& op : gradcase::op_names()) {
        for (int i = 0; i < kCases; ++i) {
            const double err = gradcase::run(op, rng);
            if (!(err <= worst)) {
                worst = err;
                worst_op = op;
            }
        }
    }
    const double secs = since(t0);
    return {worst < 1e-4 && secs < 60.0,
            std::to_string(gradcase::op_names().size()) + " ops x " + std::to_string(kCases) +
                " cases, max rel err " + fmt(worst, 3) + " (" + worst_op + "), " + fmt(secs, 3) + " s"};
}

// --- 2: oracles ---------------------------------------------------------------

Result oracle_suite() {
    const auto t0 = Clock::now();
    constexpr int kInstances = 100;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    int conv_bad = 0, iou_bad = 0, cc_bad = 0, raster_bad = 0;

    for (int trial = 0; trial < kInstances; ++trial) {
        const std::size_t b = 1 + rng() % 3, cin = 1 + rng() % 3, cout = 1 + rng() % 3;
        const std::size_t h = 1 + rng() % 8, w = 1 + rng() % 8, k = 3;
        Tensor x({b, cin, h, w}), kernel({cout, cin, k, k}), bias({cout});
        for (auto* t : {&x, &kernel, &bias})
            for (auto& v : t->values()) v = u(rng);
        Graph<float> g(Graph<float>::Mode::kInference);
        const Tensor y = conv2d(g, x, kernel, bias);
        const auto ref = oracle::conv2d(std::vector<float>(x.values().begin(), x.values().end()), b, cin, h, w,
                                        std::vector<float>(kernel.values().begin(), kernel.values().end()), cout,
                                        k, std::vector<float>(bias.values().begin(), bias.values().end()));
        bool ok = y.numel() == ref.size();
        for (std::size_t i = 0; ok && i < ref.size(); ++i) ok = std::fabs(y[i] - ref[i]) <= 1e-6f * std::max(1.0f, std::fabs(ref[i]));
        conv_bad += !ok;
    }
    for (int trial = 0; trial < kInstances; ++trial) {
        const int w = 1 + static_cast<int>(rng() % 24), h = 1 + static_cast<int>(rng() % 24);
        const double d = 0.05 + 0.9 * static_cast<double>(trial) / kInstances;
        const Mask a = oracle::random_mask(rng, w, h, d), b = oracle::random_mask(rng, w, h, 1.0 - d);
        iou_bad += std::fabs(iou(a, b) - oracle::set_iou(a, b)) > 1e-12;
    }
    for (int trial = 0; trial < kInstances; ++trial) {
        const int connectivity = trial % 2 ? 4 : 8;
        const Mask m = oracle::random_mask(rng, 16, 16, 0.2 + 0.6 * static_cast<double>(trial % 10) / 9.0);
        int count = 0;
        const auto expected = oracle::flood_fill_labels(m, connectivity, &count);
        const auto got = connected_components(m, connectivity);
        cc_bad += got.count() != count || got.labels != expected;
    }
    for (int trial = 0; trial < kInstances; ++trial) {
        const int w = 8 + static_cast<int>(rng() % 25), h = 8 + static_cast<int>(rng() % 25);
        const GeoTransform t{300000.0 + trial, 6170000.0, 10.0, 10.0};
        std::vector<PolygonAnnotation> polys;
        for (std::size_t n = 1 + rng() % 3; n > 0; --n) polys.push_back(oracle::random_polygon(rng, t, w, h));
        raster_bad += !(rasterize_mask(polys, t, w, h) == oracle::rasterize(polys, t, w, h));
    }
    const double secs = since(t0);
    const int bad = conv_bad + iou_bad + cc_bad + raster_bad;
    return {bad == 0 && secs < 60.0,
            "4 oracles x " + std::to_string(kInstances) + " instances, mismatches conv=" + std::to_string(conv_bad) +
                " iou=" + std::to_string(iou_bad) + " components=" + std::to_string(cc_bad) +
                " rasterize=" + std::to_string(raster_bad) + ", " + fmt(secs, 3) + " s"};
}

// --- 3: overfit ---------------------------------------------------------------

struct OverfitRun {
    TrainResult result;
    int first_below = 0;
    double seconds = 0.0;
};

OverfitRun overfit_run() {
    SynthConfig sc;
    sc.scene_size = 128;
    sc.dump_count = 4;
    sc.background_texture_seed = derive_seed(1, "synth");
    const auto scene = generate_synthetic(sc);
    const Raster stacked = stack_bands(scene.raster, BandSpec::default_six());
    const Mask mask = rasterize_mask(scene.annotations, stacked.transform, stacked.width, stacked.height);
    std::vector<Chip> chips;
    for (auto& c : extract_chips(stacked, mask, {64, 32, 0.0, derive_seed(1, "chip")}))
        if (c.positive() && chips.size() < 4) chips.push_back(std::move(c));
    DatasetSplit split;
    const auto stats = fit_normalization(chips);
    split.train = apply_normalization(chips, stats);
    split.val = split.train;

    const UNetConfig cfg{6, 2, 8};
    Hyperparams h;
    h.batch_size = 4;
    h.max_epochs = 200;
    h.plateau_patience = 200;
    h.seed = 1;
    OverfitRun run;
    const auto t0 = Clock::now();
    run.result = train(build_unet<float>(cfg, derive_seed(1, "init")), cfg, split, h,
                       {[&](const EpochRecord& e) {
                           if (run.first_below == 0 && e.train_loss < 0.01) run.first_below = e.epoch;
                       }});
    run.seconds = since(t0);
    return run;
}

Result overfit(const OverfitRun& run) {
    const double final_loss = run.result.report.epochs.back().train_loss;
    return {run.first_below > 0 && run.seconds < 120.0,
            "4 chips 64x64, depth 2 base 8: train loss < 0.01 first at epoch " +
                (run.first_below ? std::to_string(run.first_below) : std::string("never")) + ", final " +
                fmt(final_loss, 3) + ", 200 epochs in " + fmt(run.seconds, 3) + " s"};
}

// --- 4/5: CLI pipeline ----------------------------------------------------------

struct Pipeline {
    bool ok = true;
    std::string failure;
    json chip, train, evaluate, postprocess, ablate;
    double pipeline_seconds = 0.0;
    double ablate_seconds = 0.0;
};

json cli(const std::vector<std::string>& args, Pipeline& p) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) {
        p.ok = false;
        p.failure = args.front() + " exited " + std::to_string(code) + ": " + err.str().substr(0, 300);
        return json::object();
    }
    return json::parse(out.str());
}

json pipeline_config(const TempDir& dir) {
    return {{"seed", 11},
            {"paths", {{"out", dir.path().string()}}},
            {"synth", {{"scene_size", 448}, {"dump_count", 22}}},
            {"chips", {{"chip_size", 64}, {"stride", 32}, {"negatives_per_positive", 1.0}}},
            {"model", {{"depth", 2}, {"base_filters", 8}}},
            {"train", {{"batch_size", 16}, {"max_epochs", 30}}},
            {"inference", {{"tile_size", 128}, {"overlap", 16}}},
            {"postprocess", {{"threshold", 0.5}, {"min_area", 100.0}}}};
}

Pipeline run_pipeline(const TempDir& dir) {
    Pipeline p;
    write_text_atomic(dir / "run.json", pipeline_config(dir).dump(2));
    const std::string cfg = (dir / "run.json").string();
    const auto t0 = Clock::now();
    cli({"synth", "--config", cfg}, p);
    if (p.ok) p.chip = cli({"chip", "--config", cfg}, p);
    if (p.ok) p.train = cli({"train", "--config", cfg}, p);
    if (p.ok) p.evaluate = cli({"evaluate", "--config", cfg}, p);
    if (p.ok) cli({"synth", "--config", cfg, "--seed", "12", "--out", (dir / "heldout").string()}, p);
    if (p.ok) cli({"predict", "--config", cfg, "--input", "heldout/scene.json"}, p);
    if (p.ok) p.postprocess = cli({"postprocess", "--config", cfg, "--truth", "heldout/annotations.geojson"}, p);
    p.pipeline_seconds = since(t0);

    json ab = pipeline_config(dir);
    ab["train"]["max_epochs"] = 10;
    ab["train"]["learning_rate"] = 3e-3;
    ab["ablate"] = {{"seeds", 3}};
    write_text_atomic(dir / "ablate.json", ab.dump(2));
    const auto t1 = Clock::now();
    if (p.ok) p.ablate = cli({"ablate", "--config", (dir / "ablate.json").string()}, p);
    p.ablate_seconds = since(t1);
    return p;
}

Result end_to_end(const Pipeline& p) {
    if (!p.ok && p.postprocess.is_null()) return {false, "pipeline failed: " + p.failure};
    const std::size_t chips = p.chip["train"].get<std::size_t>() + p.chip["val"].get<std::size_t>() +
                              p.chip["test"].get<std::size_t>();
    const double test_iou = p.evaluate["mean_iou"].get<double>();
    const double union_iou = p.postprocess.value("union_iou", 0.0);
    return {test_iou >= 0.5 && union_iou >= 0.5 && p.pipeline_seconds < 900.0,
            std::to_string(chips) + " chips, test mean IoU " + fmt(test_iou) + ", held-out union IoU " +
                fmt(union_iou) + " (" + std::to_string(p.postprocess["detection_count"].get<int>()) +
                " detections), " + fmt(p.pipeline_seconds, 4) + " s"};
}

Result ablation(const Pipeline& p) {
    if (p.ablate.is_null() || !p.ablate.contains("rows")) return {false, "ablate failed: " + p.failure};
    const auto& rows = p.ablate["rows"];
    const std::vector<std::string> labels = {"RGB", "RGB-NIR", "RGB-NIR-SWIR", "RGB-NIR-SWIR-NDSW"};
    bool labels_ok = rows.size() == labels.size();
    std::string table;
    for (std::size_t i = 0; labels_ok && i < rows.size(); ++i) {
        labels_ok = rows[i]["label"] == labels[i];
        table += (i ? ", " : "") + labels[i] + " " + fmt(rows[i]["iou"].get<double>(), 3);
    }
    if (!labels_ok) return {false, "unexpected row labels: " + rows.dump()};
    const double gap = rows[3]["iou"].get<double>() - rows[0]["iou"].get<double>();
    return {gap >= 0.03, "IoU over 3 seeds: " + table + "; 6-band minus RGB = " + fmt(gap, 3) + ", " +
                             fmt(p.ablate_seconds, 4) + " s"};
}

// --- 6: determinism -------------------------------------------------------------

bool same_params(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto va = a.entries()[i].second.values(), vb = b.entries()[i].second.values();
        if (a.entries()[i].first != b.entries()[i].first || va.size() != vb.size() ||
            std::memcmp(va.data(), vb.data(), va.size_bytes()) != 0) {
            return false;
        }
    }
    return true;
}

json without_wall_time(json report) {
    report.erase("wall_time_s");
    return report;
}

Result determinism(const OverfitRun& a, const OverfitRun& b, const TempDir& da, const Pipeline& pa,
                   const TempDir& db, const Pipeline& pb) {
    std::vector<std::string> differing;
    auto check = [&](bool same, const std::string& what) {
        if (!same) differing.push_back(what);
    };
    check(same_params(a.result.params, b.result.params), "overfit parameters");
    check(without_wall_time(a.result.report.to_json()) == without_wall_time(b.result.report.to_json()),
          "overfit report");
    if (!pa.ok || !pb.ok) return {false, "pipeline failed: " + pa.failure + pb.failure};
    auto bytes = [](const TempDir& d, const char* f) { return read_bytes(d / f); };
    for (const char* f : {"scene.f32", "annotations.geojson", "chips/index.json", "chips/normalization.json",
                          "model.json", "model.f32", "probability.f32", "detections.geojson", "ablation.json",
                          "ablation.txt"}) {
        check(bytes(da, f) == bytes(db, f), f);
    }
    check(without_wall_time(json::parse(read_text(da / "train_report.json"))) ==
              without_wall_time(json::parse(read_text(db / "train_report.json"))),
          "train report");
    check(pa.evaluate == pb.evaluate, "evaluate metrics");
    const std::string detail = "threads=" + std::to_string(thread_count()) +
                               "; compared overfit params/report, scene, catalog, checkpoint, report, "
                               "probability map, GeoJSON, ablation table";
    if (differing.empty()) return {true, detail + ": all identical"};
    std::string list;
    for (const auto& d : differing) list += (list.empty() ? "" : ", ") + d;
    return {false, detail + ": differ in " + list};
}

// --- 7: post-processing ---------------------------------------------------------

Result postprocessing() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    int mask_bad = 0, area_bad = 0, filter_bad = 0, instances = 0;
    for (int trial = 0; trial < 120; ++trial, ++instances) {
        const int w = 4 + static_cast<int>(rng() % 40), h = 4 + static_cast<int>(rng() % 40);
        Raster prob(w, h, 1, {500000.0, 4000000.0, 10.0, 10.0}, std::numeric_limits<float>::quiet_NaN(),
                    {"probability"});
        for (auto& v : prob.samples) v = u(rng) < 0.02f ? std::numeric_limits<float>::quiet_NaN() : u(rng);
        const PostprocConfig pc{0.2 + 0.6 * u(rng), 100.0 * static_cast<double>(rng() % 4), trial % 2 ? 4 : 8};
        const auto res = postprocess(prob, pc);
        std::vector<PolygonAnnotation> parts;
        for (const auto& d : res.all) {
            parts.insert(parts.end(), d.parts.begin(), d.parts.end());
            area_bad += d.area != static_cast<double>(d.pixel_count) * 100.0;
        }
        mask_bad += !(rasterize_mask(parts, prob.transform, w, h) == res.binary);
        std::size_t expected_kept = 0;
        for (const auto& d : res.all) expected_kept += d.area >= pc.min_area;
        filter_bad += expected_kept != res.kept.size();
        for (const auto& d : res.kept) filter_bad += d.area < pc.min_area;
    }
    auto single = [](double pixel) {
        Mask m(3, 3);
        m.at(1, 1) = 1;
        return polygonize(connected_components(m), {0.0, 0.0, pixel, pixel});
    };
    const PostprocConfig rule;
    const bool ten_kept = filter_detections(single(10.0), rule).size() == 1;
    const bool fifty_removed = filter_detections(single(std::sqrt(50.0)), rule).empty();
    const bool just_below_removed = filter_detections(single(9.999), rule).empty();
    const double secs = since(t0);
    const bool pass = mask_bad == 0 && area_bad == 0 && filter_bad == 0 && ten_kept && fifty_removed &&
                      just_below_removed;
    return {pass, std::to_string(instances) + " random maps: mask mismatches " + std::to_string(mask_bad) +
                      ", area mismatches " + std::to_string(area_bad) + ", filter errors " +
                      std::to_string(filter_bad) + "; 10 m pixel kept=" + (ten_kept ? "yes" : "no") +
                      ", 50 m^2 removed=" + (fifty_removed ? "yes" : "no") + ", " + fmt(secs, 3) + " s"};
}

// --- 8: formats -----------------------------------------------------------------

Result round_trips() {
    const auto t0 = Clock::now();
    TempDir dir;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(-100.0f, 100.0f);
    int raster_bad = 0, ckpt_bad = 0, catalog_bad = 0, geojson_bad = 0;

    for (int trial = 0; trial < 20; ++trial) {
        const int bands = 1 + static_cast<int>(rng() % 4);
        std::vector<std::string> names;
        for (int b = 0; b < bands; ++b) names.push_back("b" + std::to_string(b));
        Raster r(1 + static_cast<int>(rng() % 30), 1 + static_cast<int>(rng() % 30), bands,
                 {u(rng) * 1000.0, u(rng) * 1000.0, 0.5 + rng() % 20, 0.5 + rng() % 20},
                 trial % 2 ? std::optional<float>(-9999.0f) : std::nullopt, names);
        for (auto& v : r.samples) v = u(rng);
        if (trial % 3 == 0) r.samples[0] = std::numeric_limits<float>::quiet_NaN();
        write_raster(r, dir / "r.json");
        const Raster back = read_raster(dir / "r.json");
        raster_bad += !bitwise_equal(r, back) || back.band_names != r.band_names || back.nodata != r.nodata;
    }
    for (int trial = 0; trial < 10; ++trial) {
        Checkpoint c;
        c.config = {1 + static_cast<int>(rng() % 6), 1 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 4)};
        c.parameters = build_unet<float>(c.config, rng());
        c.normalization.band_names.assign(static_cast<std::size_t>(c.config.in_channels), "x");
        c.normalization.mean.assign(c.normalization.band_names.size(), u(rng));
        c.normalization.stddev.assign(c.normalization.band_names.size(), 1.0 + std::fabs(u(rng)));
        c.training_metadata = {{"trial", trial}};
        save_checkpoint(c, dir / "m.json");
        const Checkpoint back = load_checkpoint(dir / "m.json");
        ckpt_bad += !(back.config == c.config) || !same_params(back.parameters, c.parameters) ||
                    back.normalization.mean != c.normalization.mean ||
                    back.normalization.stddev != c.normalization.stddev ||
                    back.training_metadata != c.training_metadata;
    }
    for (int trial = 0; trial < 5; ++trial) {
        SynthConfig sc;
        sc.scene_size = 96;
        sc.dump_count = 3;
        sc.dump_radius_min = 3.0;
        sc.dump_radius_max = 6.0;
        sc.background_texture_seed = rng();
        const auto scene = generate_synthetic(sc);
        const Raster stacked = stack_bands(scene.raster, BandSpec::default_six());
        const Mask mask = rasterize_mask(scene.annotations, stacked.transform, 96, 96);
        auto chips = extract_chips(stacked, mask, {32, 16, 1.0, rng()}, "scene" + std::to_string(trial));
        const DatasetSplit split = split_dataset(chips, 0.2, 0.2, rng());
        const fs::path cat = dir / ("cat" + std::to_string(trial));
        write_chip_catalog(cat, split);
        const DatasetSplit back = read_chip_catalog(cat);
        auto same = [](const std::vector<Chip>& a, const std::vector<Chip>& b) {
            if (a.size() != b.size()) return false;
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i].band_names != b[i].band_names || !(a[i].mask == b[i].mask) || !(a[i].origin == b[i].origin) ||
                    a[i].scene_id != b[i].scene_id || !(a[i].transform == b[i].transform) ||
                    a[i].samples.size() != b[i].samples.size() ||
                    std::memcmp(a[i].samples.data(), b[i].samples.data(), a[i].samples.size() * sizeof(float)) != 0) {
                    return false;
                }
            }
            return true;
        };
        catalog_bad += !same(split.train, back.train) || !same(split.val, back.val) || !same(split.test, back.test) ||
                       back.seed != split.seed;
    }
    for (int trial = 0; trial < 20; ++trial) {
        const GeoTransform t{300000.0 + u(rng), 6170000.0 + u(rng), 10.0, 10.0};
        std::vector<PolygonAnnotation> polys;
        for (std::size_t n = 1 + rng() % 4; n > 0; --n) polys.push_back(oracle::random_polygon(rng, t, 40, 40));
        write_annotations(polys, dir / "a.geojson");
        const auto back = read_annotations(dir / "a.geojson");
        bool ok = back.polygons.size() == polys.size();
        for (std::size_t i = 0; ok && i < polys.size(); ++i) {
            ok = back.polygons[i].exterior == polys[i].exterior && back.polygons[i].holes == polys[i].holes;
        }
        Mask m = oracle::random_mask(rng, 20, 20, 0.45);
        const auto dets = polygonize(connected_components(m), t);
        export_geojson(dets, dir / "d.geojson");
        const auto dback = read_detections(dir / "d.geojson");
        ok = ok && dback.size() == dets.size();
        for (std::size_t i = 0; ok && i < dets.size(); ++i) {
            ok = dback[i].area == dets[i].area && dback[i].pixel_count == dets[i].pixel_count &&
                 dback[i].parts.size() == dets[i].parts.size();
            for (std::size_t p = 0; ok && p < dets[i].parts.size(); ++p) {
                ok = dback[i].parts[p].exterior == dets[i].parts[p].exterior &&
                     dback[i].parts[p].holes == dets[i].parts[p].holes;
            }
        }
        geojson_bad += !ok;
    }
    const double secs = since(t0);
    return {raster_bad + ckpt_bad + catalog_bad + geojson_bad == 0,
            "mismatches raster " + std::to_string(raster_bad) + "/20, checkpoint " + std::to_string(ckpt_bad) +
                "/10, catalog " + std::to_string(catalog_bad) + "/5, GeoJSON " + std::to_string(geojson_bad) +
                "/20, " + fmt(secs, 3) + " s"};
}

}  // namespace
}  // namespace dumpwatch

int main() {
    using namespace dumpwatch;
    set_thread_count(1);
    int failures = 0;
    auto report = [&](const char* id, const char* name, const Result& r) {
        std::cout << id << " " << (r.pass ? "PASS" : "FAIL") << "  " << name << ": " << r.detail << std::endl;
        failures += !r.pass;
    };
    auto guarded = [](const std::function<Result()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return Result{false, std::string("exception: ") + e.what()};
        }
    };

    report("AC1", "gradient suite", guarded(gradient_suite));
    report("AC2", "oracle suite", guarded(oracle_suite));

    OverfitRun first, second;
    report("AC3", "overfit sanity", guarded([&] {
               first = overfit_run();
               return overfit(first);
           }));

    testing::TempDir dir_a, dir_b;
    Pipeline pa, pb;
    report("AC4", "end-to-end synthetic run", guarded([&] {
               pa = run_pipeline(dir_a);
               return end_to_end(pa);
           }));
    report("AC5", "band ablation", guarded([&] { return ablation(pa); }));

    report("AC6", "determinism", guarded([&] {
               second = overfit_run();
               pb = run_pipeline(dir_b);
               return determinism(first, second, dir_a, pa, dir_b, pb);
           }));
    report("AC7", "post-processing exactness", guarded(postprocessing));
    report("AC8", "format round trips", guarded(round_trips));

    std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
