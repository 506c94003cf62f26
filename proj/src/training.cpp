#include "dumpwatch/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "dumpwatch/ops.hpp"
#include "dumpwatch/optim.hpp"
#include "dumpwatch/parallel.hpp"
#include "dumpwatch/random.hpp"

namespace dumpwatch {

using nlohmann::json;

void Hyperparams::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("train.max_epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be positive");
    if (pos_weight && !(*pos_weight > 0.0)) throw std::invalid_argument("train.pos_weight must be positive");
    if (plateau_patience < 1) throw std::invalid_argument("train.plateau_patience must be >= 1");
    if (!(plateau_min_delta >= 0.0)) throw std::invalid_argument("train.plateau_min_delta must be >= 0");
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must be in (0, 1)");
}

double iou(const Mask& pred, const Mask& target) {
    if (pred.width != target.width || pred.height != target.height) {
        throw std::invalid_argument("iou: shape mismatch");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, t = target.data[i] != 0;
        inter += p && t;
        uni += p || t;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double auto_pos_weight(std::span<const Chip> chips) {
    std::size_t pos = 0, total = 0;
    for (const auto& c : chips) {
        pos += c.mask.count();
        total += c.mask.data.size();
    }
    if (pos == 0) throw std::invalid_argument("auto_pos_weight: training split has no positive pixels");
    if (pos == total) throw std::invalid_argument("auto_pos_weight: training split has no negative pixels");
    const double ratio = static_cast<double>(total - pos) / static_cast<double>(pos);
    return std::clamp(ratio, 1.0, 100.0);
}

bool PlateauTracker::update(double loss) {
    if (loss < best_ - min_delta_) {
        best_ = loss;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= patience_;
}

long reflect_index(long i, long n) {
    if (n <= 1) return 0;
    const long period = 2 * n - 2;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

int padded_size(int size, int divisor) { return (size + divisor - 1) / divisor * divisor; }

Tensor make_batch(std::span<const Chip* const> chips, int divisor, int* offset) {
    if (chips.empty()) throw std::invalid_argument("make_batch: no chips");
    const int size = chips.front()->size;
    const int bands = chips.front()->band_count();
    const int padded = padded_size(size, divisor);
    const int off = (padded - size) / 2;
    if (offset) *offset = off;
    const auto p = static_cast<std::size_t>(padded);
    Tensor batch({chips.size(), static_cast<std::size_t>(bands), p, p});
    auto out = batch.values();
    for (std::size_t b = 0; b < chips.size(); ++b) {
        const Chip& chip = *chips[b];
        if (chip.size != size || chip.band_count() != bands) {
            throw std::invalid_argument("make_batch: chips differ in size or band count");
        }
        for (int c = 0; c < bands; ++c) {
            const float* src = chip.samples.data() + static_cast<std::size_t>(c) * size * size;
            float* dst = out.data() + (b * bands + c) * p * p;
            for (int r = 0; r < padded; ++r) {
                const long sr = reflect_index(r - off, size);
                for (int q = 0; q < padded; ++q) {
                    dst[static_cast<std::size_t>(r) * p + q] = src[sr * size + reflect_index(q - off, size)];
                }
            }
        }
    }
    return batch;
}

Tensor make_targets(std::span<const Chip* const> chips) {
    const auto s = static_cast<std::size_t>(chips.front()->size);
    Tensor t({chips.size(), 1, s, s});
    for (std::size_t b = 0; b < chips.size(); ++b) {
        const auto& m = chips[b]->mask.data;
        std::transform(m.begin(), m.end(), t.values().begin() + static_cast<long>(b * s * s),
                       [](std::uint8_t v) { return v ? 1.0f : 0.0f; });
    }
    return t;
}

namespace {

// Forward pass on a batch of chips; returns logits cropped back to chip size.
Tensor chip_logits(Graph<float>& g, const ParameterSet& params, const UNetConfig& config,
                   std::span<const Chip* const> chips) {
    int offset = 0;
    Tensor batch = make_batch(chips, config.divisor(), &offset);
    Tensor logits = unet_forward(g, params, config, batch);
    const auto size = static_cast<std::size_t>(chips.front()->size);
    if (batch.dim(2) == size) return logits;
    const auto o = static_cast<std::size_t>(offset);
    return crop2d(g, logits, o, o, size, size);
}

std::vector<const Chip*> pointers(std::span<const Chip> chips) {
    std::vector<const Chip*> out;
    out.reserve(chips.size());
    for (const auto& c : chips) out.push_back(&c);
    return out;
}

void check_chips(std::span<const Chip> chips, const UNetConfig& config, const char* what) {
    for (const auto& c : chips) {
        if (c.band_count() != config.in_channels) {
            throw std::invalid_argument(std::string(what) + ": chip has " + std::to_string(c.band_count()) +
                                        " bands, model expects " + std::to_string(config.in_channels));
        }
    }
}

}  // namespace

Metrics evaluate(const ParameterSet& params, const UNetConfig& config, std::span<const Chip> chips,
                 double threshold, double pos_weight, int batch_size) {
    if (chips.empty()) throw std::invalid_argument("evaluate: empty chip list");
    check_chips(chips, config, "evaluate");
    const auto all = pointers(chips);
    Metrics m;
    m.per_chip_loss.resize(chips.size());
    m.per_chip_iou.resize(chips.size());
    for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min(all.size() - start, static_cast<std::size_t>(batch_size));
        std::span<const Chip* const> batch(all.data() + start, n);
        Graph<float> g(Graph<float>::Mode::kInference);
        const Tensor logits = chip_logits(g, params, config, batch);
        const std::size_t plane = logits.numel() / n;
        parallel_for(n, [&](std::size_t b) {
            const Chip& chip = *batch[b];
            Mask pred(chip.size, chip.size);
            double loss = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                const double z = logits[b * plane + i];
                const bool y = chip.mask.data[i] != 0;
                loss += y ? pos_weight * softplus(-z) : softplus(z);
                pred.data[i] = stable_sigmoid(z) >= threshold;
            }
            m.per_chip_loss[start + b] = loss / static_cast<double>(plane);
            m.per_chip_iou[start + b] = iou(pred, chip.mask);
        });
    }
    double loss_sum = 0.0, iou_sum = 0.0;
    for (std::size_t i = 0; i < chips.size(); ++i) {
        loss_sum += m.per_chip_loss[i];
        iou_sum += m.per_chip_iou[i];
    }
    m.loss = loss_sum / static_cast<double>(chips.size());
    m.mean_iou = iou_sum / static_cast<double>(chips.size());
    return m;
}

std::vector<std::vector<float>> predict_chips(const ParameterSet& params, const UNetConfig& config,
                                              std::span<const Chip> chips, int batch_size) {
    check_chips(chips, config, "predict_chips");
    const auto all = pointers(chips);
    std::vector<std::vector<float>> out;
    for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min(all.size() - start, static_cast<std::size_t>(batch_size));
        Graph<float> g(Graph<float>::Mode::kInference);
        const Tensor logits = chip_logits(g, params, config, std::span(all.data() + start, n));
        const std::size_t plane = logits.numel() / n;
        for (std::size_t b = 0; b < n; ++b) {
            std::vector<float> p(plane);
            for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<float>(stable_sigmoid(logits[b * plane + i]));
            out.push_back(std::move(p));
        }
    }
    return out;
}

TrainResult train(const ParameterSet& initial, const UNetConfig& config, const DatasetSplit& split,
                  const Hyperparams& hyper, const TrainCallbacks& callbacks) {
    hyper.validate();
    config.validate();
    if (split.train.empty()) throw std::invalid_argument("train: empty training split");
    if (split.val.empty()) throw std::invalid_argument("train: empty validation split");
    check_chips(split.train, config, "train");
    check_chips(split.val, config, "train");
    const auto started = std::chrono::steady_clock::now();

    TrainResult result{initial.clone(), {}};
    ParameterSet& params = result.params;
    auto tensors = params.tensors();
    TrainReport& report = result.report;
    report.pos_weight = hyper.pos_weight ? *hyper.pos_weight : auto_pos_weight(split.train);

    AdamState<float> adam;
    adam.learning_rate = hyper.learning_rate;
    Rng shuffle_rng(derive_seed(hyper.seed, "shuffle"));
    PlateauTracker plateau(hyper.plateau_patience, hyper.plateau_min_delta);
    ParameterSet best = params.clone();
    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(hyper.batch_size));
            std::vector<const Chip*> batch(n);
            for (std::size_t b = 0; b < n; ++b) batch[b] = &split.train[order[start + b]];
            zero_grads(std::span(tensors));
            Graph<float> g;
            const Tensor logits = chip_logits(g, params, config, batch);
            const Tensor loss = weighted_bce_with_logits(g, logits, make_targets(batch), report.pos_weight);
            if (!std::isfinite(loss.item())) {
                throw std::runtime_error("train: loss diverged (" + std::to_string(loss.item()) + ") in epoch " +
                                         std::to_string(epoch));
            }
            backward(g, loss);
            adam_step(std::span(tensors), adam);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
        }

        const Metrics val = evaluate(params, config, split.val, hyper.threshold, report.pos_weight, hyper.batch_size);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), val.loss, val.mean_iou};
        report.epochs.push_back(rec);
        if (!std::isfinite(rec.val_loss)) throw std::runtime_error("train: validation loss is not finite");
        if (report.best_epoch == 0 || rec.val_loss < report.best_val_loss) {
            report.best_epoch = epoch;
            report.best_val_loss = rec.val_loss;
            best = params.clone();
        }
        if (callbacks.on_epoch) callbacks.on_epoch(rec);
        report.stopping_epoch = epoch;
        if (plateau.update(rec.val_loss)) {
            report.stopped_early = epoch < hyper.max_epochs;
            break;
        }
    }

    result.params = std::move(best);
    if (!split.test.empty()) {
        check_chips(split.test, config, "train");
        report.test = evaluate(result.params, config, split.test, hyper.threshold, report.pos_weight, hyper.batch_size);
    }
    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

json Metrics::to_json() const {
    return {{"loss", loss}, {"mean_iou", mean_iou}, {"per_chip_loss", per_chip_loss}, {"per_chip_iou", per_chip_iou}};
}

json TrainReport::to_json() const {
    json epochs_json = json::array();
    for (const auto& e : epochs) {
        epochs_json.push_back(
            {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_mean_iou", e.val_mean_iou}});
    }
    json out = {{"epochs", epochs_json},
                {"stopping_epoch", stopping_epoch},
                {"best_epoch", best_epoch},
                {"best_val_loss", best_val_loss},
                {"pos_weight", pos_weight},
                {"stopped_early", stopped_early},
                {"wall_time_s", wall_time_s}};
    out["test"] = test ? test->to_json() : json(nullptr);
    return out;
}

std::string TrainReport::to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(7) << "epoch" << std::right << std::setw(12) << "train_loss" << std::setw(12)
       << "val_loss" << std::setw(14) << "val_mean_iou" << '\n';
    os << std::fixed << std::setprecision(4);
    for (const auto& e : epochs) {
        os << std::left << std::setw(7) << e.epoch << std::right << std::setw(12) << e.train_loss << std::setw(12)
           << e.val_loss << std::setw(14) << e.val_mean_iou << (e.epoch == best_epoch ? "  *" : "") << '\n';
    }
    if (test) os << "test loss " << test->loss << ", test mean IoU " << test->mean_iou << '\n';
    return os.str();
}

std::vector<BandSpec> ablation_specs() {
    return {BandSpec::parse("R,G,B"), BandSpec::parse("R,G,B,NIR"), BandSpec::parse("R,G,B,NIR,SWIR1"),
            BandSpec::default_six()};
}

AblationTable ablate(const DatasetSplit& split, std::span<const BandSpec> specs, const UNetConfig& model,
                     const Hyperparams& hyper, std::span<const std::uint64_t> seeds,
                     const std::function<void(const std::string&)>& log) {
    if (specs.empty()) throw std::invalid_argument("ablate: no band stacks");
    if (seeds.empty()) throw std::invalid_argument("ablate: no seeds");
    if (split.test.empty()) throw std::invalid_argument("ablate: empty test split");
    AblationTable table;
    for (const auto& spec : specs) {
        const auto names = spec.names();
        auto project = [&](const std::vector<Chip>& chips) {
            std::vector<Chip> out;
            out.reserve(chips.size());
            for (const auto& c : chips) out.push_back(select_bands(c, names));
            return out;
        };
        DatasetSplit sub{project(split.train), project(split.val), project(split.test), split.seed};
        const auto stats = fit_normalization(sub.train);
        sub.train = apply_normalization(std::move(sub.train), stats);
        sub.val = apply_normalization(std::move(sub.val), stats);
        sub.test = apply_normalization(std::move(sub.test), stats);

        UNetConfig cfg = model;
        cfg.in_channels = static_cast<int>(names.size());
        AblationRow row{spec.label(), names, 0.0, 0.0, {}, {}, {}};
        for (std::uint64_t seed : seeds) {
            Hyperparams h = hyper;
            h.seed = seed;
            auto result = train(build_unet<float>(cfg, derive_seed(seed, "init")), cfg, sub, h);
            row.seeds.push_back(seed);
            row.seed_loss.push_back(result.report.test->loss);
            row.seed_iou.push_back(result.report.test->mean_iou);
            if (log) {
                std::ostringstream msg;
                msg << row.label << " seed " << seed << ": test loss " << result.report.test->loss << ", mean IoU "
                    << result.report.test->mean_iou << " (" << result.report.stopping_epoch << " epochs)";
                log(msg.str());
            }
        }
        for (std::size_t i = 0; i < row.seeds.size(); ++i) {
            row.loss += row.seed_loss[i];
            row.mean_iou += row.seed_iou[i];
        }
        row.loss /= static_cast<double>(row.seeds.size());
        row.mean_iou /= static_cast<double>(row.seeds.size());
        table.rows.push_back(std::move(row));
    }
    return table;
}

json AblationTable::to_json() const {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"label", r.label},
                       {"bands", r.bands},
                       {"loss", r.loss},
                       {"iou", r.mean_iou},
                       {"seeds", r.seeds},
                       {"seed_loss", r.seed_loss},
                       {"seed_iou", r.seed_iou}});
    }
    return {{"rows", out}};
}

std::string AblationTable::to_table() const {
    std::size_t width = 8;
    for (const auto& r : rows) width = std::max(width, r.label.size() + 2);
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "Approach" << std::right << std::setw(10) << "Loss"
       << std::setw(10) << "IoU" << '\n';
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.label << std::right << std::setw(10) << r.loss
           << std::setw(10) << r.mean_iou << '\n';
    }
    return os.str();
}

}  // namespace dumpwatch
