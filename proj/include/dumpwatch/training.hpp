#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dumpwatch/dataset.hpp"
#include "dumpwatch/unet.hpp"

namespace dumpwatch {

struct Hyperparams {
    int batch_size = 16;
    int max_epochs = 30;
    double learning_rate = 1e-3;
    std::optional<double> pos_weight;  ///< empty means auto_pos_weight over the train split
    int plateau_patience = 5;
    double plateau_min_delta = 1e-4;
    double threshold = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Metrics {
    double loss = 0.0;
    double mean_iou = 0.0;
    std::vector<double> per_chip_loss;
    std::vector<double> per_chip_iou;

    nlohmann::json to_json() const;
};

struct EpochRecord {
    int epoch = 0;  ///< 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mean_iou = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int stopping_epoch = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double pos_weight = 1.0;
    bool stopped_early = false;
    double wall_time_s = 0.0;
    std::optional<Metrics> test;

    nlohmann::json to_json() const;
    /// Aligned plain-text epoch table.
    std::string to_table() const;
};

/// |a and b| / |a or b|; 1.0 when both are empty.
double iou(const Mask& pred, const Mask& target);

/// Negative over positive pixel count of the chips, clamped to [1, 100].
double auto_pos_weight(std::span<const Chip> chips);

/**
 * Early stopping on a monitored loss. An epoch counts as an improvement when
 * it beats the best loss seen so far by more than min_delta; training stops
 * once `patience` consecutive epochs fail to improve.
 */
class PlateauTracker {
public:
    PlateauTracker(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

    /// Records one epoch; true when training should stop.
    bool update(double loss);
    int stale_epochs() const { return stale_; }

private:
    int patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_ = 0;
};

/// Reflection into [0, n) without repeating the edge sample (period 2n - 2).
long reflect_index(long i, long n);

/// Side length after padding up to a multiple of the divisor.
int padded_size(int size, int divisor);

/**
 * Stacks chips into [B, C, P, P] with P the padded side, mirroring the chip
 * content into the border. The chip occupies rows and columns
 * [offset, offset + size).
 */
Tensor make_batch(std::span<const Chip* const> chips, int divisor, int* offset = nullptr);
/// [B, 1, size, size] masks as 0/1 floats.
Tensor make_targets(std::span<const Chip* const> chips);

struct TrainCallbacks {
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    ParameterSet params;  ///< parameters of the epoch with the lowest validation loss
    TrainReport report;
};

/**
 * Minibatch Adam on weighted BCE. Chips must already be normalized. The
 * train order is reshuffled every epoch from the "shuffle" substream of
 * hyper.seed; the last partial batch is kept.
 */
TrainResult train(const ParameterSet& initial, const UNetConfig& config, const DatasetSplit& split,
                  const Hyperparams& hyper, const TrainCallbacks& callbacks = {});

/// Per-chip loss and IoU at the threshold. Chips must already be normalized.
Metrics evaluate(const ParameterSet& params, const UNetConfig& config, std::span<const Chip> chips,
                 double threshold = 0.5, double pos_weight = 1.0, int batch_size = 16);

/// Probability maps [size x size] per chip, same order.
std::vector<std::vector<float>> predict_chips(const ParameterSet& params, const UNetConfig& config,
                                              std::span<const Chip> chips, int batch_size = 16);

struct AblationRow {
    std::string label;
    std::vector<std::string> bands;
    double loss = 0.0;      ///< test loss averaged over seeds
    double mean_iou = 0.0;  ///< test mean IoU averaged over seeds
    std::vector<std::uint64_t> seeds;
    std::vector<double> seed_loss;
    std::vector<double> seed_iou;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    nlohmann::json to_json() const;
    std::string to_table() const;
};

/// The four input stacks compared by the band ablation, in table order.
std::vector<BandSpec> ablation_specs();

/**
 * Trains one model per band stack and seed on the same split (chips carry
 * every band the stacks need, unnormalized) and reports test metrics. The
 * model config's in_channels is replaced per stack.
 */
AblationTable ablate(const DatasetSplit& split, std::span<const BandSpec> specs, const UNetConfig& model,
                     const Hyperparams& hyper, std::span<const std::uint64_t> seeds,
                     const std::function<void(const std::string&)>& log = {});

}  // namespace dumpwatch
