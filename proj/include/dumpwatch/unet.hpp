#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dumpwatch/dataset.hpp"
#include "dumpwatch/tensor.hpp"

namespace dumpwatch {

struct UNetConfig {
    static constexpr int kKernelSize = 3;
    static constexpr int kOutChannels = 1;

    int in_channels = 6;
    int depth = 4;  ///< down-sampling stages, mirrored by as many up-sampling stages
    int base_filters = 16;

    void validate() const;
    /// Spatial sides must be multiples of this.
    int divisor() const { return 1 << depth; }
    bool operator==(const UNetConfig&) const = default;
};

struct ParameterSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in = 0;  ///< 0 for biases
};

/// Parameter names and shapes in construction order. A pure function of the
/// config.
std::vector<ParameterSpec> unet_schema(const UNetConfig& config);

/// Named tensors in insertion order.
template <typename T>
class BasicParameterSet {
public:
    void add(std::string name, BasicTensor<T> tensor);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    BasicTensor<T>& at(const std::string& name);
    const BasicTensor<T>& at(const std::string& name) const;

    const std::vector<std::pair<std::string, BasicTensor<T>>>& entries() const { return entries_; }
    /// Handles sharing storage with the set, in insertion order.
    std::vector<BasicTensor<T>> tensors() const;
    std::size_t size() const { return entries_.size(); }
    std::size_t parameter_count() const;

    /// Deep copy with independent storage.
    BasicParameterSet clone() const;

private:
    std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

using ParameterSet = BasicParameterSet<float>;

/// Fan-in scaled normal weights (std = sqrt(2 / fan_in)), zero biases.
template <typename T>
BasicParameterSet<T> build_unet(const UNetConfig& config, std::uint64_t seed);

/**
 * Encoder: per stage two 3x3 conv + ReLU then 2x2 max-pool. Bottleneck: two
 * 3x3 conv + ReLU. Decoder: 2x2 transposed conv, concatenation with the
 * matching encoder activation, two 3x3 conv + ReLU. Head: 3x3 conv to one
 * logit channel. Returns logits [B, 1, H, W].
 */
template <typename T>
BasicTensor<T> unet_forward(Graph<T>& graph, const BasicParameterSet<T>& params, const UNetConfig& config,
                            const BasicTensor<T>& batch);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    UNetConfig config;
    ParameterSet parameters;
    NormalizationStats normalization;  ///< band names double as the model's input contract
    int format_version = kCheckpointVersion;
    nlohmann::json training_metadata = nlohmann::json::object();
};

// Checkpoint layout: JSON manifest at `path` (config, parameter schema with
// element offsets, normalization, metadata) and a raw little-endian float32
// payload holding the parameters back to back in manifest order.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dumpwatch
