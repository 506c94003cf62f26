#include "dumpwatch/unet.hpp"

#include <cmath>
#include <stdexcept>

#include "dumpwatch/ops.hpp"
#include "dumpwatch/random.hpp"

namespace dumpwatch {

namespace fs = std::filesystem;
using nlohmann::json;

void UNetConfig::validate() const {
    if (in_channels < 1) throw std::invalid_argument("model.in_channels must be >= 1");
    if (depth < 1 || depth > 8) throw std::invalid_argument("model.depth must be in [1, 8]");
    if (base_filters < 1) throw std::invalid_argument("model.base_filters must be >= 1");
}

std::vector<ParameterSpec> unet_schema(const UNetConfig& config) {
    config.validate();
    const std::size_t k = UNetConfig::kKernelSize;
    std::vector<ParameterSpec> schema;
    auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout) {
        schema.push_back({prefix + ".weight", {cout, cin, k, k}, cin * k * k});
        schema.push_back({prefix + ".bias", {cout}, 0});
    };
    const auto width = [&](int level) { return static_cast<std::size_t>(config.base_filters) << level; };

    std::size_t channels = static_cast<std::size_t>(config.in_channels);
    for (int i = 0; i < config.depth; ++i) {
        const std::string stage = "enc" + std::to_string(i);
        conv(stage + ".conv1", channels, width(i));
        conv(stage + ".conv2", width(i), width(i));
        channels = width(i);
    }
    conv("bottleneck.conv1", channels, width(config.depth));
    conv("bottleneck.conv2", width(config.depth), width(config.depth));
    for (int i = config.depth - 1; i >= 0; --i) {
        const std::string stage = "dec" + std::to_string(i);
        // A 2x2 stride-2 transposed conv feeds each output pixel from one
        // kernel tap per input channel.
        schema.push_back({stage + ".up.weight", {width(i + 1), width(i), 2, 2}, width(i + 1)});
        schema.push_back({stage + ".up.bias", {width(i)}, 0});
        conv(stage + ".conv1", 2 * width(i), width(i));
        conv(stage + ".conv2", width(i), width(i));
    }
    conv("head", width(0), UNetConfig::kOutChannels);
    return schema;
}

template <typename T>
void BasicParameterSet<T>::add(std::string name, BasicTensor<T> tensor) {
    if (contains(name)) throw std::invalid_argument("parameter set: duplicate name " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
BasicTensor<T>& BasicParameterSet<T>::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("parameter set: no parameter " + name);
    return entries_[it->second].second;
}

template <typename T>
const BasicTensor<T>& BasicParameterSet<T>::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("parameter set: no parameter " + name);
    return entries_[it->second].second;
}

template <typename T>
std::vector<BasicTensor<T>> BasicParameterSet<T>::tensors() const {
    std::vector<BasicTensor<T>> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.push_back(t);
    return out;
}

template <typename T>
std::size_t BasicParameterSet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

template <typename T>
BasicParameterSet<T> BasicParameterSet<T>::clone() const {
    BasicParameterSet out;
    for (const auto& [name, t] : entries_) {
        auto copy = t.clone();
        copy.clear_grad();
        out.add(name, copy);
    }
    return out;
}

template <typename T>
BasicParameterSet<T> build_unet(const UNetConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    BasicParameterSet<T> params;
    for (const auto& spec : unet_schema(config)) {
        BasicTensor<T> t(spec.shape, T(0), true);
        if (spec.fan_in > 0) {
            const double scale = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
            for (auto& v : t.values()) v = static_cast<T>(scale * gauss(rng));
        }
        params.add(spec.name, t);
    }
    return params;
}

template <typename T>
BasicTensor<T> unet_forward(Graph<T>& g, const BasicParameterSet<T>& p, const UNetConfig& config,
                            const BasicTensor<T>& batch) {
    if (batch.rank() != 4) throw std::invalid_argument("unet: input must be [B, C, H, W]");
    if (batch.dim(1) != static_cast<std::size_t>(config.in_channels)) {
        throw std::invalid_argument("unet: input has " + std::to_string(batch.dim(1)) +
                                    " channels, model expects " + std::to_string(config.in_channels));
    }
    const auto div = static_cast<std::size_t>(config.divisor());
    if (batch.dim(2) % div != 0 || batch.dim(3) % div != 0) {
        throw std::invalid_argument("unet: spatial size " + std::to_string(batch.dim(2)) + "x" +
                                    std::to_string(batch.dim(3)) + " not divisible by " + std::to_string(div));
    }
    auto conv_relu = [&](const BasicTensor<T>& x, const std::string& prefix) {
        return relu(g, conv2d(g, x, p.at(prefix + ".weight"), p.at(prefix + ".bias")));
    };

    std::vector<BasicTensor<T>> skips;
    BasicTensor<T> x = batch;
    for (int i = 0; i < config.depth; ++i) {
        const std::string stage = "enc" + std::to_string(i);
        x = conv_relu(conv_relu(x, stage + ".conv1"), stage + ".conv2");
        skips.push_back(x);
        x = max_pool_2x2(g, x);
    }
    x = conv_relu(conv_relu(x, "bottleneck.conv1"), "bottleneck.conv2");
    for (int i = config.depth - 1; i >= 0; --i) {
        const std::string stage = "dec" + std::to_string(i);
        x = transposed_conv_2x2(g, x, p.at(stage + ".up.weight"), p.at(stage + ".up.bias"));
        x = concat_channels(g, x, skips[static_cast<std::size_t>(i)]);
        x = conv_relu(conv_relu(x, stage + ".conv1"), stage + ".conv2");
    }
    return conv2d(g, x, p.at("head.weight"), p.at("head.bias"));
}

// ---------------------------------------------------------------------------
// checkpoints

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    ckpt.config.validate();
    const auto schema = unet_schema(ckpt.config);
    if (schema.size() != ckpt.parameters.size()) throw std::invalid_argument("save_checkpoint: schema mismatch");
    json entries = json::array();
    std::vector<std::byte> payload;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& [name, tensor] = ckpt.parameters.entries()[i];
        if (name != schema[i].name || tensor.shape() != schema[i].shape) {
            throw std::invalid_argument("save_checkpoint: schema mismatch at " + name);
        }
        entries.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
        append_f32_le(payload, tensor.values());
        offset += tensor.numel();
    }
    const fs::path payload_path = payload_path_for(path);
    json manifest = {
        {"format", "dumpwatch-checkpoint"},
        {"format_version", ckpt.format_version},
        {"config",
         {{"in_channels", ckpt.config.in_channels},
          {"depth", ckpt.config.depth},
          {"base_filters", ckpt.config.base_filters},
          {"kernel_size", UNetConfig::kKernelSize},
          {"out_channels", UNetConfig::kOutChannels}}},
        {"parameters", entries},
        {"normalization",
         {{"band_names", ckpt.normalization.band_names},
          {"mean", ckpt.normalization.mean},
          {"std", ckpt.normalization.stddev}}},
        {"training_metadata", ckpt.training_metadata},
        {"dtype", "float32"},
        {"byte_order", "little"},
        {"payload", payload_path.filename().string()},
        {"payload_bytes", payload.size()},
    };
    write_file_atomic(payload_path, payload);
    write_text_atomic(path, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw std::runtime_error("load_checkpoint: missing checkpoint " + path.string());
    Checkpoint ckpt;
    json manifest;
    try {
        manifest = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw std::runtime_error("load_checkpoint: corrupt manifest " + path.string() + ": " + e.what());
    }
    try {
        if (manifest.at("format").get<std::string>() != "dumpwatch-checkpoint") {
            throw std::runtime_error("load_checkpoint: not a checkpoint: " + path.string());
        }
        ckpt.format_version = manifest.at("format_version").get<int>();
        if (ckpt.format_version != kCheckpointVersion) {
            throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(ckpt.format_version));
        }
        const auto& c = manifest.at("config");
        ckpt.config = {c.at("in_channels").get<int>(), c.at("depth").get<int>(), c.at("base_filters").get<int>()};
        if (c.value("kernel_size", UNetConfig::kKernelSize) != UNetConfig::kKernelSize ||
            c.value("out_channels", UNetConfig::kOutChannels) != UNetConfig::kOutChannels) {
            throw std::runtime_error("load_checkpoint: schema mismatch (kernel or output size)");
        }
        const auto& n = manifest.at("normalization");
        ckpt.normalization = {n.at("band_names").get<std::vector<std::string>>(), n.at("mean").get<std::vector<double>>(),
                              n.at("std").get<std::vector<double>>()};
        ckpt.training_metadata = manifest.value("training_metadata", json::object());

        const auto schema = unet_schema(ckpt.config);
        const auto& entries = manifest.at("parameters");
        if (entries.size() != schema.size()) throw std::runtime_error("load_checkpoint: schema mismatch (parameter count)");
        std::size_t total = 0;
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const auto name = entries[i].at("name").get<std::string>();
            const auto shape = entries[i].at("shape").get<Shape>();
            if (name != schema[i].name || shape != schema[i].shape ||
                entries[i].at("offset").get<std::size_t>() != total) {
                throw std::runtime_error("load_checkpoint: schema mismatch at " + name + " " + shape_string(shape));
            }
            total += shape_numel(shape);
        }
        const auto bytes = read_bytes(path.parent_path() / manifest.at("payload").get<std::string>());
        if (bytes.size() != total * 4 || manifest.at("payload_bytes").get<std::size_t>() != bytes.size()) {
            throw std::runtime_error("load_checkpoint: corrupt payload (expected " + std::to_string(total * 4) +
                                     " bytes, found " + std::to_string(bytes.size()) + ")");
        }
        std::size_t offset = 0;
        for (const auto& spec : schema) {
            Tensor t(spec.shape, 0.0f, true);
            decode_f32_le(std::span(bytes).subspan(offset * 4, t.numel() * 4), t.values());
            offset += t.numel();
            ckpt.parameters.add(spec.name, t);
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: corrupt manifest " + path.string() + ": " + e.what());
    }
    return ckpt;
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;
template BasicParameterSet<float> build_unet(const UNetConfig&, std::uint64_t);
template BasicParameterSet<double> build_unet(const UNetConfig&, std::uint64_t);
template BasicTensor<float> unet_forward(Graph<float>&, const BasicParameterSet<float>&, const UNetConfig&,
                                         const BasicTensor<float>&);
template BasicTensor<double> unet_forward(Graph<double>&, const BasicParameterSet<double>&, const UNetConfig&,
                                          const BasicTensor<double>&);

}  // namespace dumpwatch
