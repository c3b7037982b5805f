#include "stgcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "stgcn/error.hpp"

namespace stgcn {

namespace {

using nlohmann::json;

void put_u32(std::ofstream& out, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(bytes, 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(bytes, 8);
}

void put_f64(std::ofstream& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw InputError(path + ": truncated checkpoint");
    }
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | bytes[i];
    }
    return v;
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
        throw InputError(path + ": truncated checkpoint");
    }
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | bytes[i];
    }
    return v;
}

double get_f64(std::ifstream& in, const std::string& path) {
    return std::bit_cast<double>(get_u64(in, path));
}

json config_to_json(const ModelConfig& config) {
    json blocks = json::array();
    for (const BlockChannels& bc : config.blocks) {
        blocks.push_back({bc.c_in, bc.c_mid, bc.c_out});
    }
    return json{{"variant", to_string(config.variant)},
                {"cheb_order", config.cheb_order},
                {"temporal_kernel", config.temporal_kernel},
                {"history", config.history},
                {"nodes", config.nodes},
                {"blocks", blocks},
                {"norm_eps", config.norm_eps}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig config;
    config.variant = graph_conv_variant_from_string(j.at("variant").get<std::string>());
    config.cheb_order = j.at("cheb_order").get<std::size_t>();
    config.temporal_kernel = j.at("temporal_kernel").get<std::size_t>();
    config.history = j.at("history").get<std::size_t>();
    config.nodes = j.at("nodes").get<std::size_t>();
    config.norm_eps = j.at("norm_eps").get<double>();
    config.blocks.clear();
    for (const json& row : j.at("blocks")) {
        if (row.size() != 3) {
            throw InputError("checkpoint: block channels must be triples");
        }
        config.blocks.push_back(
            {row[0].get<std::size_t>(), row[1].get<std::size_t>(), row[2].get<std::size_t>()});
    }
    return config;
}

} // namespace

Checkpoint checkpoint_from_model(const StgcnModel& model, const ZScoreStats& stats,
                                 std::vector<std::string> station_ids) {
    Checkpoint cp;
    cp.config = model.config();
    cp.stats = stats;
    cp.station_ids = std::move(station_ids);
    for (const NamedParam& p : model.parameters()) {
        cp.param_names.push_back(p.name);
        cp.param_shapes.push_back(p.tensor.shape());
        const auto v = p.tensor.values();
        cp.param_values.emplace_back(v.begin(), v.end());
    }
    return cp;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write checkpoint: " + path);
    }
    out.write("STGC", 4);
    put_u32(out, kCheckpointVersion);

    json descriptor{{"arch", config_to_json(checkpoint.config)},
                    {"zscore", {{"mean", checkpoint.stats.mean},
                                {"std", checkpoint.stats.std_dev}}},
                    {"stations", checkpoint.station_ids}};
    const std::string desc = descriptor.dump();
    put_u64(out, desc.size());
    out.write(desc.data(), static_cast<std::streamsize>(desc.size()));

    for (std::size_t i = 0; i < checkpoint.param_names.size(); ++i) {
        const std::string& name = checkpoint.param_names[i];
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& shape = checkpoint.param_shapes[i];
        put_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t extent : shape) {
            put_u64(out, extent);
        }
        for (double v : checkpoint.param_values[i]) {
            put_f64(out, v);
        }
    }
    if (!out) {
        throw InputError("write failed: " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open checkpoint: " + path);
    }
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "STGC", 4) != 0) {
        throw InputError(path + ": not a checkpoint (bad magic)");
    }
    const std::uint32_t version = get_u32(in, path);
    if (version != kCheckpointVersion) {
        throw InputError(path + ": unsupported checkpoint version " +
                         std::to_string(version));
    }
    const std::uint64_t desc_len = get_u64(in, path);
    std::string desc(desc_len, '\0');
    if (!in.read(desc.data(), static_cast<std::streamsize>(desc_len))) {
        throw InputError(path + ": truncated descriptor");
    }
    json descriptor;
    try {
        descriptor = json::parse(desc);
    } catch (const json::exception& e) {
        throw InputError(path + ": bad descriptor: " + e.what());
    }

    Checkpoint cp;
    cp.config = config_from_json(descriptor.at("arch"));
    cp.stats.mean = descriptor.at("zscore").at("mean").get<double>();
    cp.stats.std_dev = descriptor.at("zscore").at("std").get<double>();
    cp.station_ids = descriptor.at("stations").get<std::vector<std::string>>();

    while (in.peek() != std::ifstream::traits_type::eof()) {
        const std::uint32_t name_len = get_u32(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw InputError(path + ": truncated parameter name");
        }
        const std::uint32_t rank = get_u32(in, path);
        Shape shape(rank);
        std::size_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<std::size_t>(get_u64(in, path));
            count *= shape[r];
        }
        std::vector<double> values(count);
        for (double& v : values) {
            v = get_f64(in, path);
        }
        cp.param_names.push_back(std::move(name));
        cp.param_shapes.push_back(std::move(shape));
        cp.param_values.push_back(std::move(values));
    }
    return cp;
}

StgcnModel model_from_checkpoint(const Checkpoint& checkpoint,
                                 std::shared_ptr<const LaplacianBundle> bundle) {
    if (!bundle) {
        throw ContractError("model_from_checkpoint: null bundle");
    }
    if (bundle->n != checkpoint.config.nodes) {
        throw InputError("checkpoint was trained on " +
                         std::to_string(checkpoint.config.nodes) + " nodes, graph has " +
                         std::to_string(bundle->n));
    }
    StgcnModel model(checkpoint.config, std::move(bundle), /*seed=*/0);
    auto params = model.parameters();
    if (params.size() != checkpoint.param_names.size()) {
        throw InputError("checkpoint holds " + std::to_string(checkpoint.param_names.size()) +
                         " tensors, model wants " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != checkpoint.param_names[i]) {
            throw InputError("checkpoint parameter '" + checkpoint.param_names[i] +
                             "' does not match model parameter '" + params[i].name + "'");
        }
        if (params[i].tensor.shape() != checkpoint.param_shapes[i]) {
            throw InputError("checkpoint parameter '" + checkpoint.param_names[i] +
                             "' has shape " + shape_str(checkpoint.param_shapes[i]) +
                             ", model wants " + shape_str(params[i].tensor.shape()));
        }
        std::vector<double>& dst = params[i].tensor.raw_values();
        std::copy(checkpoint.param_values[i].begin(), checkpoint.param_values[i].end(),
                  dst.begin());
    }
    return model;
}

} // namespace stgcn
