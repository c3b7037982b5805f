#include "stgcn/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "stgcn/error.hpp"

namespace stgcn {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open manifest: " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

void apply_override(json& doc, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw InputError("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text; // plain string
    }
    json* cursor = &doc;
    std::size_t start = 0;
    for (;;) {
        const std::size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot - start);
        if (part.empty()) {
            throw InputError("--set: empty path segment in '" + key + "'");
        }
        if (dot == std::string::npos) {
            (*cursor)[part] = value;
            break;
        }
        cursor = &(*cursor)[part];
        start = dot + 1;
    }
}

std::string resolve(const fs::path& base, const std::string& path) {
    if (path.empty()) {
        return path;
    }
    fs::path p(path);
    if (p.is_absolute()) {
        return p.string();
    }
    return (base / p).lexically_normal().string();
}

std::vector<BlockChannels> blocks_from_json(const json& rows) {
    std::vector<BlockChannels> blocks;
    for (const json& row : rows) {
        if (!row.is_array() || row.size() != 3) {
            throw InputError("manifest: train.blocks entries must be [c_in, c_mid, c_out]");
        }
        blocks.push_back({row[0].get<std::size_t>(), row[1].get<std::size_t>(),
                          row[2].get<std::size_t>()});
    }
    return blocks;
}

} // namespace

void RunManifest::validate() const {
    if (distance_csv.empty() == adjacency_csv.empty()) {
        throw InputError("manifest: exactly one of distance_csv / adjacency_csv");
    }
    if (horizons.empty()) {
        throw InputError("manifest: at least one horizon");
    }
    for (std::size_t h : horizons) {
        if (h == 0) {
            throw InputError("manifest: horizons must be >= 1");
        }
    }
    if (history == 0) {
        throw InputError("manifest: history M must be >= 1");
    }
    split.validate();
    adjacency.validate();
    train.validate();
}

RunManifest load_manifest(const std::string& path,
                          const std::vector<std::string>& overrides) {
    json doc = parse_json_file(path);
    for (const std::string& assignment : overrides) {
        apply_override(doc, assignment);
    }

    RunManifest m;
    const fs::path base = fs::path(path).parent_path();
    m.speed_csv = resolve(base, doc.value("speed_csv", ""));
    m.distance_csv = resolve(base, doc.value("distance_csv", ""));
    m.adjacency_csv = resolve(base, doc.value("adjacency_csv", ""));
    m.output_dir = resolve(base, doc.value("output_dir", "out"));
    m.variant = graph_conv_variant_from_string(doc.value("variant", "cheb"));
    m.history = doc.value("M", std::size_t{12});
    if (doc.contains("horizons")) {
        m.horizons = doc.at("horizons").get<std::vector<std::size_t>>();
    }
    if (doc.contains("split")) {
        const json& s = doc.at("split");
        if (!s.is_array() || s.size() != 3) {
            throw InputError("manifest: split must be [train, val, test]");
        }
        m.split.train = s[0].get<double>();
        m.split.val = s[1].get<double>();
        m.split.test = s[2].get<double>();
    }
    if (doc.contains("adjacency")) {
        const json& a = doc.at("adjacency");
        m.adjacency.sigma_sq = a.value("sigma_sq", 10.0);
        m.adjacency.epsilon = a.value("epsilon", 0.5);
    }
    m.workdays_only = doc.value("workdays_only", true);
    m.interval_minutes = doc.value("interval_minutes", 0);
    if (doc.contains("train")) {
        const json& t = doc.at("train");
        m.train.epochs = t.value("epochs", std::size_t{50});
        m.train.batch_size = t.value("batch_size", std::size_t{50});
        m.train.lr0 = t.value("lr0", 1e-3);
        m.train.lr_decay = t.value("lr_decay", 0.7);
        m.train.decay_every_epochs = t.value("decay_every_epochs", std::size_t{5});
        m.train.rmsprop_rho = t.value("rmsprop_rho", 0.9);
        m.train.rmsprop_eps = t.value("rmsprop_eps", 1e-8);
        m.train.seed = t.value("seed", std::uint64_t{42});
        m.train.cheb_order = t.value("K", std::size_t{3});
        m.train.temporal_kernel = t.value("K_t", std::size_t{3});
        if (t.contains("blocks")) {
            m.train.blocks = blocks_from_json(t.at("blocks"));
        }
    }
    m.validate();
    return m;
}

std::string manifest_to_json_text(const RunManifest& m) {
    json blocks = json::array();
    for (const BlockChannels& bc : m.train.blocks) {
        blocks.push_back({bc.c_in, bc.c_mid, bc.c_out});
    }
    json doc{
        {"speed_csv", m.speed_csv},
        {"output_dir", m.output_dir},
        {"variant", to_string(m.variant)},
        {"M", m.history},
        {"horizons", m.horizons},
        {"split", {m.split.train, m.split.val, m.split.test}},
        {"adjacency", {{"sigma_sq", m.adjacency.sigma_sq}, {"epsilon", m.adjacency.epsilon}}},
        {"workdays_only", m.workdays_only},
        {"train",
         {{"epochs", m.train.epochs},
          {"batch_size", m.train.batch_size},
          {"lr0", m.train.lr0},
          {"lr_decay", m.train.lr_decay},
          {"decay_every_epochs", m.train.decay_every_epochs},
          {"rmsprop_rho", m.train.rmsprop_rho},
          {"rmsprop_eps", m.train.rmsprop_eps},
          {"seed", m.train.seed},
          {"K", m.train.cheb_order},
          {"K_t", m.train.temporal_kernel},
          {"blocks", blocks}}}};
    if (!m.distance_csv.empty()) {
        doc["distance_csv"] = m.distance_csv;
    }
    if (!m.adjacency_csv.empty()) {
        doc["adjacency_csv"] = m.adjacency_csv;
    }
    return doc.dump(2) + "\n";
}

PreparedRun prepare_run(const RunManifest& manifest) {
    manifest.validate();
    if (manifest.speed_csv.empty()) {
        throw InputError("manifest: speed_csv is required for this command");
    }
    if (!fs::exists(manifest.speed_csv)) {
        throw InputError("manifest: speed file not found: " + manifest.speed_csv);
    }

    SpeedSeries raw = load_speed_csv(manifest.speed_csv);
    if (manifest.interval_minutes > 0 && raw.interval_minutes != manifest.interval_minutes) {
        throw InputError("manifest: interval_minutes=" +
                         std::to_string(manifest.interval_minutes) + " but the speed file " +
                         "samples every " + std::to_string(raw.interval_minutes) +
                         " minutes");
    }

    PreparedRun run;
    if (!manifest.distance_csv.empty()) {
        if (!fs::exists(manifest.distance_csv)) {
            throw InputError("manifest: distance file not found: " + manifest.distance_csv);
        }
        // The speed file's column order is authoritative; distance records
        // are re-indexed onto it so stations without edges stay isolated.
        const DistanceFile distances = load_distance_csv(manifest.distance_csv);
        run.graph = build_adjacency(remap_distances(distances, raw.station_ids),
                                    raw.station_ids.size(), manifest.adjacency,
                                    raw.station_ids);
    } else {
        if (!fs::exists(manifest.adjacency_csv)) {
            throw InputError("manifest: adjacency file not found: " + manifest.adjacency_csv);
        }
        run.graph = load_adjacency_csv(manifest.adjacency_csv);
        if (raw.station_ids != run.graph.node_ids) {
            throw InputError("manifest: station ids in the speed file do not match the "
                             "adjacency file");
        }
    }
    run.bundle = std::make_shared<const LaplacianBundle>(normalized_laplacian(run.graph));

    std::size_t max_h = 0;
    for (std::size_t h : manifest.horizons) {
        max_h = std::max(max_h, h);
    }
    run.data = build_datasets(raw, manifest.history, max_h, manifest.split,
                              manifest.workdays_only);
    return run;
}

} // namespace stgcn
