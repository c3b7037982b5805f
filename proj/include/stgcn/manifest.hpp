#ifndef STGCN_MANIFEST_HPP
#define STGCN_MANIFEST_HPP

#include <string>
#include <vector>

#include "stgcn/data.hpp"
#include "stgcn/graph.hpp"
#include "stgcn/layers.hpp"
#include "stgcn/training.hpp"

namespace stgcn {

/// One JSON file drives every run: data paths, graph construction, model
/// variant and the training schedule. Paths are resolved against the
/// manifest's own directory.
struct RunManifest {
    std::string speed_csv;
    std::string distance_csv;  // exactly one of distance_csv / adjacency_csv
    std::string adjacency_csv;
    std::string output_dir = "out";
    GraphConvVariant variant = GraphConvVariant::chebyshev;
    std::size_t history = 12; // M
    std::vector<std::size_t> horizons = {3, 6, 9};
    SplitRatios split;
    AdjacencyConfig adjacency;
    bool workdays_only = true;
    int interval_minutes = 0; // optional; cross-checked against the speed file
    TrainConfig train;

    void validate() const;
};

/// Loads a manifest, applying `--set key=value` overrides (dotted paths
/// into the JSON document; values parse as JSON with a string fallback)
/// before conversion and path resolution.
RunManifest load_manifest(const std::string& path,
                          const std::vector<std::string>& overrides = {});

std::string manifest_to_json_text(const RunManifest& manifest);

/// Loads speeds + graph per the manifest and assembles the datasets.
struct PreparedRun {
    WeightedGraph graph;
    std::shared_ptr<const LaplacianBundle> bundle;
    DatasetBundle data;
};
PreparedRun prepare_run(const RunManifest& manifest);

} // namespace stgcn

#endif
