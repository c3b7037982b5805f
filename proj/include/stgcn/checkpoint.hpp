#ifndef STGCN_CHECKPOINT_HPP
#define STGCN_CHECKPOINT_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stgcn/data.hpp"
#include "stgcn/layers.hpp"

namespace stgcn {

/// Binary checkpoint layout (all integers little-endian):
///   magic "STGC" | version u32 | descriptor length u64 | descriptor JSON |
///   records until EOF, each:
///     name length u32 | name bytes | rank u32 | extents u64[rank] |
///     payload f64[product(extents)]
/// The descriptor carries the architecture, the z-score statistics and the
/// station ids, so a checkpoint plus a graph fully determines predictions.
struct Checkpoint {
    ModelConfig config;
    ZScoreStats stats;
    std::vector<std::string> station_ids;
    std::vector<std::string> param_names;
    std::vector<Shape> param_shapes;
    std::vector<std::vector<double>> param_values;
};

constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint checkpoint_from_model(const StgcnModel& model, const ZScoreStats& stats,
                                 std::vector<std::string> station_ids);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the model described by the checkpoint on the given graph and
/// restores every parameter bit-exactly.
StgcnModel model_from_checkpoint(const Checkpoint& checkpoint,
                                 std::shared_ptr<const LaplacianBundle> bundle);

} // namespace stgcn

#endif
