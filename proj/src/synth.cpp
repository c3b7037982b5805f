#include "stgcn/synth.hpp"

#include <cmath>

#include "stgcn/error.hpp"
#include "stgcn/graph.hpp"
#include "stgcn/rng.hpp"

namespace stgcn {

void SynthConfig::validate() const {
    if (nodes == 0 || workdays == 0) {
        throw InputError("synth: nodes and workdays must be positive");
    }
    if (1440 % interval_minutes != 0) {
        throw InputError("synth: interval must divide a day");
    }
    if (!(diffusion >= 0.0) || diffusion > 1.0) {
        throw InputError("synth: diffusion must lie in [0, 1]");
    }
}

SynthData generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t n = cfg.nodes;

    // Random geometric layout; only nearby pairs make it into the
    // distance list (both directions, like a real distance file).
    std::vector<double> xs(n);
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = rng.uniform(0.0, cfg.area);
        ys[i] = rng.uniform(0.0, cfg.area);
    }
    SynthData data;
    for (std::size_t i = 0; i < n; ++i) {
        data.station_ids.push_back("s" + std::to_string(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = xs[i] - xs[j];
            const double dy = ys[i] - ys[j];
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d <= cfg.distance_cutoff) {
                data.distances.push_back({i, j, d});
                data.distances.push_back({j, i, d});
            }
        }
    }

    AdjacencyConfig adjacency;
    adjacency.sigma_sq = cfg.sigma_sq;
    adjacency.epsilon = cfg.epsilon;
    const WeightedGraph graph = build_adjacency(data.distances, n, adjacency,
                                                data.station_ids);
    const LaplacianBundle bundle = normalized_laplacian(graph);

    std::vector<double> phase(n);
    for (double& p : phase) {
        p = rng.uniform(0.0, 6.283185307179586);
    }

    std::vector<double> state(n, 0.0);
    std::vector<double> mixed(n);
    auto evolve = [&]() {
        bundle.propagation.matvec(state, mixed);
        for (std::size_t i = 0; i < n; ++i) {
            state[i] = cfg.state_decay *
                           ((1.0 - cfg.diffusion) * state[i] + cfg.diffusion * mixed[i]) +
                       cfg.drive_std * rng.normal();
        }
    };
    // Burn in to the stationary regime before emitting observations.
    for (int warm = 0; warm < 600; ++warm) {
        evolve();
    }

    SpeedSeries& series = data.series;
    series.station_ids = data.station_ids;
    series.interval_minutes = cfg.interval_minutes;
    const std::size_t slots_per_day = static_cast<std::size_t>(1440 / cfg.interval_minutes);
    const double noise_std = cfg.noise_rel * cfg.daily_amplitude;
    const double two_pi = 6.283185307179586;

    std::int64_t day_minutes = parse_timestamp(cfg.start_date + " 00:00");
    std::size_t emitted_days = 0;
    while (emitted_days < cfg.workdays) {
        if (!is_weekend(day_minutes)) {
            for (std::size_t slot = 0; slot < slots_per_day; ++slot) {
                const std::int64_t ts = day_minutes +
                                        static_cast<std::int64_t>(slot) *
                                            cfg.interval_minutes;
                series.timestamps.push_back(ts);
                const double angle = two_pi * static_cast<double>(slot) /
                                     static_cast<double>(slots_per_day);
                for (std::size_t i = 0; i < n; ++i) {
                    const double value = cfg.base_speed +
                                         cfg.daily_amplitude * std::sin(angle + phase[i]) +
                                         state[i] + noise_std * rng.normal();
                    series.values.push_back(value);
                }
                evolve();
            }
            ++emitted_days;
        }
        day_minutes += 1440;
    }
    series.validate();
    return data;
}

} // namespace stgcn
