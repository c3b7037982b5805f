#ifndef STGCN_SYNTH_HPP
#define STGCN_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "stgcn/data.hpp"

namespace stgcn {

/// Synthetic traffic generator: stations scattered in a square, a
/// distance-kernel graph, and speeds composed of a per-station daily
/// sinusoid plus a deviation field that diffuses through the renormalized
/// propagation matrix. The deviation dynamics make recent frames and
/// neighbouring stations genuinely informative, which a time-of-day
/// profile cannot capture.
struct SynthConfig {
    std::size_t nodes = 20;
    std::size_t workdays = 40;
    std::uint64_t seed = 42;
    int interval_minutes = 5;
    double area = 10.0;            // coordinate square side
    double distance_cutoff = 3.5;  // pairs farther apart are not listed
    double sigma_sq = 10.0;
    double epsilon = 0.5;
    double base_speed = 60.0;
    double daily_amplitude = 10.0;
    double diffusion = 0.3;        // propagation mixing per step
    double state_decay = 0.995;
    double drive_std = 0.4;        // innovation of the deviation field
    double noise_rel = 0.05;       // observation noise, relative to amplitude
    std::string start_date = "2012-05-07"; // a Monday

    void validate() const;
};

struct SynthData {
    SpeedSeries series;
    std::vector<std::string> station_ids;
    std::vector<DistanceRecord> distances;
};

SynthData generate_synthetic(const SynthConfig& cfg);

} // namespace stgcn

#endif
