#ifndef STGCN_EVALUATION_HPP
#define STGCN_EVALUATION_HPP

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "stgcn/data.hpp"
#include "stgcn/layers.hpp"

namespace stgcn {

struct MetricReport {
    std::string model_name;
    std::size_t horizon_steps = 0;
    int horizon_minutes = 0;
    double mae = 0.0;
    double mape_percent = 0.0;
    double rmse = 0.0;
    std::size_t n_samples = 0;
    std::size_t mape_excluded = 0; // entries with |truth| < 1e-6
};

/// MAE, MAPE (%) and RMSE over paired samples in original units. Entries
/// with |truth| < 1e-6 are excluded from MAPE and counted.
MetricReport compute_metrics(std::span<const double> pred, std::span<const double> truth);

/// Time-of-day profile predictor: the mean of the training values at the
/// same station and daily slot, falling back to the station mean for slots
/// never seen in training.
struct HaProfile {
    int interval_minutes = 5;
    std::size_t slots_per_day = 0;
    std::size_t stations = 0;
    std::vector<double> slot_mean;    // slots x stations
    std::vector<std::size_t> slot_count;
    std::vector<double> station_mean; // fallback

    double predict(std::int64_t timestamp, std::size_t station) const;
};

HaProfile build_ha_profile(const SpeedSeries& cleaned, RowRange train_rows);

/// Iterative-rollout evaluation of the model on every window of the
/// dataset, reported per requested horizon (truth denormalized from the
/// paired raw series).
std::vector<MetricReport> evaluate_model(const StgcnModel& model,
                                         const WindowedDataset& dataset,
                                         const SpeedSeries& cleaned,
                                         const ZScoreStats& stats,
                                         const std::vector<std::size_t>& horizons,
                                         const std::string& model_name);

/// Historical-average evaluation on the same windows; predictions depend
/// only on the target timestamp, so they are horizon-invariant.
std::vector<MetricReport> evaluate_ha(const HaProfile& profile,
                                      const WindowedDataset& dataset,
                                      const SpeedSeries& cleaned,
                                      const std::vector<std::size_t>& horizons);

/// CSV schema: horizon_minutes,model,mae,mape,rmse,n
void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& reports);
void print_metrics_table(std::ostream& out, const std::vector<MetricReport>& reports);

} // namespace stgcn

#endif
