#ifndef STGCN_DATA_HPP
#define STGCN_DATA_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stgcn/graph.hpp"
#include "stgcn/tensor.hpp"

namespace stgcn {

// ----- timestamps (ISO-8601 local, minute resolution) -----

/// "YYYY-MM-DD HH:MM[:SS]" (or 'T' separator) -> minutes since 1970-01-01.
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t minutes);
/// 0 = Monday ... 6 = Sunday.
int weekday_of(std::int64_t minutes);
inline bool is_weekend(std::int64_t minutes) { return weekday_of(minutes) >= 5; }

// ----- speed series -----

/// Time-major speed observations for n stations; NaN marks missing values
/// until interpolate_missing has run.
struct SpeedSeries {
    std::vector<std::string> station_ids;
    std::vector<std::int64_t> timestamps; // strictly increasing
    std::vector<double> values;           // steps x stations, row-major
    int interval_minutes = 5;

    std::size_t stations() const { return station_ids.size(); }
    std::size_t steps() const { return timestamps.size(); }
    double at(std::size_t t, std::size_t s) const { return values[t * stations() + s]; }
    bool has_missing() const;
    void validate() const;
};

/// CSV with header `timestamp,<id>,...`; empty cells are missing values.
SpeedSeries load_speed_csv(const std::string& path);
void write_speed_csv(const std::string& path, const SpeedSeries& series);

/// Per-station linear interpolation between observed neighbours; leading
/// and trailing gaps copy the nearest observation.
SpeedSeries interpolate_missing(const SpeedSeries& series);

/// Drops Saturdays and Sundays. Windowing later respects the timestamp
/// gaps this introduces, so no window crosses a removed day.
SpeedSeries filter_workdays(const SpeedSeries& series);

// ----- distance and adjacency files -----

struct DistanceFile {
    std::vector<std::string> station_ids; // first-seen order
    std::vector<DistanceRecord> records;
};

/// CSV with header `from,to,distance`; ids map to dense indices in
/// first-seen order (file order is canonical).
DistanceFile load_distance_csv(const std::string& path);

/// Re-indexes distance records onto an authoritative station list (the
/// speed file's column order). Stations without records stay isolated;
/// unknown ids in the distance file are an error.
std::vector<DistanceRecord> remap_distances(const DistanceFile& file,
                                            const std::vector<std::string>& station_ids);
void write_distance_csv(const std::string& path, const std::vector<std::string>& ids,
                        const std::vector<DistanceRecord>& records);

/// n x n numeric matrix with a header row of station ids; loaded verbatim
/// then symmetrized.
WeightedGraph load_adjacency_csv(const std::string& path);
void write_adjacency_csv(const std::string& path, const WeightedGraph& graph);

// ----- normalization -----

struct ZScoreStats {
    double mean = 0.0;
    double std_dev = 1.0;

    double normalize(double x) const { return (x - mean) / std_dev; }
    double denormalize(double z) const { return z * std_dev + mean; }
};

/// Population statistics over rows [row_begin, row_end) of all stations;
/// a constant segment clamps std to 1.
ZScoreStats compute_zscore_stats(const SpeedSeries& series, std::size_t row_begin,
                                 std::size_t row_end);
SpeedSeries apply_zscore(const SpeedSeries& series, const ZScoreStats& stats);

// ----- windowing and splits -----

enum class Split { train, val, test };

struct SplitRatios {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
    void validate() const;
};

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

/// Sliding windows (stride 1) over one series: history rows
/// [start, start+M) and target rows [start+M, start+M+H). Windows never
/// span a timestamp discontinuity.
struct WindowedDataset {
    std::shared_ptr<const SpeedSeries> series; // normalized
    std::vector<std::size_t> starts;
    std::size_t history = 12;
    std::size_t horizon = 3;
    Split split = Split::train;

    std::size_t size() const { return starts.size(); }
};

/// Enumerates windows inside [rows.begin, rows.end), honouring segment
/// boundaries. Throws InputError when a contiguous segment is shorter
/// than M + H.
WindowedDataset make_windows(std::shared_ptr<const SpeedSeries> series, std::size_t history,
                             std::size_t horizon, RowRange rows, Split split);

/// Full preparation pipeline: interpolate, optionally drop weekends,
/// split chronologically by whole days, normalize with train-split
/// statistics, and window each split.
struct DatasetBundle {
    std::shared_ptr<const SpeedSeries> cleaned;    // raw units
    std::shared_ptr<const SpeedSeries> normalized; // z-scored
    ZScoreStats stats;
    RowRange train_rows, val_rows, test_rows;
    WindowedDataset train, val, test;
};

DatasetBundle build_datasets(const SpeedSeries& raw, std::size_t history,
                             std::size_t horizon, const SplitRatios& ratios,
                             bool workdays_only = true);

// ----- batch assembly -----

/// Histories of the selected windows as a [B, M, n, 1] tensor.
Tensor history_batch(const WindowedDataset& ds, std::span<const std::size_t> indices);
/// Targets `step` frames past the history (1-based) as [B, n, 1].
Tensor target_batch(const WindowedDataset& ds, std::span<const std::size_t> indices,
                    std::size_t step);

} // namespace stgcn

#endif
