#include "stgcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

#include "stgcn/error.hpp"
#include "stgcn/format.hpp"

namespace stgcn {

namespace {

constexpr std::int64_t kMinutesPerDay = 24 * 60;

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = static_cast<int>(yr + (m <= 2));
}

int parse_int(const std::string& text, std::size_t from, std::size_t len) {
    int value = 0;
    for (std::size_t i = from; i < from + len; ++i) {
        if (i >= text.size() || text[i] < '0' || text[i] > '9') {
            throw InputError("timestamp: malformed field in '" + text + "'");
        }
        value = value * 10 + (text[i] - '0');
    }
    return value;
}

double parse_number(const std::string& text, const std::string& path, std::size_t line) {
    const char* begin = text.c_str();
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (end == begin || (end != nullptr && *end != '\0')) {
        throw InputError(path + ":" + std::to_string(line) + ": cannot parse number '" +
                         text + "'");
    }
    return value;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open file: " + path);
    }
    return in;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write file: " + path);
    }
    return out;
}

} // namespace

std::int64_t parse_timestamp(const std::string& text) {
    // YYYY-MM-DD HH:MM with optional :SS and either ' ' or 'T'.
    if (text.size() < 16 || text[4] != '-' || text[7] != '-' ||
        (text[10] != ' ' && text[10] != 'T') || text[13] != ':') {
        throw InputError("timestamp: expected 'YYYY-MM-DD HH:MM', got '" + text + "'");
    }
    const int year = parse_int(text, 0, 4);
    const int month = parse_int(text, 5, 2);
    const int day = parse_int(text, 8, 2);
    const int hour = parse_int(text, 11, 2);
    const int minute = parse_int(text, 14, 2);
    if (text.size() > 16) {
        if (text.size() != 19 || text[16] != ':') {
            throw InputError("timestamp: trailing junk in '" + text + "'");
        }
        if (parse_int(text, 17, 2) != 0) {
            throw InputError("timestamp: sub-minute resolution unsupported in '" + text + "'");
        }
    }
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59) {
        throw InputError("timestamp: field out of range in '" + text + "'");
    }
    return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) *
               kMinutesPerDay +
           hour * 60 + minute;
}

std::string format_timestamp(std::int64_t minutes) {
    const std::int64_t day = minutes >= 0 ? minutes / kMinutesPerDay
                                          : (minutes - kMinutesPerDay + 1) / kMinutesPerDay;
    const int moy = static_cast<int>(minutes - day * kMinutesPerDay);
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    civil_from_days(day, y, m, d);
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%04d-%02u-%02u %02d:%02d", y, m, d, moy / 60,
                  moy % 60);
    return buffer;
}

int weekday_of(std::int64_t minutes) {
    const std::int64_t day = minutes >= 0 ? minutes / kMinutesPerDay
                                          : (minutes - kMinutesPerDay + 1) / kMinutesPerDay;
    // 1970-01-01 was a Thursday (index 3 with Monday = 0).
    return static_cast<int>(((day % 7) + 7 + 3) % 7);
}

// ----- SpeedSeries -----

bool SpeedSeries::has_missing() const {
    for (double v : values) {
        if (std::isnan(v)) {
            return true;
        }
    }
    return false;
}

void SpeedSeries::validate() const {
    if (values.size() != steps() * stations()) {
        throw DimensionError("speed series: value buffer does not match steps x stations");
    }
    for (std::size_t t = 1; t < timestamps.size(); ++t) {
        if (timestamps[t] <= timestamps[t - 1]) {
            throw InputError("speed series: timestamps not strictly increasing at row " +
                             std::to_string(t));
        }
    }
}

SpeedSeries load_speed_csv(const std::string& path) {
    std::ifstream in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) {
        throw InputError(path + ":1: empty speed file");
    }
    std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "timestamp") {
        throw InputError(path + ":1: expected header 'timestamp,<station>,...'");
    }
    SpeedSeries series;
    series.station_ids.assign(header.begin() + 1, header.end());
    const std::size_t n = series.station_ids.size();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != n + 1) {
            throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(n + 1) + " fields, got " +
                             std::to_string(fields.size()));
        }
        series.timestamps.push_back(parse_timestamp(fields[0]));
        for (std::size_t s = 0; s < n; ++s) {
            const std::string& cell = fields[s + 1];
            if (cell.empty()) {
                series.values.push_back(std::numeric_limits<double>::quiet_NaN());
            } else {
                series.values.push_back(parse_number(cell, path, line_no));
            }
        }
    }
    if (series.timestamps.empty()) {
        throw InputError(path + ": no observations");
    }
    if (series.timestamps.size() >= 2) {
        series.interval_minutes =
            static_cast<int>(series.timestamps[1] - series.timestamps[0]);
    }
    series.validate();
    return series;
}

void write_speed_csv(const std::string& path, const SpeedSeries& series) {
    std::ofstream out = open_output(path);
    out << "timestamp";
    for (const std::string& id : series.station_ids) {
        out << ',' << id;
    }
    out << '\n';
    const std::size_t n = series.stations();
    for (std::size_t t = 0; t < series.steps(); ++t) {
        out << format_timestamp(series.timestamps[t]);
        for (std::size_t s = 0; s < n; ++s) {
            const double v = series.values[t * n + s];
            out << ',';
            if (!std::isnan(v)) {
                out << format_double(v);
            }
        }
        out << '\n';
    }
}

SpeedSeries interpolate_missing(const SpeedSeries& series) {
    SpeedSeries out = series;
    const std::size_t n = series.stations();
    const std::size_t steps = series.steps();
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t observed = 0;
        for (std::size_t t = 0; t < steps; ++t) {
            if (!std::isnan(series.at(t, s))) {
                ++observed;
            }
        }
        if (observed == 0) {
            throw InputError("interpolate: station '" + series.station_ids[s] +
                             "' has no observed values");
        }
        if (observed == steps) {
            continue;
        }
        std::size_t t = 0;
        while (t < steps) {
            if (!std::isnan(out.values[t * n + s])) {
                ++t;
                continue;
            }
            std::size_t gap_begin = t;
            while (t < steps && std::isnan(out.values[t * n + s])) {
                ++t;
            }
            const std::size_t gap_end = t; // first observed row after the gap, or steps
            const bool has_left = gap_begin > 0;
            const bool has_right = gap_end < steps;
            if (has_left && has_right) {
                const double left = out.values[(gap_begin - 1) * n + s];
                const double right = out.values[gap_end * n + s];
                const double span = static_cast<double>(gap_end - gap_begin + 1);
                for (std::size_t g = gap_begin; g < gap_end; ++g) {
                    const double frac = static_cast<double>(g - gap_begin + 1) / span;
                    out.values[g * n + s] = left + (right - left) * frac;
                }
            } else {
                const double fill = has_left ? out.values[(gap_begin - 1) * n + s]
                                             : out.values[gap_end * n + s];
                for (std::size_t g = gap_begin; g < gap_end; ++g) {
                    out.values[g * n + s] = fill;
                }
            }
        }
    }
    return out;
}

SpeedSeries filter_workdays(const SpeedSeries& series) {
    if (series.timestamps.empty()) {
        throw InputError("filter_workdays: series has no timestamps");
    }
    SpeedSeries out;
    out.station_ids = series.station_ids;
    out.interval_minutes = series.interval_minutes;
    const std::size_t n = series.stations();
    for (std::size_t t = 0; t < series.steps(); ++t) {
        if (is_weekend(series.timestamps[t])) {
            continue;
        }
        out.timestamps.push_back(series.timestamps[t]);
        out.values.insert(out.values.end(), series.values.begin() + t * n,
                          series.values.begin() + (t + 1) * n);
    }
    return out;
}

// ----- distance / adjacency files -----

DistanceFile load_distance_csv(const std::string& path) {
    std::ifstream in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) {
        throw InputError(path + ":1: empty distance file");
    }
    std::vector<std::string> header = split_csv_line(line);
    if (header.size() != 3 || header[0] != "from" || header[1] != "to" ||
        header[2] != "distance") {
        throw InputError(path + ":1: expected header 'from,to,distance'");
    }
    DistanceFile file;
    auto intern = [&file](const std::string& id) {
        for (std::size_t i = 0; i < file.station_ids.size(); ++i) {
            if (file.station_ids[i] == id) {
                return i;
            }
        }
        file.station_ids.push_back(id);
        return file.station_ids.size() - 1;
    };
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != 3) {
            throw InputError(path + ":" + std::to_string(line_no) +
                             ": expected 'from,to,distance'");
        }
        DistanceRecord rec;
        rec.from = intern(fields[0]);
        rec.to = intern(fields[1]);
        rec.distance = parse_number(fields[2], path, line_no);
        if (rec.distance < 0.0) {
            throw InputError(path + ":" + std::to_string(line_no) + ": negative distance");
        }
        file.records.push_back(rec);
    }
    if (file.station_ids.empty()) {
        throw InputError(path + ": no distance records");
    }
    return file;
}

std::vector<DistanceRecord> remap_distances(const DistanceFile& file,
                                            const std::vector<std::string>& station_ids) {
    std::vector<std::size_t> to_station(file.station_ids.size());
    for (std::size_t i = 0; i < file.station_ids.size(); ++i) {
        const auto it = std::find(station_ids.begin(), station_ids.end(),
                                  file.station_ids[i]);
        if (it == station_ids.end()) {
            throw InputError("distance file mentions unknown station '" +
                             file.station_ids[i] + "'");
        }
        to_station[i] = static_cast<std::size_t>(it - station_ids.begin());
    }
    std::vector<DistanceRecord> remapped;
    remapped.reserve(file.records.size());
    for (const DistanceRecord& rec : file.records) {
        remapped.push_back({to_station[rec.from], to_station[rec.to], rec.distance});
    }
    return remapped;
}

void write_distance_csv(const std::string& path, const std::vector<std::string>& ids,
                        const std::vector<DistanceRecord>& records) {
    std::ofstream out = open_output(path);
    out << "from,to,distance\n";
    for (const DistanceRecord& rec : records) {
        out << ids[rec.from] << ',' << ids[rec.to] << ',' << format_double(rec.distance)
            << '\n';
    }
}

WeightedGraph load_adjacency_csv(const std::string& path) {
    std::ifstream in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) {
        throw InputError(path + ":1: empty adjacency file");
    }
    std::vector<std::string> ids = split_csv_line(line);
    const std::size_t n = ids.size();
    std::vector<double> weights;
    weights.reserve(n * n);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != n) {
            throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(n) + " columns, got " +
                             std::to_string(fields.size()));
        }
        for (const std::string& cell : fields) {
            weights.push_back(parse_number(cell, path, line_no));
        }
    }
    if (weights.size() != n * n) {
        throw InputError(path + ": expected " + std::to_string(n) + " rows of " +
                         std::to_string(n) + " weights");
    }
    return graph_from_adjacency(n, weights, std::move(ids));
}

void write_adjacency_csv(const std::string& path, const WeightedGraph& graph) {
    std::ofstream out = open_output(path);
    for (std::size_t i = 0; i < graph.n; ++i) {
        if (i != 0) {
            out << ',';
        }
        out << graph.node_ids[i];
    }
    out << '\n';
    for (std::size_t i = 0; i < graph.n; ++i) {
        for (std::size_t j = 0; j < graph.n; ++j) {
            if (j != 0) {
                out << ',';
            }
            out << format_double(graph.weights[i * graph.n + j]);
        }
        out << '\n';
    }
}

// ----- normalization -----

ZScoreStats compute_zscore_stats(const SpeedSeries& series, std::size_t row_begin,
                                 std::size_t row_end) {
    if (row_begin >= row_end || row_end > series.steps()) {
        throw InputError("zscore: empty or out-of-range row window");
    }
    const std::size_t n = series.stations();
    const std::size_t count = (row_end - row_begin) * n;
    double mean = 0.0;
    for (std::size_t t = row_begin; t < row_end; ++t) {
        for (std::size_t s = 0; s < n; ++s) {
            mean += series.at(t, s);
        }
    }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t t = row_begin; t < row_end; ++t) {
        for (std::size_t s = 0; s < n; ++s) {
            const double d = series.at(t, s) - mean;
            var += d * d;
        }
    }
    var /= static_cast<double>(count);
    ZScoreStats stats;
    stats.mean = mean;
    stats.std_dev = std::sqrt(var);
    if (!(stats.std_dev > 0.0)) {
        stats.std_dev = 1.0; // constant segment
    }
    return stats;
}

SpeedSeries apply_zscore(const SpeedSeries& series, const ZScoreStats& stats) {
    SpeedSeries out = series;
    for (double& v : out.values) {
        v = stats.normalize(v);
    }
    return out;
}

// ----- windows and splits -----

void SplitRatios::validate() const {
    if (!(train > 0.0) || val < 0.0 || test < 0.0) {
        throw InputError("split: train ratio must be positive, val/test nonnegative");
    }
    const double total = train + val + test;
    if (std::abs(total - 1.0) > 1e-9) {
        throw InputError("split: ratios sum to " + format_double(total) + ", expected 1");
    }
}

WindowedDataset make_windows(std::shared_ptr<const SpeedSeries> series, std::size_t history,
                             std::size_t horizon, RowRange rows, Split split) {
    if (history == 0 || horizon == 0) {
        throw InputError("make_windows: history and horizon must be >= 1");
    }
    if (!series) {
        throw ContractError("make_windows: null series");
    }
    if (rows.end > series->steps() || rows.begin > rows.end) {
        throw InputError("make_windows: row range out of bounds");
    }
    WindowedDataset ds;
    ds.series = series;
    ds.history = history;
    ds.horizon = horizon;
    ds.split = split;

    const std::size_t need = history + horizon;
    const auto& ts = series->timestamps;
    const std::int64_t step = series->interval_minutes;
    std::size_t seg_begin = rows.begin;
    while (seg_begin < rows.end) {
        std::size_t seg_end = seg_begin + 1;
        while (seg_end < rows.end && ts[seg_end] - ts[seg_end - 1] == step) {
            ++seg_end;
        }
        const std::size_t len = seg_end - seg_begin;
        if (len < need) {
            throw InputError("make_windows: segment starting " +
                             format_timestamp(ts[seg_begin]) + " has " + std::to_string(len) +
                             " rows, need M+H=" + std::to_string(need));
        }
        for (std::size_t start = seg_begin; start + need <= seg_end; ++start) {
            ds.starts.push_back(start);
        }
        seg_begin = seg_end;
    }
    return ds;
}

DatasetBundle build_datasets(const SpeedSeries& raw, std::size_t history,
                             std::size_t horizon, const SplitRatios& ratios,
                             bool workdays_only) {
    ratios.validate();
    SpeedSeries cleaned = interpolate_missing(raw);
    if (workdays_only) {
        cleaned = filter_workdays(cleaned);
    }
    if (cleaned.steps() == 0) {
        throw InputError("datasets: no rows left after filtering");
    }

    // Chronological split at whole-day boundaries.
    std::vector<std::int64_t> days;
    for (std::int64_t ts : cleaned.timestamps) {
        const std::int64_t day = ts / kMinutesPerDay;
        if (days.empty() || days.back() != day) {
            days.push_back(day);
        }
    }
    const std::size_t total_days = days.size();
    const std::size_t train_days =
        static_cast<std::size_t>(ratios.train * static_cast<double>(total_days));
    const std::size_t val_days =
        static_cast<std::size_t>(ratios.val * static_cast<double>(total_days));
    if (train_days == 0) {
        throw InputError("datasets: " + std::to_string(total_days) +
                         " days leave an empty training split");
    }

    auto rows_for_days = [&](std::size_t day_begin, std::size_t day_end) {
        RowRange range;
        std::size_t t = 0;
        while (t < cleaned.steps() &&
               static_cast<std::size_t>(std::lower_bound(days.begin(), days.end(),
                                                         cleaned.timestamps[t] /
                                                             kMinutesPerDay) -
                                        days.begin()) < day_begin) {
            ++t;
        }
        range.begin = t;
        while (t < cleaned.steps() &&
               static_cast<std::size_t>(std::lower_bound(days.begin(), days.end(),
                                                         cleaned.timestamps[t] /
                                                             kMinutesPerDay) -
                                        days.begin()) < day_end) {
            ++t;
        }
        range.end = t;
        return range;
    };

    DatasetBundle bundle;
    bundle.train_rows = rows_for_days(0, train_days);
    bundle.val_rows = rows_for_days(train_days, train_days + val_days);
    bundle.test_rows = rows_for_days(train_days + val_days, total_days);

    bundle.stats = compute_zscore_stats(cleaned, bundle.train_rows.begin,
                                        bundle.train_rows.end);
    auto cleaned_ptr = std::make_shared<const SpeedSeries>(std::move(cleaned));
    auto normalized_ptr =
        std::make_shared<const SpeedSeries>(apply_zscore(*cleaned_ptr, bundle.stats));
    bundle.cleaned = cleaned_ptr;
    bundle.normalized = normalized_ptr;

    bundle.train =
        make_windows(normalized_ptr, history, horizon, bundle.train_rows, Split::train);
    if (bundle.val_rows.size() > 0) {
        bundle.val = make_windows(normalized_ptr, history, horizon, bundle.val_rows,
                                  Split::val);
    } else {
        bundle.val.series = normalized_ptr;
        bundle.val.history = history;
        bundle.val.horizon = horizon;
        bundle.val.split = Split::val;
    }
    if (bundle.test_rows.size() > 0) {
        bundle.test = make_windows(normalized_ptr, history, horizon, bundle.test_rows,
                                   Split::test);
    } else {
        bundle.test.series = normalized_ptr;
        bundle.test.history = history;
        bundle.test.horizon = horizon;
        bundle.test.split = Split::test;
    }
    return bundle;
}

// ----- batch assembly -----

Tensor history_batch(const WindowedDataset& ds, std::span<const std::size_t> indices) {
    if (!ds.series) {
        throw ContractError("history_batch: dataset has no series");
    }
    const std::size_t n = ds.series->stations();
    const std::size_t m = ds.history;
    std::vector<double> data(indices.size() * m * n);
    std::size_t pos = 0;
    for (std::size_t idx : indices) {
        const std::size_t start = ds.starts.at(idx);
        const double* src = ds.series->values.data() + start * n;
        std::copy(src, src + m * n, data.begin() + pos);
        pos += m * n;
    }
    return Tensor::from_values({indices.size(), m, n, 1}, std::move(data));
}

Tensor target_batch(const WindowedDataset& ds, std::span<const std::size_t> indices,
                    std::size_t step) {
    if (!ds.series) {
        throw ContractError("target_batch: dataset has no series");
    }
    if (step == 0 || step > ds.horizon) {
        throw ContractError("target_batch: step " + std::to_string(step) +
                            " outside horizon " + std::to_string(ds.horizon));
    }
    const std::size_t n = ds.series->stations();
    std::vector<double> data(indices.size() * n);
    std::size_t pos = 0;
    for (std::size_t idx : indices) {
        const std::size_t row = ds.starts.at(idx) + ds.history + step - 1;
        const double* src = ds.series->values.data() + row * n;
        std::copy(src, src + n, data.begin() + pos);
        pos += n;
    }
    return Tensor::from_values({indices.size(), n, 1}, std::move(data));
}

} // namespace stgcn
