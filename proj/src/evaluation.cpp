#include "stgcn/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "stgcn/error.hpp"
#include "stgcn/format.hpp"

namespace stgcn {

namespace {
constexpr double kMapeFloor = 1e-6;
constexpr std::int64_t kMinutesPerDay = 24 * 60;
} // namespace

MetricReport compute_metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                             std::to_string(truth.size()) + " truths");
    }
    if (pred.empty()) {
        throw InputError("metrics: empty input");
    }
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double ape_sum = 0.0;
    std::size_t ape_count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double err = pred[i] - truth[i];
        abs_sum += std::abs(err);
        sq_sum += err * err;
        if (std::abs(truth[i]) >= kMapeFloor) {
            ape_sum += std::abs(err) / std::abs(truth[i]);
            ++ape_count;
        }
    }
    MetricReport report;
    report.n_samples = pred.size();
    report.mae = abs_sum / static_cast<double>(pred.size());
    report.rmse = std::sqrt(sq_sum / static_cast<double>(pred.size()));
    report.mape_excluded = pred.size() - ape_count;
    report.mape_percent =
        ape_count > 0 ? 100.0 * ape_sum / static_cast<double>(ape_count) : 0.0;
    return report;
}

double HaProfile::predict(std::int64_t timestamp, std::size_t station) const {
    const std::int64_t minute_of_day = ((timestamp % kMinutesPerDay) + kMinutesPerDay) %
                                       kMinutesPerDay;
    const std::size_t slot = static_cast<std::size_t>(minute_of_day / interval_minutes);
    if (slot < slots_per_day && slot_count[slot] > 0) {
        return slot_mean[slot * stations + station];
    }
    return station_mean[station];
}

HaProfile build_ha_profile(const SpeedSeries& cleaned, RowRange train_rows) {
    if (train_rows.size() == 0 || train_rows.end > cleaned.steps()) {
        throw InputError("ha: empty or out-of-range training rows");
    }
    HaProfile profile;
    profile.interval_minutes = cleaned.interval_minutes;
    profile.slots_per_day =
        static_cast<std::size_t>(kMinutesPerDay / cleaned.interval_minutes);
    profile.stations = cleaned.stations();
    profile.slot_mean.assign(profile.slots_per_day * profile.stations, 0.0);
    profile.slot_count.assign(profile.slots_per_day, 0);
    profile.station_mean.assign(profile.stations, 0.0);

    for (std::size_t t = train_rows.begin; t < train_rows.end; ++t) {
        const std::int64_t minute_of_day = cleaned.timestamps[t] % kMinutesPerDay;
        const std::size_t slot =
            static_cast<std::size_t>(minute_of_day / cleaned.interval_minutes);
        profile.slot_count[slot] += 1;
        for (std::size_t s = 0; s < profile.stations; ++s) {
            profile.slot_mean[slot * profile.stations + s] += cleaned.at(t, s);
            profile.station_mean[s] += cleaned.at(t, s);
        }
    }
    for (std::size_t slot = 0; slot < profile.slots_per_day; ++slot) {
        if (profile.slot_count[slot] > 0) {
            for (std::size_t s = 0; s < profile.stations; ++s) {
                profile.slot_mean[slot * profile.stations + s] /=
                    static_cast<double>(profile.slot_count[slot]);
            }
        }
    }
    for (std::size_t s = 0; s < profile.stations; ++s) {
        profile.station_mean[s] /= static_cast<double>(train_rows.size());
    }
    return profile;
}

std::vector<MetricReport> evaluate_model(const StgcnModel& model,
                                         const WindowedDataset& dataset,
                                         const SpeedSeries& cleaned,
                                         const ZScoreStats& stats,
                                         const std::vector<std::size_t>& horizons,
                                         const std::string& model_name) {
    tune_allocator();
    if (dataset.size() == 0) {
        throw InputError("evaluate: empty dataset");
    }
    std::size_t max_h = 0;
    for (std::size_t h : horizons) {
        if (h == 0 || h > dataset.horizon) {
            throw InputError("evaluate: horizon " + std::to_string(h) +
                             " outside dataset horizon " + std::to_string(dataset.horizon));
        }
        max_h = std::max(max_h, h);
    }
    const std::size_t n = dataset.series->stations();
    const std::size_t m = dataset.history;
    const std::size_t total = dataset.size();

    // Batched iterative rollout: per chunk of windows, forward the whole
    // [B, M, n, 1] block, then slide every window by its own prediction.
    // Row-independence of all ops makes this identical to per-window
    // rollouts.
    std::vector<std::vector<double>> preds(max_h, std::vector<double>(total * n));
    std::vector<std::vector<double>> truths(max_h, std::vector<double>(total * n));
    constexpr std::size_t kChunk = 50;
    NoGradGuard guard;
    std::vector<double> block;
    for (std::size_t begin = 0; begin < total; begin += kChunk) {
        const std::size_t count = std::min(kChunk, total - begin);
        block.resize(count * m * n);
        for (std::size_t w = 0; w < count; ++w) {
            const double* src =
                dataset.series->values.data() + dataset.starts[begin + w] * n;
            std::copy(src, src + m * n, block.begin() + w * m * n);
        }
        for (std::size_t h = 0; h < max_h; ++h) {
            Tensor input = Tensor::from_values({count, m, n, 1}, block);
            Tensor out = model.forward_batch(input); // [count, n, 1]
            const auto ov = out.values();
            for (std::size_t w = 0; w < count; ++w) {
                const std::size_t target_row = dataset.starts[begin + w] + m + h;
                for (std::size_t s = 0; s < n; ++s) {
                    preds[h][(begin + w) * n + s] = stats.denormalize(ov[w * n + s]);
                    truths[h][(begin + w) * n + s] = cleaned.at(target_row, s);
                }
                // Slide this window: drop the oldest frame, append the
                // normalized prediction.
                double* win = block.data() + w * m * n;
                std::copy(win + n, win + m * n, win);
                std::copy(ov.begin() + static_cast<std::ptrdiff_t>(w * n),
                          ov.begin() + static_cast<std::ptrdiff_t>((w + 1) * n),
                          win + (m - 1) * n);
            }
        }
    }

    std::vector<MetricReport> reports;
    for (std::size_t h : horizons) {
        MetricReport report = compute_metrics(preds[h - 1], truths[h - 1]);
        report.model_name = model_name;
        report.horizon_steps = h;
        report.horizon_minutes = static_cast<int>(h) * cleaned.interval_minutes;
        reports.push_back(report);
    }
    return reports;
}

std::vector<MetricReport> evaluate_ha(const HaProfile& profile,
                                      const WindowedDataset& dataset,
                                      const SpeedSeries& cleaned,
                                      const std::vector<std::size_t>& horizons) {
    if (dataset.size() == 0) {
        throw InputError("evaluate: empty dataset");
    }
    const std::size_t n = cleaned.stations();
    std::vector<MetricReport> reports;
    for (std::size_t h : horizons) {
        if (h == 0 || h > dataset.horizon) {
            throw InputError("evaluate: horizon " + std::to_string(h) +
                             " outside dataset horizon " + std::to_string(dataset.horizon));
        }
        std::vector<double> preds;
        std::vector<double> truths;
        preds.reserve(dataset.size() * n);
        truths.reserve(dataset.size() * n);
        for (std::size_t w = 0; w < dataset.size(); ++w) {
            const std::size_t target_row = dataset.starts[w] + dataset.history + h - 1;
            const std::int64_t ts = cleaned.timestamps[target_row];
            for (std::size_t s = 0; s < n; ++s) {
                preds.push_back(profile.predict(ts, s));
                truths.push_back(cleaned.at(target_row, s));
            }
        }
        MetricReport report = compute_metrics(preds, truths);
        report.model_name = "ha";
        report.horizon_steps = h;
        report.horizon_minutes = static_cast<int>(h) * cleaned.interval_minutes;
        reports.push_back(report);
    }
    return reports;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& reports) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write file: " + path);
    }
    out << "horizon_minutes,model,mae,mape,rmse,n\n";
    for (const MetricReport& r : reports) {
        out << r.horizon_minutes << ',' << r.model_name << ',' << format_double(r.mae) << ','
            << format_double(r.mape_percent) << ',' << format_double(r.rmse) << ','
            << r.n_samples << '\n';
    }
}

void print_metrics_table(std::ostream& out, const std::vector<MetricReport>& reports) {
    out << std::left << std::setw(14) << "horizon(min)" << std::setw(12) << "model"
        << std::right << std::setw(10) << "MAE" << std::setw(10) << "MAPE%" << std::setw(10)
        << "RMSE" << std::setw(10) << "n" << '\n';
    for (const MetricReport& r : reports) {
        out << std::left << std::setw(14) << r.horizon_minutes << std::setw(12)
            << r.model_name << std::right << std::fixed << std::setprecision(4)
            << std::setw(10) << r.mae << std::setw(10) << r.mape_percent << std::setw(10)
            << r.rmse << std::setw(10) << r.n_samples << '\n';
        out.unsetf(std::ios::fixed);
    }
}

} // namespace stgcn
