#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "stgcn/evaluation.hpp"
#include "support.hpp"

using namespace stgcn;

TEST_CASE("metric examples") {
    {
        const std::vector<double> pred{1.0, 2.0};
        const std::vector<double> truth{1.0, 4.0};
        const MetricReport r = compute_metrics(pred, truth);
        CHECK(r.mae == doctest::Approx(1.0));
        CHECK(r.rmse == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
        CHECK(r.rmse == doctest::Approx(1.41421).epsilon(1e-4));
    }
    {
        const std::vector<double> pred{2.0};
        const std::vector<double> truth{4.0};
        CHECK(compute_metrics(pred, truth).mape_percent == doctest::Approx(50.0));
    }
    {
        const std::vector<double> same{3.0, -1.0, 7.0};
        const MetricReport r = compute_metrics(same, same);
        CHECK(r.mae == 0.0);
        CHECK(r.mape_percent == 0.0);
        CHECK(r.rmse == 0.0);
    }
    CHECK_THROWS_AS(compute_metrics({}, {}), InputError);
    CHECK_THROWS_AS(compute_metrics(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                    DimensionError);
}

TEST_CASE("MAPE excludes near-zero truths and reports the count") {
    const std::vector<double> pred{1.0, 5.0, 2.0};
    const std::vector<double> truth{0.0, 4.0, 1e-9};
    const MetricReport r = compute_metrics(pred, truth);
    CHECK(r.mape_excluded == 2);
    CHECK(r.mape_percent == doctest::Approx(25.0));
}

TEST_CASE("RMSE dominates MAE; equality only for equal magnitudes") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pred = testsupport::random_vector(40, rng, 0.0, 80.0);
        const auto truth = testsupport::random_vector(40, rng, 0.0, 80.0);
        const MetricReport r = compute_metrics(pred, truth);
        CHECK(r.rmse >= r.mae - 1e-12);
    }
    const std::vector<double> pred{2.0, 0.0};
    const std::vector<double> truth{0.0, 2.0}; // |errors| all equal
    const MetricReport r = compute_metrics(pred, truth);
    CHECK(r.rmse == doctest::Approx(r.mae).epsilon(1e-12));
}

TEST_CASE("scaling metrics: MAE/RMSE scale, MAPE is invariant") {
    Rng rng(23);
    const auto pred = testsupport::random_vector(30, rng, 10.0, 90.0);
    const auto truth = testsupport::random_vector(30, rng, 10.0, 90.0);
    const MetricReport base = compute_metrics(pred, truth);
    const double c = 3.75;
    std::vector<double> pred_scaled(pred), truth_scaled(truth);
    for (double& v : pred_scaled) v *= c;
    for (double& v : truth_scaled) v *= c;
    const MetricReport scaled = compute_metrics(pred_scaled, truth_scaled);
    CHECK(scaled.mae == doctest::Approx(c * base.mae).epsilon(1e-10));
    CHECK(scaled.rmse == doctest::Approx(c * base.rmse).epsilon(1e-10));
    CHECK(scaled.mape_percent == doctest::Approx(base.mape_percent).epsilon(1e-10));
}

namespace {

// Days * slots grid for two stations; value = f(day, slot, station).
SpeedSeries grid_series(std::size_t days, std::size_t slots,
                        const std::function<double(std::size_t, std::size_t, std::size_t)>& f) {
    SpeedSeries s;
    s.station_ids = {"a", "b"};
    s.interval_minutes = static_cast<int>(1440 / slots);
    const std::int64_t start = parse_timestamp("2012-05-07 00:00");
    for (std::size_t d = 0; d < days; ++d) {
        for (std::size_t t = 0; t < slots; ++t) {
            s.timestamps.push_back(start + static_cast<std::int64_t>(d) * 1440 +
                                   static_cast<std::int64_t>(t) * s.interval_minutes);
            s.values.push_back(f(d, t, 0));
            s.values.push_back(f(d, t, 1));
        }
    }
    return s;
}

} // namespace

TEST_CASE("HA reproduces identical training days exactly") {
    // Five identical weekdays; profile == the daily pattern.
    const SpeedSeries s = grid_series(5, 24, [](std::size_t, std::size_t t, std::size_t st) {
        return 50.0 + static_cast<double>(t) + 5.0 * static_cast<double>(st);
    });
    const HaProfile profile = build_ha_profile(s, {0, 4 * 24});
    // Check the held-out fifth day.
    double mae = 0.0;
    for (std::size_t t = 0; t < 24; ++t) {
        const std::size_t row = 4 * 24 + t;
        for (std::size_t st = 0; st < 2; ++st) {
            mae += std::abs(profile.predict(s.timestamps[row], st) - s.at(row, st));
        }
    }
    CHECK(mae == 0.0);
}

TEST_CASE("HA averages training days per slot") {
    // Two days with values 2 and 4 at every slot: the profile is 3.
    const SpeedSeries s = grid_series(2, 12, [](std::size_t d, std::size_t, std::size_t) {
        return d == 0 ? 2.0 : 4.0;
    });
    const HaProfile profile = build_ha_profile(s, {0, 24});
    CHECK(profile.predict(s.timestamps[0], 0) == doctest::Approx(3.0));
    CHECK(profile.predict(s.timestamps[13], 1) == doctest::Approx(3.0));
}

TEST_CASE("HA on sinusoid days matches an independent enumeration") {
    Rng rng(41);
    const SpeedSeries s = grid_series(6, 48, [&](std::size_t d, std::size_t t, std::size_t st) {
        return 60.0 + 8.0 * std::sin(0.13 * static_cast<double>(t) + 0.5 * st) +
               0.3 * static_cast<double>(d) + 0.01 * static_cast<double>((d * 48 + t) % 7);
    });
    const RowRange train{0, 4 * 48};
    const HaProfile profile = build_ha_profile(s, train);

    // Second implementation: dictionary accumulation.
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> acc;
    for (std::size_t row = train.begin; row < train.end; ++row) {
        const std::size_t slot =
            static_cast<std::size_t>((s.timestamps[row] % 1440) / s.interval_minutes);
        for (std::size_t st = 0; st < 2; ++st) {
            auto& slot_acc = acc[{slot, st}];
            slot_acc.first += s.at(row, st);
            slot_acc.second += 1;
        }
    }
    double worst = 0.0;
    for (std::size_t row = train.end; row < s.steps(); ++row) {
        const std::size_t slot =
            static_cast<std::size_t>((s.timestamps[row] % 1440) / s.interval_minutes);
        for (std::size_t st = 0; st < 2; ++st) {
            const auto& slot_acc = acc.at({slot, st});
            const double expected = slot_acc.first / static_cast<double>(slot_acc.second);
            worst = std::max(worst,
                             std::abs(profile.predict(s.timestamps[row], st) - expected));
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("HA falls back to the station mean for unseen slots") {
    // Training covers only the first half of the day.
    const SpeedSeries s = grid_series(1, 48, [](std::size_t, std::size_t t, std::size_t) {
        return static_cast<double>(t);
    });
    const HaProfile profile = build_ha_profile(s, {0, 24});
    // Slot 30 was never seen; fallback is mean(0..23) = 11.5.
    CHECK(profile.predict(s.timestamps[30], 0) == doctest::Approx(11.5));
    CHECK(profile.predict(s.timestamps[10], 0) == doctest::Approx(10.0));
}

TEST_CASE("HA predictions are horizon-invariant at the same timestamp") {
    const SpeedSeries s = grid_series(4, 48, [](std::size_t d, std::size_t t, std::size_t st) {
        return 40.0 + static_cast<double>((3 * d + t) % 11) + 2.0 * st;
    });
    auto normalized = std::make_shared<const SpeedSeries>(s); // HA reads raw values only
    const HaProfile profile = build_ha_profile(s, {0, 2 * 48});
    const WindowedDataset ds = make_windows(normalized, 6, 9, {2 * 48, 4 * 48}, Split::test);

    const auto h3 = evaluate_ha(profile, ds, s, {3});
    const auto h6 = evaluate_ha(profile, ds, s, {6});
    // Same target timestamp reached at different horizons from different
    // windows gives the same prediction.
    for (std::size_t w = 0; w + 3 < ds.size(); ++w) {
        const std::size_t row_a = ds.starts[w] + 6 + 6 - 1;       // horizon 6
        const std::size_t row_b = ds.starts[w + 3] + 6 + 3 - 1;   // horizon 3
        REQUIRE(row_a == row_b);
        CHECK(profile.predict(s.timestamps[row_a], 0) ==
              profile.predict(s.timestamps[row_b], 0));
    }
    CHECK(h3.front().horizon_minutes == 3 * s.interval_minutes);
    CHECK(h6.front().horizon_minutes == 6 * s.interval_minutes);
}

TEST_CASE("metrics CSV schema") {
    std::vector<MetricReport> reports(1);
    reports[0].model_name = "ha";
    reports[0].horizon_minutes = 15;
    reports[0].horizon_steps = 3;
    reports[0].mae = 1.0;
    reports[0].mape_percent = 2.0;
    reports[0].rmse = 3.0;
    reports[0].n_samples = 10;
    const std::string path =
        (std::filesystem::temp_directory_path() / "stgcn_metrics_test.csv").string();
    write_metrics_csv(path, reports);
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "horizon_minutes,model,mae,mape,rmse,n");
    CHECK(row == "15,ha,1,2,3,10");
    std::remove(path.c_str());
}
