#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stgcn/synth.hpp"
#include "stgcn/training.hpp"
#include "support.hpp"

using namespace stgcn;

namespace {

std::shared_ptr<const LaplacianBundle> bundle_of(const WeightedGraph& g) {
    return std::make_shared<const LaplacianBundle>(normalized_laplacian(g));
}

// Small end-to-end dataset from the synthetic generator.
struct TinyRun {
    DatasetBundle data;
    std::shared_ptr<const LaplacianBundle> bundle;
    ModelConfig config;
};

TinyRun tiny_run(std::uint64_t seed, std::size_t nodes = 4, std::size_t workdays = 2) {
    SynthConfig synth;
    synth.nodes = nodes;
    synth.workdays = workdays;
    synth.seed = seed;
    const SynthData generated = generate_synthetic(synth);

    AdjacencyConfig adjacency;
    const WeightedGraph graph =
        build_adjacency(generated.distances, nodes, adjacency, generated.station_ids);

    TinyRun run;
    run.bundle = bundle_of(graph);
    SplitRatios ratios{0.5, 0.25, 0.25};
    run.data = build_datasets(generated.series, /*history=*/8, /*horizon=*/3, ratios);
    run.config.variant = GraphConvVariant::chebyshev;
    run.config.cheb_order = 2;
    run.config.temporal_kernel = 2;
    run.config.history = 8;
    run.config.blocks = {{1, 2, 8}, {8, 2, 8}};
    return run;
}

} // namespace

TEST_CASE("l2 loss basics") {
    Tensor pred = Tensor::from_values({2, 1}, {1.0, 1.0});
    Tensor truth = Tensor::from_values({2, 1}, {0.0, 2.0});
    CHECK(l2_loss(pred, pred).value() == 0.0);
    CHECK(l2_loss(pred, truth).value() == doctest::Approx(2.0));
    CHECK_THROWS_AS(l2_loss(pred, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("l2 loss gradient is 2(pred - truth)") {
    Rng rng(4);
    Tensor pred = Tensor::uniform({5, 1}, rng, -2.0, 2.0, /*requires_grad=*/true);
    Tensor truth = Tensor::uniform({5, 1}, rng, -2.0, 2.0);
    Tensor loss = l2_loss(pred, truth);
    backward(loss);
    for (std::size_t i = 0; i < 5; ++i) {
        const double expected = 2.0 * (pred.values()[i] - truth.values()[i]);
        CHECK(pred.grad()[i] == doctest::Approx(expected).epsilon(1e-12));
    }

    // Central differences around one coordinate.
    const double h = 1e-5;
    auto loss_at = [&](double delta) {
        std::vector<double> shifted(pred.values().begin(), pred.values().end());
        shifted[2] += delta;
        NoGradGuard guard;
        return l2_loss(Tensor::from_values({5, 1}, shifted), truth).value();
    };
    const double numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
    CHECK(std::abs(pred.grad()[2] - numeric) < 1e-6);
}

TEST_CASE("rmsprop single-step arithmetic") {
    Tensor theta = Tensor::from_values({1}, {1.0}, /*requires_grad=*/true);
    RmsProp opt({{"theta", theta}}, /*rho=*/0.9, /*eps=*/1e-8);

    // Drive the gradient by hand via a simple loss: d(theta)/dtheta = 1.
    Tensor loss = sum(theta);
    backward(loss);
    opt.step(/*lr=*/1e-3);
    // s = 0.1, step = -1e-3 / sqrt(0.1 + 1e-8).
    const double expected = 1.0 - 1e-3 / std::sqrt(0.1 + 1e-8);
    CHECK(theta.values()[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(1.0 - theta.values()[0] == doctest::Approx(3.1623e-3).epsilon(1e-4));
    CHECK(opt.accumulators()[0][0] == doctest::Approx(0.1).epsilon(1e-12));

    // A second identical-gradient step moves less: the accumulator grew.
    const double first_step = 1e-3 / std::sqrt(0.1 + 1e-8);
    theta.zero_grad();
    backward(sum(theta));
    const double before = theta.values()[0];
    opt.step(1e-3);
    const double second_step = before - theta.values()[0];
    CHECK(second_step < first_step);
    CHECK(second_step > 0.0);
}

TEST_CASE("rmsprop ignores zero gradients bitwise") {
    Rng rng(10);
    Tensor theta = Tensor::uniform({7}, rng, -1.0, 1.0, /*requires_grad=*/true);
    const std::vector<double> before(theta.values().begin(), theta.values().end());
    RmsProp opt({{"theta", theta}}, 0.9, 1e-8);
    Tensor loss = sum(mul(theta, Tensor::zeros({7})));
    backward(loss); // all-zero gradient
    opt.step(1e-3);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(theta.values()[i] == before[i]);
    }
}

TEST_CASE("rmsprop rejects non-finite gradients without touching parameters") {
    Tensor theta = Tensor::from_values({2}, {1.0, 2.0}, /*requires_grad=*/true);
    RmsProp opt({{"theta", theta}}, 0.9, 1e-8);
    Tensor loss = sum(mul(theta, Tensor::from_values({2}, {1e308, 1e308})));
    backward(loss);
    backward(loss); // accumulate to force overflow: 2e308 -> inf
    CHECK_THROWS_AS(opt.step(1e-3), NumericError);
    CHECK(theta.values()[0] == 1.0);
    CHECK(theta.values()[1] == 2.0);
}

TEST_CASE("learning-rate staircase over fifty epochs") {
    TrainConfig cfg; // lr0 1e-3, decay 0.7 every 5
    for (std::size_t epoch = 0; epoch < 50; ++epoch) {
        const double expected = 1e-3 * std::pow(0.7, static_cast<double>(epoch / 5));
        CHECK(lr_at_epoch(cfg, epoch) == expected);
    }
    CHECK(lr_at_epoch(cfg, 0) == 1e-3);
    CHECK(lr_at_epoch(cfg, 4) == 1e-3);
    CHECK(lr_at_epoch(cfg, 5) == doctest::Approx(7e-4).epsilon(1e-15));
    CHECK(lr_at_epoch(cfg, 9) == doctest::Approx(7e-4).epsilon(1e-15));
}

TEST_CASE("rollout: copy-last-frame predictor is a fixed point") {
    const std::size_t m = 4, n = 3;
    Rng rng(6);
    const auto history = testsupport::random_vector(m * n, rng);
    ZScoreStats stats{50.0, 4.0};
    auto copy_last = [](std::span<const double> window, std::size_t /*history_len*/,
                        std::size_t nodes) {
        return std::vector<double>(window.end() - static_cast<std::ptrdiff_t>(nodes),
                                   window.end());
    };
    const auto rolled = rollout_with(copy_last, history, m, n, 5, stats);
    REQUIRE(rolled.size() == 5);
    for (const auto& row : rolled) {
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(row[i] == stats.denormalize(history[(m - 1) * n + i]));
        }
    }
}

TEST_CASE("rollout equals manual composition and H=1 equals one forward") {
    TinyRun run = tiny_run(15);
    StgcnModel model(run.config, run.bundle, 9);
    const std::size_t m = run.config.history;
    const std::size_t n = run.bundle->n;
    Rng rng(16);
    std::vector<double> history = testsupport::random_vector(m * n, rng);
    const ZScoreStats stats = run.data.stats;

    const auto h1 = rollout_predict(model, history, 1, stats);
    {
        NoGradGuard guard;
        Tensor direct = model.forward(Tensor::from_values({m, n, 1}, history));
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(h1[0][i] == stats.denormalize(direct.values()[i]));
        }
    }

    const auto h3 = rollout_predict(model, history, 3, stats);
    // Manual composition of three single-step forwards.
    std::vector<double> window = history;
    for (std::size_t step = 0; step < 3; ++step) {
        NoGradGuard guard;
        Tensor pred = model.forward(Tensor::from_values({m, n, 1}, window));
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(h3[step][i] == stats.denormalize(pred.values()[i]));
        }
        std::copy(window.begin() + static_cast<std::ptrdiff_t>(n), window.end(),
                  window.begin());
        std::copy(pred.values().begin(), pred.values().end(),
                  window.end() - static_cast<std::ptrdiff_t>(n));
    }
}

TEST_CASE("ten-window overfit drives the loss below 0.1% of its start") {
    TinyRun run = tiny_run(21);
    // Restrict training to ten windows.
    run.data.train.starts.resize(10);
    run.data.val.starts.clear();

    StgcnModel model(run.config, run.bundle, 7);
    TrainConfig cfg;
    cfg.epochs = 500; // batch covers all ten windows: one step per epoch
    cfg.batch_size = 10;
    cfg.lr0 = 4e-2;
    cfg.lr_decay = 0.72;
    cfg.decay_every_epochs = 45;
    cfg.rmsprop_eps = 1e-10;
    cfg.seed = 3;
    const TrainResult result = train_model(model, run.data, cfg);
    REQUIRE_FALSE(result.aborted);
    REQUIRE(result.history.size() == 500);
    const double initial = result.history.front().train_loss;
    double best = initial;
    for (const EpochStats& row : result.history) {
        best = std::min(best, row.train_loss);
    }
    CHECK(best < 1e-3 * initial);
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
    auto run_once = [](std::uint64_t model_seed) {
        TinyRun run = tiny_run(27);
        StgcnModel model(run.config, run.bundle, model_seed);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 16;
        cfg.seed = 11;
        const TrainResult result = train_model(model, run.data, cfg);
        std::vector<double> flat;
        for (const EpochStats& row : result.history) {
            flat.push_back(row.train_loss);
            flat.push_back(row.val_mae);
            flat.push_back(row.val_rmse);
            flat.push_back(row.lr);
        }
        for (const auto& values : result.best_params.values) {
            flat.insert(flat.end(), values.begin(), values.end());
        }
        return flat;
    };
    const auto first = run_once(5);
    const auto second = run_once(5);
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i] == second[i]);
    }
}

TEST_CASE("training refuses an empty dataset") {
    TinyRun run = tiny_run(30);
    run.data.train.starts.clear();
    StgcnModel model(run.config, run.bundle, 2);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train_model(model, run.data, cfg), InputError);
}

TEST_CASE("diverging training aborts and keeps the best snapshot") {
    TinyRun run = tiny_run(29);
    StgcnModel model(run.config, run.bundle, 1);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 32;
    // Layer norm keeps moderate explosions finite; overflow the doubles.
    cfg.lr0 = 1e160;
    const TrainResult result = train_model(model, run.data, cfg);
    CHECK(result.aborted);
    for (const NamedParam& p : model.parameters()) {
        for (double v : p.tensor.values()) {
            CHECK(std::isfinite(v));
        }
    }
}

TEST_CASE("history CSV schema") {
    const std::vector<EpochStats> history{{0, 1.5, 0.4, 0.6, 1e-3}};
    const std::string path =
        (std::filesystem::temp_directory_path() / "stgcn_history_test.csv").string();
    write_history_csv(path, history);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,train_loss,val_mae,val_rmse,lr");
    std::string row;
    std::getline(in, row);
    CHECK(row.substr(0, 2) == "0,");
    std::remove(path.c_str());
}
