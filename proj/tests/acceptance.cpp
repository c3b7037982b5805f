// Acceptance suite: one pass/fail line per criterion, nonzero exit when
// any criterion fails. Heavier end-to-end checks live here rather than in
// the unit suites.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "stgcn/checkpoint.hpp"
#include "stgcn/data.hpp"
#include "stgcn/evaluation.hpp"
#include "stgcn/gradcheck.hpp"
#include "stgcn/graph.hpp"
#include "stgcn/layers.hpp"
#include "stgcn/synth.hpp"
#include "stgcn/training.hpp"

using namespace stgcn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
    char buffer[512];
    std::snprintf(buffer, sizeof(buffer), pattern, args...);
    return buffer;
}

WeightedGraph random_graph(std::size_t n, Rng& rng, double edge_prob = 0.6) {
    std::vector<double> w(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (rng.uniform() < edge_prob) {
                const double weight = rng.uniform(0.1, 1.0);
                w[i * n + j] = weight;
                w[j * n + i] = weight;
            }
        }
    }
    return graph_from_adjacency(n, w);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "stgcn_acceptance";
    fs::create_directories(dir);
    return dir;
}

// Shared pipeline used by criteria 5, 7 and 9.
struct PipelineResult {
    DatasetBundle data;
    std::shared_ptr<const LaplacianBundle> bundle;
    ModelConfig model_config;
    TrainConfig train_config;
    std::vector<std::string> station_ids;
};

PipelineResult prepare_synth_pipeline(const SynthConfig& synth, std::size_t history,
                                      std::size_t horizon,
                                      std::vector<BlockChannels> blocks) {
    const SynthData generated = generate_synthetic(synth);
    AdjacencyConfig adjacency;
    adjacency.sigma_sq = synth.sigma_sq;
    adjacency.epsilon = synth.epsilon;
    const WeightedGraph graph = build_adjacency(generated.distances, synth.nodes,
                                                adjacency, generated.station_ids);
    PipelineResult result;
    result.bundle = std::make_shared<const LaplacianBundle>(normalized_laplacian(graph));
    SplitRatios ratios; // 60/20/20
    result.data = build_datasets(generated.series, history, horizon, ratios);
    result.train_config.cheb_order = 3;
    result.train_config.temporal_kernel = 3;
    result.train_config.blocks = blocks;
    result.model_config = model_config_from(result.train_config,
                                            GraphConvVariant::chebyshev, history,
                                            synth.nodes);
    result.station_ids = generated.station_ids;
    return result;
}

// ----- criteria -----

std::string criterion_spectral_oracle() {
    const auto start = Clock::now();
    Rng rng(20240605);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(9);     // [2, 10]
        const std::size_t order = 1 + rng.below(5); // [1, 5]
        const WeightedGraph g = random_graph(n, rng);
        const LaplacianBundle bundle = normalized_laplacian(g);
        std::vector<double> theta(order);
        for (double& t : theta) {
            t = rng.uniform(-1.0, 1.0);
        }
        std::vector<double> x(n);
        for (double& v : x) {
            v = rng.uniform(-1.0, 1.0);
        }
        const auto fast = cheb_filter(bundle, theta, x);
        const auto exact = spectral_oracle(bundle, theta, x);
        for (std::size_t i = 0; i < n; ++i) {
            worst = std::max(worst, std::abs(fast[i] - exact[i]));
        }
    }
    const double elapsed = seconds_since(start);
    if (worst >= 1e-8) {
        return fmt("max |diff| %.3e >= 1e-8", worst);
    }
    if (elapsed >= 5.0) {
        return fmt("took %.1f s >= 5 s", elapsed);
    }
    std::printf("    max |cheb - oracle| = %.3e over 100 graphs in %.2f s\n", worst,
                elapsed);
    return {};
}

std::string criterion_gradchecks() {
    const auto start = Clock::now();
    const auto results = run_layer_gradchecks(/*seed=*/1234, /*tolerance=*/1e-4);
    const double elapsed = seconds_since(start);
    for (const GradCheckEntry& entry : results) {
        std::printf("    %-26s max_rel_err %.3e %s\n", entry.name.c_str(),
                    entry.max_rel_err, entry.pass ? "ok" : "FAIL");
        if (!entry.pass) {
            return fmt("%s failed with %.3e", entry.name.c_str(), entry.max_rel_err);
        }
    }
    if (elapsed >= 60.0) {
        return fmt("took %.1f s >= 60 s", elapsed);
    }
    return {};
}

std::string criterion_shapes() {
    Rng rng(4);
    const std::size_t n = 23;
    const WeightedGraph g = random_graph(n, rng, 0.3);
    auto bundle = std::make_shared<const LaplacianBundle>(normalized_laplacian(g));

    Rng init(5);
    StConvBlock block1({1, 16, 64}, 3, GraphConvVariant::chebyshev, 3, bundle, init);
    StConvBlock block2({64, 16, 64}, 3, GraphConvVariant::chebyshev, 3, bundle, init);
    Tensor window = Tensor::uniform({1, 12, n, 1}, rng, -1.0, 1.0);
    Tensor mid = block1.forward(window);
    if (mid.shape() != Shape{1, 8, n, 64}) {
        return "first block output is " + shape_str(mid.shape());
    }
    Tensor out = block2.forward(mid);
    if (out.shape() != Shape{1, 4, n, 64}) {
        return "second block output is " + shape_str(out.shape());
    }

    ModelConfig config; // the published configuration
    StgcnModel model(config, bundle, 6);
    Tensor pred = model.forward(Tensor::uniform({12, n, 1}, rng, -1.0, 1.0));
    if (pred.shape() != Shape{n, 1}) {
        return "model output is " + shape_str(pred.shape());
    }
    std::printf("    12 -> 8 -> 4 frames; prediction %zux1\n", n);
    return {};
}

std::string criterion_permutation_equivariance() {
    Rng rng(2025);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 4 + rng.below(3);
        const WeightedGraph g = random_graph(n, rng);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<double> pw(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                pw[perm[i] * n + perm[j]] = g.weights[i * n + j];
            }
        }
        const WeightedGraph gp = graph_from_adjacency(n, pw);

        ModelConfig config;
        config.blocks = {{1, 2, 4}, {4, 2, 4}};
        config.temporal_kernel = 2;
        config.cheb_order = 3;
        config.history = 8;
        StgcnModel model(config,
                         std::make_shared<const LaplacianBundle>(normalized_laplacian(g)),
                         17);
        StgcnModel model_p(config,
                           std::make_shared<const LaplacianBundle>(normalized_laplacian(gp)),
                           17);
        auto params = model.parameters();
        auto params_p = model_p.parameters();
        Rng param_rng(trial + 31);
        for (std::size_t t = 0; t < params.size(); ++t) {
            auto& src = params[t].tensor.raw_values();
            for (double& v : src) {
                v = param_rng.uniform(-0.4, 0.4);
            }
            auto& dst = params_p[t].tensor.raw_values();
            if (params[t].name.find("norm.") != std::string::npos) {
                const std::size_t channels = src.size() / n;
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t c = 0; c < channels; ++c) {
                        dst[perm[i] * channels + c] = src[i * channels + c];
                    }
                }
            } else {
                dst = src;
            }
        }

        std::vector<double> window(8 * n);
        for (double& v : window) {
            v = rng.uniform(-1.0, 1.0);
        }
        std::vector<double> window_p(window.size());
        for (std::size_t t = 0; t < 8; ++t) {
            for (std::size_t i = 0; i < n; ++i) {
                window_p[t * n + perm[i]] = window[t * n + i];
            }
        }
        NoGradGuard guard;
        Tensor out = model.forward(Tensor::from_values({8, n, 1}, window));
        Tensor out_p = model_p.forward(Tensor::from_values({8, n, 1}, window_p));
        for (std::size_t i = 0; i < n; ++i) {
            worst = std::max(worst,
                             std::abs(out_p.values()[perm[i]] - out.values()[i]));
        }
    }
    if (worst >= 1e-8) {
        return fmt("max |perm mismatch| %.3e >= 1e-8", worst);
    }
    std::printf("    max |perm mismatch| = %.3e over 5 models\n", worst);
    return {};
}

std::string criterion_synthetic_benchmark() {
    const auto start = Clock::now();
    SynthConfig synth; // n=20, 40 workdays, seed 42
    PipelineResult pipeline = prepare_synth_pipeline(synth, /*history=*/12, /*horizon=*/6,
                                                     {{1, 16, 32}, {32, 16, 32}});
    StgcnModel model(pipeline.model_config, pipeline.bundle, /*seed=*/42);

    TrainConfig cfg = pipeline.train_config;
    cfg.epochs = 20;
    cfg.batch_size = 50;
    cfg.seed = 42;
    const TrainResult result = train_model(model, pipeline.data, cfg);
    if (result.aborted) {
        return "training aborted on non-finite loss";
    }

    const std::vector<std::size_t> horizons{1, 3, 6};
    const auto model_reports =
        evaluate_model(model, pipeline.data.test, *pipeline.data.cleaned,
                       pipeline.data.stats, horizons, "stgcn_cheb");
    const HaProfile profile =
        build_ha_profile(*pipeline.data.cleaned, pipeline.data.train_rows);
    const auto ha_reports =
        evaluate_ha(profile, pipeline.data.test, *pipeline.data.cleaned, horizons);

    const double elapsed = seconds_since(start);
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        std::printf("    h=%zu (%d min): stgcn MAE %.4f vs HA MAE %.4f\n", horizons[i],
                    model_reports[i].horizon_minutes, model_reports[i].mae,
                    ha_reports[i].mae);
    }
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        if (!(model_reports[i].mae < ha_reports[i].mae)) {
            return fmt("h=%zu: stgcn MAE %.4f not below HA %.4f", horizons[i],
                       model_reports[i].mae, ha_reports[i].mae);
        }
    }
    std::printf("    trained 20 epochs + evaluated in %.1f s\n", elapsed);
    if (elapsed >= 600.0) {
        return fmt("took %.1f s >= 600 s", elapsed);
    }
    return {};
}

std::string criterion_overfit() {
    SynthConfig synth;
    synth.nodes = 4;
    synth.workdays = 2;
    synth.seed = 21;
    PipelineResult pipeline =
        prepare_synth_pipeline(synth, /*history=*/8, /*horizon=*/3, {{1, 2, 8}, {8, 2, 8}});
    pipeline.model_config.cheb_order = 2;
    pipeline.model_config.temporal_kernel = 2;
    pipeline.data.train.starts.resize(10);
    pipeline.data.val.starts.clear();

    StgcnModel model(pipeline.model_config, pipeline.bundle, 7);
    TrainConfig cfg;
    cfg.cheb_order = 2;
    cfg.temporal_kernel = 2;
    cfg.epochs = 500; // one full-batch step per epoch
    cfg.batch_size = 10;
    cfg.lr0 = 4e-2;
    cfg.lr_decay = 0.72;
    cfg.decay_every_epochs = 45;
    cfg.rmsprop_eps = 1e-10;
    cfg.seed = 3;
    const TrainResult result = train_model(model, pipeline.data, cfg);
    if (result.aborted || result.history.size() != 500) {
        return "training did not complete 500 steps";
    }
    const double initial = result.history.front().train_loss;
    double best = initial;
    for (const EpochStats& row : result.history) {
        best = std::min(best, row.train_loss);
    }
    std::printf("    loss %.4f -> %.6f (ratio %.2e) in 500 steps\n", initial, best,
                best / initial);
    if (!(best < 1e-3 * initial)) {
        return fmt("loss ratio %.3e not below 1e-3", best / initial);
    }
    return {};
}

// Trains the same tiny run twice and compares emitted bytes.
std::string criterion_determinism() {
    const fs::path dir = scratch_dir();
    auto run_once = [&](const std::string& tag) {
        SynthConfig synth;
        synth.nodes = 5;
        synth.workdays = 3;
        synth.seed = 11;
        PipelineResult pipeline = prepare_synth_pipeline(synth, /*history=*/8,
                                                         /*horizon=*/3,
                                                         {{1, 2, 6}, {6, 2, 6}});
        pipeline.model_config.cheb_order = 2;
        pipeline.model_config.temporal_kernel = 2;
        StgcnModel model(pipeline.model_config, pipeline.bundle, 13);
        TrainConfig cfg;
        cfg.cheb_order = 2;
        cfg.temporal_kernel = 2;
        cfg.epochs = 3;
        cfg.batch_size = 32;
        cfg.seed = 29;
        const TrainResult result = train_model(model, pipeline.data, cfg);
        const std::string history = (dir / ("history_" + tag + ".csv")).string();
        const std::string ckpt = (dir / ("ckpt_" + tag + ".stgc")).string();
        write_history_csv(history, result.history);
        save_checkpoint(ckpt, checkpoint_from_model(model, pipeline.data.stats,
                                                    pipeline.station_ids));
        return std::pair{history, ckpt};
    };
    const auto [history_a, ckpt_a] = run_once("a");
    const auto [history_b, ckpt_b] = run_once("b");
    if (slurp(history_a) != slurp(history_b)) {
        return "history CSVs differ between identical runs";
    }
    if (slurp(ckpt_a) != slurp(ckpt_b)) {
        return "checkpoints differ between identical runs";
    }
    std::printf("    identical history (%zu bytes) and checkpoint (%zu bytes)\n",
                slurp(history_a).size(), slurp(ckpt_a).size());
    return {};
}

std::string criterion_checkpoint_roundtrip() {
    Rng rng(88);
    const WeightedGraph g = random_graph(6, rng);
    auto bundle = std::make_shared<const LaplacianBundle>(normalized_laplacian(g));
    ModelConfig config;
    config.blocks = {{1, 2, 5}, {5, 2, 5}};
    config.temporal_kernel = 2;
    config.cheb_order = 2;
    config.history = 8;
    StgcnModel model(config, bundle, 23);

    const std::string path = (scratch_dir() / "roundtrip.stgc").string();
    save_checkpoint(path, checkpoint_from_model(model, {50.0, 5.0},
                                                {"a", "b", "c", "d", "e", "f"}));
    StgcnModel restored = model_from_checkpoint(load_checkpoint(path), bundle);

    NoGradGuard guard;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor window = Tensor::uniform({8, 6, 1}, rng, -1.0, 1.0);
        const auto a = model.forward(window).values();
        const auto b = restored.forward(window).values();
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] != b[i]) {
                return fmt("prediction differs at node %zu: %.17g vs %.17g", i, a[i], b[i]);
            }
        }
    }
    std::printf("    5 windows reproduced bitwise after save/load\n");
    return {};
}

std::string criterion_pems_format_pipeline() {
    const fs::path dir = scratch_dir() / "pems_format";
    fs::create_directories(dir);

    // A small dataset in the PeMSD7(M) file format: a speed CSV
    // (timestamp column plus one column per station at 5-minute steps,
    // weekdays) and a from/to/distance CSV.
    SynthConfig synth;
    synth.nodes = 8;
    synth.workdays = 5;
    synth.seed = 7;
    const SynthData generated = generate_synthetic(synth);
    const std::string speeds = (dir / "speeds.csv").string();
    const std::string distances = (dir / "distances.csv").string();
    write_speed_csv(speeds, generated.series);
    write_distance_csv(distances, generated.station_ids, generated.distances);

    // Published settings: M=12, H in {3,6,9}, channels 64-16-64, K=K_t=3,
    // RMSprop, 50 epochs, batch 50, lr 1e-3 decaying 0.7 every 5 epochs.
    const SpeedSeries raw = load_speed_csv(speeds);
    const DistanceFile dist_file = load_distance_csv(distances);
    AdjacencyConfig adjacency; // sigma^2 = 10, epsilon = 0.5
    const WeightedGraph graph =
        build_adjacency(remap_distances(dist_file, raw.station_ids),
                        raw.station_ids.size(), adjacency, raw.station_ids);
    auto bundle = std::make_shared<const LaplacianBundle>(normalized_laplacian(graph));
    SplitRatios ratios;
    DatasetBundle data = build_datasets(raw, 12, 9, ratios);

    TrainConfig cfg; // defaults are the published schedule
    ModelConfig model_config =
        model_config_from(cfg, GraphConvVariant::chebyshev, 12, graph.n);
    StgcnModel model(model_config, bundle, cfg.seed);
    const TrainResult result = train_model(model, data, cfg);
    if (result.aborted) {
        return "training aborted";
    }
    if (result.history.size() != 50) {
        return fmt("expected 50 epochs, got %zu", result.history.size());
    }

    const std::vector<std::size_t> horizons{3, 6, 9};
    auto reports = evaluate_model(model, data.test, *data.cleaned, data.stats, horizons,
                                  "stgcn_cheb");
    const HaProfile profile = build_ha_profile(*data.cleaned, data.train_rows);
    const auto ha = evaluate_ha(profile, data.test, *data.cleaned, horizons);
    reports.insert(reports.end(), ha.begin(), ha.end());
    const std::string metrics_path = (dir / "metrics.csv").string();
    write_metrics_csv(metrics_path, reports);

    const std::string metrics = slurp(metrics_path);
    if (metrics.rfind("horizon_minutes,model,mae,mape,rmse,n\n", 0) != 0) {
        return "metrics CSV schema mismatch";
    }
    for (const char* needle : {"\n15,stgcn_cheb,", "\n30,stgcn_cheb,", "\n45,stgcn_cheb,",
                               "\n15,ha,", "\n30,ha,", "\n45,ha,"}) {
        if (metrics.find(needle) == std::string::npos) {
            return fmt("metrics CSV missing row %s", needle);
        }
    }

    // Informational only: the published PeMSD7(M) MAE values. This fixture
    // is synthetic, so deviation is expected and not gating.
    const double published[3] = {2.25, 3.03, 3.57};
    for (std::size_t i = 0; i < 3; ++i) {
        const double deviation = 100.0 * (reports[i].mae - published[i]) / published[i];
        std::printf("    informational: h=%zu MAE %.3f vs published PeMSD7(M) %.2f "
                    "(%+.0f%%)\n",
                    horizons[i], reports[i].mae, published[i], deviation);
    }
    std::printf("    50-epoch run on PeMSD7(M)-format files completed; schema ok\n");
    return {};
}

std::string criterion_lr_schedule() {
    TrainConfig cfg; // lr0 1e-3, decay 0.7 every 5 epochs
    for (std::size_t epoch = 0; epoch < 50; ++epoch) {
        const double expected =
            1e-3 * std::pow(0.7, static_cast<double>(epoch / 5));
        const double got = lr_at_epoch(cfg, epoch);
        if (got != expected) {
            return fmt("epoch %zu: lr %.17g != %.17g", epoch, got, expected);
        }
    }
    std::printf("    lr(e) = 1e-3 * 0.7^floor(e/5) holds exactly for e in [0, 49]\n");
    return {};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* title;
        std::function<std::string()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "spectral oracle equivalence on 100 random graphs", criterion_spectral_oracle},
        {2, "finite-difference gradient checks for every layer", criterion_gradchecks},
        {3, "shape contract: 12 -> 8 -> 4 frames -> n x 1", criterion_shapes},
        {4, "full-model permutation equivariance", criterion_permutation_equivariance},
        {5, "synthetic benchmark: STGCN(Cheb) beats HA at h=1,3,6", criterion_synthetic_benchmark},
        {6, "ten-window overfit below 0.1% of initial loss", criterion_overfit},
        {7, "bitwise determinism of history and checkpoints", criterion_determinism},
        {8, "checkpoint round-trip reproduces predictions bitwise", criterion_checkpoint_roundtrip},
        {9, "PeMSD7(M)-format pipeline end-to-end at published settings", criterion_pems_format_pipeline},
        {10, "learning-rate staircase exact for epochs 0-49", criterion_lr_schedule},
    };

    int failures = 0;
    for (const Criterion& criterion : criteria) {
        std::string failure;
        try {
            failure = criterion.run();
        } catch (const std::exception& e) {
            failure = std::string("exception: ") + e.what();
        }
        if (failure.empty()) {
            std::printf("[PASS] criterion %2d: %s\n", criterion.id, criterion.title);
        } else {
            std::printf("[FAIL] criterion %2d: %s — %s\n", criterion.id, criterion.title,
                        failure.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures == 0 ? 0 : 1;
}
