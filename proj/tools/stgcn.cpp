// Command-line front end: graph building, training, evaluation, prediction,
// gradient self-checks and synthetic dataset generation.
//
// Exit codes: 0 success, 1 gradient check failure, 2 input error,
// 3 numeric error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stgcn/checkpoint.hpp"
#include "stgcn/data.hpp"
#include "stgcn/error.hpp"
#include "stgcn/evaluation.hpp"
#include "stgcn/format.hpp"
#include "stgcn/gradcheck.hpp"
#include "stgcn/graph.hpp"
#include "stgcn/manifest.hpp"
#include "stgcn/synth.hpp"
#include "stgcn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGradcheckFailed = 1;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

void ensure_output_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw stgcn::InputError("cannot create output dir '" + dir + "': " + ec.message());
    }
}

int cmd_build_graph(const std::string& manifest_path,
                    const std::vector<std::string>& overrides) {
    const stgcn::RunManifest manifest = stgcn::load_manifest(manifest_path, overrides);
    if (manifest.distance_csv.empty()) {
        throw stgcn::InputError("build-graph needs a distance_csv in the manifest");
    }
    const stgcn::DistanceFile distances = stgcn::load_distance_csv(manifest.distance_csv);
    const stgcn::WeightedGraph graph =
        stgcn::build_adjacency(distances.records, distances.station_ids.size(),
                               manifest.adjacency, distances.station_ids);
    const stgcn::LaplacianBundle bundle = stgcn::normalized_laplacian(graph);
    if (graph.edge_count() == 0) {
        std::cerr << "warning: adjacency has no edges (all kernel weights below epsilon)\n";
    }

    ensure_output_dir(manifest.output_dir);
    const std::string adjacency_path =
        (fs::path(manifest.output_dir) / "adjacency.csv").string();
    stgcn::write_adjacency_csv(adjacency_path, graph);

    json summary{{"n", graph.n},
                 {"edges", graph.edge_count()},
                 {"lambda_max", bundle.lambda_max}};
    const std::string summary_path =
        (fs::path(manifest.output_dir) / "graph_summary.json").string();
    std::ofstream out(summary_path);
    out << summary.dump(2) << '\n';

    std::cout << "graph: n=" << graph.n << " edges=" << graph.edge_count()
              << " lambda_max=" << stgcn::format_double(bundle.lambda_max) << '\n'
              << "wrote " << adjacency_path << " and " << summary_path << '\n';
    return kExitOk;
}

int cmd_train(const std::string& manifest_path, const std::vector<std::string>& overrides) {
    const stgcn::RunManifest manifest = stgcn::load_manifest(manifest_path, overrides);
    stgcn::PreparedRun run = stgcn::prepare_run(manifest);
    std::cout << "data: " << run.data.cleaned->stations() << " stations, "
              << run.data.cleaned->steps() << " rows | windows train/val/test = "
              << run.data.train.size() << "/" << run.data.val.size() << "/"
              << run.data.test.size() << '\n';

    stgcn::ModelConfig config = stgcn::model_config_from(
        manifest.train, manifest.variant, manifest.history, run.bundle->n);
    stgcn::StgcnModel model(config, run.bundle, manifest.train.seed);
    std::cout << "model: " << stgcn::to_string(manifest.variant) << ", "
              << model.parameter_count() << " parameters\n";

    const stgcn::TrainResult result =
        stgcn::train_model(model, run.data, manifest.train, [](const stgcn::EpochStats& s) {
            std::printf("epoch %3zu  loss %.6f  val_mae %.4f  val_rmse %.4f  lr %.2e\n",
                        s.epoch, s.train_loss, s.val_mae, s.val_rmse, s.lr);
        });
    if (result.aborted) {
        std::cerr << "training aborted on non-finite loss; keeping best checkpoint\n";
    }

    ensure_output_dir(manifest.output_dir);
    const std::string history_path =
        (fs::path(manifest.output_dir) / "history.csv").string();
    stgcn::write_history_csv(history_path, result.history);
    const std::string checkpoint_path =
        (fs::path(manifest.output_dir) / "checkpoint.stgc").string();
    stgcn::save_checkpoint(checkpoint_path,
                           stgcn::checkpoint_from_model(model, run.data.stats,
                                                        run.graph.node_ids));
    std::cout << "best epoch " << result.best_epoch << " (val MAE "
              << stgcn::format_double(result.best_val_mae) << ")\nwrote " << history_path
              << " and " << checkpoint_path << '\n';
    return result.aborted ? kExitNumeric : kExitOk;
}

int cmd_eval(const std::string& manifest_path, const std::string& checkpoint_path,
             const std::vector<std::string>& overrides) {
    const stgcn::RunManifest manifest = stgcn::load_manifest(manifest_path, overrides);
    stgcn::PreparedRun run = stgcn::prepare_run(manifest);
    const stgcn::Checkpoint checkpoint = stgcn::load_checkpoint(checkpoint_path);
    const stgcn::StgcnModel model = stgcn::model_from_checkpoint(checkpoint, run.bundle);

    std::vector<stgcn::MetricReport> reports = stgcn::evaluate_model(
        model, run.data.test, *run.data.cleaned, checkpoint.stats, manifest.horizons,
        "stgcn_" + stgcn::to_string(model.config().variant));
    const stgcn::HaProfile profile =
        stgcn::build_ha_profile(*run.data.cleaned, run.data.train_rows);
    const auto ha_reports =
        stgcn::evaluate_ha(profile, run.data.test, *run.data.cleaned, manifest.horizons);
    reports.insert(reports.end(), ha_reports.begin(), ha_reports.end());

    ensure_output_dir(manifest.output_dir);
    const std::string metrics_path =
        (fs::path(manifest.output_dir) / "metrics.csv").string();
    stgcn::write_metrics_csv(metrics_path, reports);
    stgcn::print_metrics_table(std::cout, reports);
    std::cout << "wrote " << metrics_path << '\n';
    return kExitOk;
}

int cmd_predict(const std::string& manifest_path, const std::string& checkpoint_path,
                const std::string& history_path, std::size_t horizon,
                const std::string& out_path, const std::vector<std::string>& overrides) {
    const stgcn::RunManifest manifest = stgcn::load_manifest(manifest_path, overrides);
    const stgcn::Checkpoint checkpoint = stgcn::load_checkpoint(checkpoint_path);

    stgcn::WeightedGraph graph;
    if (!manifest.distance_csv.empty()) {
        const stgcn::DistanceFile distances = stgcn::load_distance_csv(manifest.distance_csv);
        graph = stgcn::build_adjacency(
            stgcn::remap_distances(distances, checkpoint.station_ids),
            checkpoint.station_ids.size(), manifest.adjacency, checkpoint.station_ids);
    } else {
        graph = stgcn::load_adjacency_csv(manifest.adjacency_csv);
    }
    auto bundle = std::make_shared<const stgcn::LaplacianBundle>(
        stgcn::normalized_laplacian(graph));
    const stgcn::StgcnModel model = stgcn::model_from_checkpoint(checkpoint, bundle);

    stgcn::SpeedSeries window = stgcn::load_speed_csv(history_path);
    if (window.station_ids != checkpoint.station_ids) {
        throw stgcn::InputError("predict: station ids do not match the checkpoint");
    }
    if (window.steps() != model.config().history) {
        throw stgcn::InputError("predict: history file has " +
                                std::to_string(window.steps()) + " rows, model wants M=" +
                                std::to_string(model.config().history));
    }
    if (window.has_missing()) {
        window = stgcn::interpolate_missing(window);
    }

    // Normalize with the training statistics stored in the checkpoint.
    std::vector<double> normalized(window.values.size());
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        normalized[i] = checkpoint.stats.normalize(window.values[i]);
    }
    const auto forecast = stgcn::rollout_predict(model, normalized, horizon,
                                                 checkpoint.stats);

    stgcn::SpeedSeries out;
    out.station_ids = window.station_ids;
    out.interval_minutes = window.interval_minutes;
    const std::int64_t last_ts = window.timestamps.back();
    for (std::size_t h = 0; h < forecast.size(); ++h) {
        out.timestamps.push_back(last_ts +
                                 static_cast<std::int64_t>((h + 1)) *
                                     window.interval_minutes);
        out.values.insert(out.values.end(), forecast[h].begin(), forecast[h].end());
    }
    stgcn::write_speed_csv(out_path, out);
    std::cout << "wrote " << out_path << '\n';
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
    const auto results = stgcn::run_layer_gradchecks(seed, tolerance);
    bool all_pass = true;
    for (const stgcn::GradCheckEntry& entry : results) {
        std::printf("%-28s max_rel_err %.3e  %s\n", entry.name.c_str(), entry.max_rel_err,
                    entry.pass ? "PASS" : "FAIL");
        all_pass = all_pass && entry.pass;
    }
    std::cout << (all_pass ? "PASS" : "FAIL") << '\n';
    return all_pass ? kExitOk : kExitGradcheckFailed;
}

int cmd_synth(const stgcn::SynthConfig& cfg, const std::string& out_dir) {
    const stgcn::SynthData data = stgcn::generate_synthetic(cfg);
    ensure_output_dir(out_dir);
    const fs::path dir(out_dir);
    stgcn::write_speed_csv((dir / "speeds.csv").string(), data.series);
    stgcn::write_distance_csv((dir / "distances.csv").string(), data.station_ids,
                              data.distances);

    // Desk-scale defaults: horizons 1/3/6 against the HA baseline, and a
    // narrower 32-channel network that trains in minutes on a laptop CPU.
    json manifest{
        {"speed_csv", "speeds.csv"},
        {"distance_csv", "distances.csv"},
        {"output_dir", "run"},
        {"variant", "cheb"},
        {"M", 12},
        {"horizons", {1, 3, 6}},
        {"split", {0.6, 0.2, 0.2}},
        {"adjacency", {{"sigma_sq", cfg.sigma_sq}, {"epsilon", cfg.epsilon}}},
        {"workdays_only", true},
        {"interval_minutes", cfg.interval_minutes},
        {"train",
         {{"epochs", 20},
          {"batch_size", 50},
          {"lr0", 1e-3},
          {"lr_decay", 0.7},
          {"decay_every_epochs", 5},
          {"rmsprop_rho", 0.9},
          {"rmsprop_eps", 1e-8},
          {"seed", cfg.seed},
          {"K", 3},
          {"K_t", 3},
          {"blocks", {{1, 16, 32}, {32, 16, 32}}}}},
        {"synth",
         {{"nodes", cfg.nodes},
          {"workdays", cfg.workdays},
          {"seed", cfg.seed},
          {"interval_minutes", cfg.interval_minutes},
          {"area", cfg.area},
          {"distance_cutoff", cfg.distance_cutoff},
          {"base_speed", cfg.base_speed},
          {"daily_amplitude", cfg.daily_amplitude},
          {"diffusion", cfg.diffusion},
          {"state_decay", cfg.state_decay},
          {"drive_std", cfg.drive_std},
          {"noise_rel", cfg.noise_rel},
          {"start_date", cfg.start_date}}}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';

    std::cout << "wrote " << (dir / "speeds.csv").string() << " ("
              << data.series.steps() << " rows x " << data.series.stations()
              << " stations), " << (dir / "distances.csv").string() << ", "
              << (dir / "manifest.json").string() << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatio-temporal graph convolutional traffic forecaster"};
    app.require_subcommand(1);

    std::string manifest_path;
    std::string checkpoint_path;
    std::string history_path;
    std::string out_path = "forecast.csv";
    std::string synth_dir = "synth";
    std::size_t horizon = 3;
    std::uint64_t gradcheck_seed = 7;
    double gradcheck_tol = 1e-4;
    std::vector<std::string> overrides;
    stgcn::SynthConfig synth_cfg;

    auto add_manifest = [&](CLI::App* cmd) {
        cmd->add_option("--manifest", manifest_path, "Run manifest (JSON)")->required();
        cmd->add_option("--set", overrides, "Override manifest entries, key=value");
    };

    CLI::App* build = app.add_subcommand("build-graph", "Distance file -> adjacency artifacts");
    add_manifest(build);

    CLI::App* train = app.add_subcommand("train", "Train a model per the manifest");
    add_manifest(train);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    add_manifest(eval);
    eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();

    CLI::App* predict = app.add_subcommand("predict", "Forecast from a history window");
    add_manifest(predict);
    predict->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    predict->add_option("--history", history_path, "Speed CSV with exactly M rows")
        ->required();
    predict->add_option("--horizon", horizon, "Steps to forecast");
    predict->add_option("--out", out_path, "Output forecast CSV");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference layer checks");
    gradcheck->add_option("--seed", gradcheck_seed, "Random seed");
    gradcheck->add_option("--tol", gradcheck_tol, "Relative error tolerance");

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--nodes", synth_cfg.nodes, "Station count");
    synth->add_option("--days", synth_cfg.workdays, "Workdays to generate");
    synth->add_option("--seed", synth_cfg.seed, "Random seed");
    synth->add_option("--out", synth_dir, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help
        }
        app.exit(e);
        return kExitInput;
    }

    try {
        if (build->parsed()) {
            return cmd_build_graph(manifest_path, overrides);
        }
        if (train->parsed()) {
            return cmd_train(manifest_path, overrides);
        }
        if (eval->parsed()) {
            return cmd_eval(manifest_path, checkpoint_path, overrides);
        }
        if (predict->parsed()) {
            return cmd_predict(manifest_path, checkpoint_path, history_path, horizon,
                               out_path, overrides);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(gradcheck_seed, gradcheck_tol);
        }
        if (synth->parsed()) {
            return cmd_synth(synth_cfg, synth_dir);
        }
    } catch (const stgcn::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const stgcn::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    }
    return kExitOk;
}
