#include "stgcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "stgcn/error.hpp"
#include "stgcn/format.hpp"

namespace stgcn {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) {
        throw InputError("train: initial learning rate must be positive");
    }
    if (!(lr_decay > 0.0) || lr_decay > 1.0) {
        throw InputError("train: lr decay must lie in (0, 1]");
    }
    if (batch_size == 0) {
        throw InputError("train: batch size must be >= 1");
    }
    if (decay_every_epochs == 0) {
        throw InputError("train: decay interval must be >= 1");
    }
}

ModelConfig model_config_from(const TrainConfig& cfg, GraphConvVariant variant,
                              std::size_t history, std::size_t nodes) {
    ModelConfig config;
    config.variant = variant;
    config.cheb_order = cfg.cheb_order;
    config.temporal_kernel = cfg.temporal_kernel;
    config.history = history;
    config.nodes = nodes;
    config.blocks = cfg.blocks;
    return config;
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    const double steps = static_cast<double>(epoch / cfg.decay_every_epochs);
    return cfg.lr0 * std::pow(cfg.lr_decay, steps);
}

Tensor l2_loss(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape()) {
        throw DimensionError("l2_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(truth.shape()));
    }
    Tensor diff = sub(pred, truth);
    return sum(mul(diff, diff));
}

RmsProp::RmsProp(std::vector<NamedParam> params, double rho, double eps)
    : params_(std::move(params)), rho_(rho), eps_(eps) {
    accum_.reserve(params_.size());
    for (const NamedParam& p : params_) {
        accum_.emplace_back(p.tensor.size(), 0.0);
    }
}

void RmsProp::step(double lr) {
    // Validate all gradients before mutating anything.
    for (const NamedParam& p : params_) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("rmsprop: non-finite gradient in '" + p.name +
                                   "'; step aborted");
            }
        }
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        NamedParam& p = params_[i];
        if (!p.tensor.has_grad()) {
            continue;
        }
        std::span<const double> grad = p.tensor.grad();
        std::vector<double>& s = accum_[i];
        std::vector<double>& theta = p.tensor.raw_values();
        for (std::size_t j = 0; j < grad.size(); ++j) {
            const double g = grad[j];
            s[j] = rho_ * s[j] + (1.0 - rho_) * g * g;
            theta[j] -= lr * g / std::sqrt(s[j] + eps_);
        }
    }
}

ParamSnapshot snapshot_params(const StgcnModel& model) {
    ParamSnapshot snap;
    for (const NamedParam& p : model.parameters()) {
        snap.names.push_back(p.name);
        const auto v = p.tensor.values();
        snap.values.emplace_back(v.begin(), v.end());
    }
    return snap;
}

void restore_params(StgcnModel& model, const ParamSnapshot& snapshot) {
    auto params = model.parameters();
    if (params.size() != snapshot.values.size()) {
        throw ContractError("restore: snapshot has " + std::to_string(snapshot.values.size()) +
                            " tensors, model has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != snapshot.names[i] ||
            params[i].tensor.size() != snapshot.values[i].size()) {
            throw ContractError("restore: parameter '" + snapshot.names[i] +
                                "' does not match the model");
        }
        std::vector<double>& dst = params[i].tensor.raw_values();
        std::copy(snapshot.values[i].begin(), snapshot.values[i].end(), dst.begin());
    }
}

namespace {

struct ValScore {
    double mae = 0.0;
    double rmse = 0.0;
};

// Horizon-1 validation error in original units.
ValScore validate_h1(const StgcnModel& model, const WindowedDataset& val,
                     const ZScoreStats& stats, std::size_t batch_size) {
    NoGradGuard guard;
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> indices(val.size());
    std::iota(indices.begin(), indices.end(), 0);
    for (std::size_t begin = 0; begin < indices.size(); begin += batch_size) {
        const std::size_t end = std::min(indices.size(), begin + batch_size);
        std::span<const std::size_t> chunk(indices.data() + begin, end - begin);
        Tensor pred = model.forward_batch(history_batch(val, chunk));
        Tensor truth = target_batch(val, chunk, 1);
        const auto pv = pred.values();
        const auto tv = truth.values();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double err = stats.denormalize(pv[i]) - stats.denormalize(tv[i]);
            abs_sum += std::abs(err);
            sq_sum += err * err;
        }
        count += pv.size();
    }
    ValScore score;
    if (count > 0) {
        score.mae = abs_sum / static_cast<double>(count);
        score.rmse = std::sqrt(sq_sum / static_cast<double>(count));
    }
    return score;
}

} // namespace

TrainResult train_model(StgcnModel& model, const DatasetBundle& data, const TrainConfig& cfg,
                        const std::function<void(const EpochStats&)>& on_epoch) {
    tune_allocator();
    cfg.validate();
    if (data.train.size() == 0) {
        throw InputError("train: empty training dataset");
    }

    RmsProp optimizer(model.parameters(), cfg.rmsprop_rho, cfg.rmsprop_eps);
    Rng shuffle_rng(cfg.seed);

    TrainResult result;
    result.best_params = snapshot_params(model);
    result.best_val_mae = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        Rng epoch_rng = shuffle_rng.fork(epoch);
        epoch_rng.shuffle(order);

        double epoch_sq_sum = 0.0;
        bool blew_up = false;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + begin, end - begin);

            model.zero_grads();
            Tensor pred = model.forward_batch(history_batch(data.train, batch));
            Tensor truth = target_batch(data.train, batch, 1);
            Tensor loss_sum = l2_loss(pred, truth);
            const double batch_loss = loss_sum.value();
            if (!std::isfinite(batch_loss)) {
                blew_up = true;
                break;
            }
            epoch_sq_sum += batch_loss;
            // Gradient of the per-window mean keeps lr meaningful across
            // batch sizes; the reported loss keeps the summed form.
            Tensor loss_mean = scale(loss_sum, 1.0 / static_cast<double>(batch.size()));
            backward(loss_mean);
            try {
                optimizer.step(lr);
            } catch (const NumericError&) {
                blew_up = true;
                break;
            }
        }
        if (blew_up) {
            result.aborted = true;
            break;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_sq_sum / static_cast<double>(order.size());
        stats.lr = lr;
        if (data.val.size() > 0) {
            const ValScore score = validate_h1(model, data.val, data.stats, cfg.batch_size);
            stats.val_mae = score.mae;
            stats.val_rmse = score.rmse;
            if (score.mae < result.best_val_mae) {
                result.best_val_mae = score.mae;
                result.best_epoch = epoch;
                result.best_params = snapshot_params(model);
            }
        } else {
            // No validation data: keep the latest parameters.
            result.best_epoch = epoch;
            result.best_params = snapshot_params(model);
        }
        result.history.push_back(stats);
        if (on_epoch) {
            on_epoch(stats);
        }
    }

    restore_params(model, result.best_params);
    return result;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write file: " + path);
    }
    out << "epoch,train_loss,val_mae,val_rmse,lr\n";
    for (const EpochStats& row : history) {
        out << row.epoch << ',' << format_double(row.train_loss) << ','
            << format_double(row.val_mae) << ',' << format_double(row.val_rmse) << ','
            << format_double(row.lr) << '\n';
    }
}

std::vector<std::vector<double>> rollout_with(
    const std::function<std::vector<double>(std::span<const double>, std::size_t,
                                            std::size_t)>& predict_one,
    std::span<const double> history, std::size_t history_len, std::size_t nodes,
    std::size_t horizon, const ZScoreStats& stats) {
    if (horizon == 0) {
        throw ContractError("rollout: horizon must be >= 1");
    }
    if (history.size() != history_len * nodes) {
        throw DimensionError("rollout: history buffer is not M x n");
    }
    std::vector<double> window(history.begin(), history.end());
    std::vector<std::vector<double>> out;
    out.reserve(horizon);
    for (std::size_t h = 0; h < horizon; ++h) {
        std::vector<double> next = predict_one(window, history_len, nodes);
        if (next.size() != nodes) {
            throw DimensionError("rollout: predictor returned " + std::to_string(next.size()) +
                                 " values for " + std::to_string(nodes) + " nodes");
        }
        std::vector<double> denorm(nodes);
        for (std::size_t i = 0; i < nodes; ++i) {
            denorm[i] = stats.denormalize(next[i]);
        }
        out.push_back(std::move(denorm));
        // Slide: drop the oldest frame, append the normalized prediction.
        std::copy(window.begin() + static_cast<std::ptrdiff_t>(nodes), window.end(),
                  window.begin());
        std::copy(next.begin(), next.end(), window.end() - static_cast<std::ptrdiff_t>(nodes));
    }
    return out;
}

std::vector<std::vector<double>> rollout_predict(const StgcnModel& model,
                                                 std::span<const double> history,
                                                 std::size_t horizon,
                                                 const ZScoreStats& stats) {
    const std::size_t m = model.config().history;
    const std::size_t n = model.config().nodes;
    auto predict_one = [&model](std::span<const double> window, std::size_t history_len,
                                std::size_t nodes) {
        NoGradGuard guard;
        Tensor input = Tensor::from_values({history_len, nodes, 1},
                                           std::vector<double>(window.begin(), window.end()));
        Tensor pred = model.forward(input);
        const auto pv = pred.values();
        return std::vector<double>(pv.begin(), pv.end());
    };
    return rollout_with(predict_one, history, m, n, horizon, stats);
}

} // namespace stgcn
