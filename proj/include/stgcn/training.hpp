#ifndef STGCN_TRAINING_HPP
#define STGCN_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stgcn/data.hpp"
#include "stgcn/layers.hpp"

namespace stgcn {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 50;
    double lr0 = 1e-3;
    double lr_decay = 0.7;
    std::size_t decay_every_epochs = 5;
    double rmsprop_rho = 0.9;
    double rmsprop_eps = 1e-8;
    std::uint64_t seed = 42;
    std::size_t cheb_order = 3;      // K
    std::size_t temporal_kernel = 3; // K_t
    std::vector<BlockChannels> blocks = {{1, 16, 64}, {64, 16, 64}};

    void validate() const;
};

/// Architecture implied by a training config on a given graph.
ModelConfig model_config_from(const TrainConfig& cfg, GraphConvVariant variant,
                              std::size_t history, std::size_t nodes);

/// lr0 * decay^floor(epoch / decay_every).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

/// Sum of squared errors over all entries (matches the training objective;
/// the loop scales the gradient by 1/batch before stepping).
Tensor l2_loss(const Tensor& pred, const Tensor& truth);

/// RMSprop over a fixed parameter list:
///   s <- rho * s + (1 - rho) * g^2
///   theta <- theta - lr * g / sqrt(s + eps)
class RmsProp {
public:
    RmsProp(std::vector<NamedParam> params, double rho, double eps);

    /// Applies one update from the parameters' accumulated gradients.
    /// Throws NumericError (leaving parameters untouched) on non-finite
    /// gradients.
    void step(double lr);

    const std::vector<std::vector<double>>& accumulators() const { return accum_; }

private:
    std::vector<NamedParam> params_;
    std::vector<std::vector<double>> accum_;
    double rho_;
    double eps_;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0; // mean squared-error sum per window
    double val_mae = 0.0;
    double val_rmse = 0.0;
    double lr = 0.0;
};

struct ParamSnapshot {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;
};

ParamSnapshot snapshot_params(const StgcnModel& model);
void restore_params(StgcnModel& model, const ParamSnapshot& snapshot);

struct TrainResult {
    std::vector<EpochStats> history;
    ParamSnapshot best_params;
    double best_val_mae = 0.0;
    std::size_t best_epoch = 0;
    bool aborted = false; // non-finite loss or gradient; best params kept
};

/// Seeded mini-batch training with per-epoch reshuffling and the staircase
/// learning-rate schedule. Validation MAE/RMSE at horizon 1 selects the
/// checkpoint. The model is left holding the best parameters.
TrainResult train_model(StgcnModel& model, const DatasetBundle& data,
                        const TrainConfig& cfg,
                        const std::function<void(const EpochStats&)>& on_epoch = {});

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

/// Iterative multi-horizon forecast: step 1 is a plain forward pass; later
/// steps append the prediction and drop the oldest frame. The history is
/// normalized [M, n]; the returned [H, n] rows are denormalized.
std::vector<std::vector<double>> rollout_predict(const StgcnModel& model,
                                                 std::span<const double> history,
                                                 std::size_t horizon,
                                                 const ZScoreStats& stats);

/// Rollout over an arbitrary one-step predictor (normalized in/out).
std::vector<std::vector<double>> rollout_with(
    const std::function<std::vector<double>(std::span<const double>, std::size_t,
                                            std::size_t)>& predict_one,
    std::span<const double> history, std::size_t history_len, std::size_t nodes,
    std::size_t horizon, const ZScoreStats& stats);

} // namespace stgcn

#endif
