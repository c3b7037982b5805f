#include "stgcn/gradcheck.hpp"

#include <cmath>
#include <memory>

#include "stgcn/graph.hpp"
#include "stgcn/layers.hpp"

namespace stgcn {

double fd_max_rel_error(const std::function<Tensor()>& loss_fn, Tensor param, Rng& rng,
                        std::size_t samples, double step) {
    param.zero_grad();
    {
        Tensor loss = loss_fn();
        backward(loss);
    }
    const std::vector<double> analytic(param.grad().begin(), param.grad().end());

    const std::size_t count = std::min(samples, param.size());
    double worst = 0.0;
    for (std::size_t s = 0; s < count; ++s) {
        const std::size_t index =
            count == param.size() ? s : static_cast<std::size_t>(rng.below(param.size()));
        std::vector<double>& values = param.raw_values();
        const double saved = values[index];

        values[index] = saved + step;
        double plus;
        {
            NoGradGuard guard;
            plus = loss_fn().value();
        }
        values[index] = saved - step;
        double minus;
        {
            NoGradGuard guard;
            minus = loss_fn().value();
        }
        values[index] = saved;

        const double numeric = (plus - minus) / (2.0 * step);
        const double a = analytic[index];
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), 1e-3});
        worst = std::max(worst, rel);
    }
    return worst;
}

namespace {

// Small random graph shared by the layer checks.
std::shared_ptr<const LaplacianBundle> random_bundle(std::size_t n, Rng& rng) {
    std::vector<DistanceRecord> records;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (rng.uniform() < 0.6) {
                const double d = rng.uniform(0.2, 2.2);
                records.push_back({i, j, d});
                records.push_back({j, i, d});
            }
        }
    }
    AdjacencyConfig cfg;
    cfg.sigma_sq = 10.0;
    cfg.epsilon = 0.3;
    const WeightedGraph g = build_adjacency(records, n, cfg);
    return std::make_shared<const LaplacianBundle>(normalized_laplacian(g));
}

Tensor squared_sum(const Tensor& t) {
    return sum(mul(t, t));
}

struct Check {
    std::string name;
    std::function<Tensor()> loss_fn;
    std::vector<Tensor> tensors; // parameters plus the tracked input
};

double run_check(const Check& check, Rng& rng) {
    double worst = 0.0;
    for (const Tensor& t : check.tensors) {
        worst = std::max(worst, fd_max_rel_error(check.loss_fn, t, rng));
    }
    return worst;
}

} // namespace

std::vector<GradCheckEntry> run_layer_gradchecks(std::uint64_t seed, double tolerance) {
    Rng rng(seed);
    std::vector<GradCheckEntry> results;

    auto record = [&](const std::string& name, double err) {
        results.push_back({name, err, err < tolerance});
    };

    const auto bundle = random_bundle(5, rng);
    const std::size_t n = bundle->n;

    {
        Rng init(seed ^ 0x11);
        GraphConvLayer layer(GraphConvVariant::chebyshev, 3, 2, 3, bundle, init);
        Tensor x = Tensor::uniform({2, 2, n, 2}, init, -1.0, 1.0, true);
        Check check{"graph_conv_cheb",
                    [&layer, x]() { return squared_sum(layer.forward(x)); },
                    {layer.theta, x}};
        record(check.name, run_check(check, rng));
    }
    {
        Rng init(seed ^ 0x12);
        GraphConvLayer layer(GraphConvVariant::first_order, 1, 2, 3, bundle, init);
        Tensor x = Tensor::uniform({2, 2, n, 2}, init, -1.0, 1.0, true);
        Check check{"graph_conv_first_order",
                    [&layer, x]() { return squared_sum(layer.forward(x)); },
                    {layer.theta, x}};
        record(check.name, run_check(check, rng));
    }
    {
        Rng init(seed ^ 0x13);
        TemporalConvLayer layer(3, 2, 4, init); // projection path
        Tensor x = Tensor::uniform({2, 6, n, 2}, init, -1.0, 1.0, true);
        Check check{"temporal_conv_projected",
                    [&layer, x]() { return squared_sum(layer.forward(x)); },
                    {layer.kernel, layer.projection, x}};
        record(check.name, run_check(check, rng));
    }
    {
        Rng init(seed ^ 0x14);
        TemporalConvLayer layer(2, 3, 3, init); // identity residual path
        Tensor x = Tensor::uniform({2, 5, n, 3}, init, -1.0, 1.0, true);
        Check check{"temporal_conv_identity",
                    [&layer, x]() { return squared_sum(layer.forward(x)); },
                    {layer.kernel, x}};
        record(check.name, run_check(check, rng));
    }
    {
        Rng init(seed ^ 0x15);
        Tensor x = Tensor::uniform({2, 3, n, 3}, init, -1.0, 1.0, true);
        Tensor gain = Tensor::uniform({n, 3}, init, 0.5, 1.5, true);
        Tensor bias = Tensor::uniform({n, 3}, init, -0.5, 0.5, true);
        Check check{"layer_norm",
                    [x, gain, bias]() {
                        return squared_sum(layer_norm_frames(x, gain, bias, 1e-6));
                    },
                    {x, gain, bias}};
        record(check.name, run_check(check, rng));
    }
    {
        Rng init(seed ^ 0x16);
        StConvBlock block({2, 2, 3}, 2, GraphConvVariant::chebyshev, 2, bundle, init);
        Tensor x = Tensor::uniform({2, 6, n, 2}, init, -1.0, 1.0, true);
        Check check{"st_conv_block",
                    [&block, x]() { return squared_sum(block.forward(x)); },
                    {block.temporal_lower.kernel, block.temporal_lower.projection,
                     block.spatial.theta, block.temporal_upper.kernel, block.norm_gain,
                     block.norm_bias, x}};
        record(check.name, run_check(check, rng));
    }
    {
        Rng init(seed ^ 0x17);
        OutputHead head(3, 4, init);
        Tensor x = Tensor::uniform({2, 3, n, 4}, init, -1.0, 1.0, true);
        Check check{"output_head",
                    [&head, x]() { return squared_sum(head.forward(x)); },
                    {head.collapse.kernel, head.w, head.b, x}};
        record(check.name, run_check(check, rng));
    }
    {
        Rng init(seed ^ 0x18);
        ModelConfig config;
        config.variant = GraphConvVariant::chebyshev;
        config.cheb_order = 2;
        config.temporal_kernel = 2;
        config.history = 8;
        config.blocks = {{1, 2, 3}, {3, 2, 3}};
        StgcnModel model(config, bundle, seed ^ 0x18);
        Tensor x = Tensor::uniform({2, 8, n, 1}, init, -1.0, 1.0, true);
        Check check{"full_model",
                    [&model, x]() { return squared_sum(model.forward_batch(x)); }, {}};
        for (NamedParam& p : model.parameters()) {
            check.tensors.push_back(p.tensor);
        }
        check.tensors.push_back(x);
        record(check.name, run_check(check, rng));
    }
    return results;
}

} // namespace stgcn
