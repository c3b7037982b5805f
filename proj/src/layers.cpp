#include "stgcn/layers.hpp"

#include <cmath>

#include "stgcn/error.hpp"

namespace stgcn {

std::string to_string(GraphConvVariant variant) {
    return variant == GraphConvVariant::chebyshev ? "cheb" : "first_order";
}

GraphConvVariant graph_conv_variant_from_string(const std::string& name) {
    if (name == "cheb" || name == "chebyshev") {
        return GraphConvVariant::chebyshev;
    }
    if (name == "first_order" || name == "first") {
        return GraphConvVariant::first_order;
    }
    throw InputError("unknown graph conv variant '" + name + "' (want cheb | first_order)");
}

std::size_t ModelConfig::remaining_frames() const {
    const std::size_t shrink_per_block = 2 * (temporal_kernel - 1);
    const std::size_t total = blocks.size() * shrink_per_block;
    if (history <= total) {
        return 0;
    }
    return history - total;
}

void ModelConfig::validate() const {
    if (nodes == 0) {
        throw InputError("model: node count must be positive");
    }
    if (temporal_kernel == 0 || cheb_order == 0) {
        throw InputError("model: kernel sizes must be >= 1");
    }
    if (blocks.empty()) {
        throw InputError("model: at least one ST-Conv block required");
    }
    if (blocks.front().c_in != 1) {
        throw InputError("model: first block must accept 1 input channel, got " +
                         std::to_string(blocks.front().c_in));
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const BlockChannels& bc = blocks[i];
        if (bc.c_in == 0 || bc.c_mid == 0 || bc.c_out == 0) {
            throw InputError("model: zero channel width in block " + std::to_string(i));
        }
        if (i + 1 < blocks.size() && blocks[i + 1].c_in != bc.c_out) {
            throw InputError("model: block " + std::to_string(i + 1) + " expects " +
                             std::to_string(blocks[i + 1].c_in) + " channels but block " +
                             std::to_string(i) + " emits " + std::to_string(bc.c_out));
        }
    }
    if (remaining_frames() == 0) {
        throw InputError("model: history M=" + std::to_string(history) +
                         " too short for " + std::to_string(blocks.size()) +
                         " blocks with K_t=" + std::to_string(temporal_kernel));
    }
}

namespace {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::uniform(std::move(shape), rng, -bound, bound, /*requires_grad=*/true);
}

} // namespace

// ----- GraphConvLayer -----

GraphConvLayer::GraphConvLayer(GraphConvVariant variant, std::size_t order,
                               std::size_t c_in, std::size_t c_out,
                               std::shared_ptr<const LaplacianBundle> bundle, Rng& rng)
    : variant_(variant),
      order_(variant == GraphConvVariant::first_order ? 1 : order),
      c_in_(c_in),
      c_out_(c_out),
      bundle_(std::move(bundle)) {
    if (order_ == 0) {
        throw InputError("graph conv: K must be >= 1");
    }
    theta = glorot_uniform({order_, c_in_, c_out_}, order_ * c_in_, c_out_, rng);
}

Tensor GraphConvLayer::forward(const Tensor& x) const {
    if (x.rank() != 4) {
        throw DimensionError("graph conv: expected [B,T,n,C], got " + shape_str(x.shape()));
    }
    if (x.extent(2) != bundle_->n) {
        throw DimensionError("graph conv: input has " + std::to_string(x.extent(2)) +
                             " nodes, graph has " + std::to_string(bundle_->n));
    }
    if (x.extent(3) != c_in_) {
        throw DimensionError("graph conv: input has " + std::to_string(x.extent(3)) +
                             " channels, layer expects " + std::to_string(c_in_));
    }
    Tensor basis = variant_ == GraphConvVariant::chebyshev
                       ? cheb_basis(x, bundle_->scaled_laplacian, order_)
                       : propagate(x, bundle_->propagation);
    return contract_last(basis, theta);
}

// ----- TemporalConvLayer -----

TemporalConvLayer::TemporalConvLayer(std::size_t kernel_width, std::size_t c_in,
                                     std::size_t c_out, Rng& rng)
    : kernel_width_(kernel_width), c_in_(c_in), c_out_(c_out) {
    if (kernel_width_ == 0) {
        throw InputError("temporal conv: K_t must be >= 1");
    }
    kernel = glorot_uniform({kernel_width_, c_in_, 2 * c_out_}, kernel_width_ * c_in_,
                            2 * c_out_, rng);
    if (c_in_ != c_out_) {
        projection = glorot_uniform({c_in_, c_out_}, c_in_, c_out_, rng);
    }
}

Tensor TemporalConvLayer::forward(const Tensor& y) const {
    if (y.rank() != 4) {
        throw DimensionError("temporal conv: expected [B,T,n,C], got " + shape_str(y.shape()));
    }
    const std::size_t frames = y.extent(1);
    if (y.extent(3) != c_in_) {
        throw DimensionError("temporal conv: input has " + std::to_string(y.extent(3)) +
                             " channels, layer expects " + std::to_string(c_in_));
    }
    if (frames < kernel_width_) {
        throw DimensionError("temporal conv: sequence length M=" + std::to_string(frames) +
                             " shorter than kernel K_t=" + std::to_string(kernel_width_));
    }
    const std::size_t out_frames = frames - kernel_width_ + 1;

    Tensor windows = unfold_time(y, kernel_width_); // [B,To,n,Kt*Ci]
    Tensor gates = contract_last(windows, kernel);  // [B,To,n,2Co]
    Tensor linear = slice_last(gates, 0, c_out_);
    Tensor gate = slice_last(gates, c_out_, c_out_);

    // Residual: align the input with the output frames (each output frame
    // pairs with the newest frame of its window).
    Tensor residual = slice_time(y, frames - out_frames, out_frames);
    if (projection.defined()) {
        residual = contract_last(residual, projection);
    }

    return mul(add(linear, residual), sigmoid(gate));
}

// ----- StConvBlock -----

StConvBlock::StConvBlock(const BlockChannels& channels, std::size_t temporal_kernel,
                         GraphConvVariant variant, std::size_t cheb_order,
                         std::shared_ptr<const LaplacianBundle> bundle, Rng& rng)
    : temporal_lower(temporal_kernel, channels.c_in, channels.c_out, rng),
      spatial(variant, cheb_order, channels.c_out, channels.c_mid, bundle, rng),
      temporal_upper(temporal_kernel, channels.c_mid, channels.c_out, rng),
      norm_eps(1e-6) {
    const std::size_t n = bundle->n;
    norm_gain = Tensor::constant({n, channels.c_out}, 1.0, /*requires_grad=*/true);
    norm_bias = Tensor::zeros({n, channels.c_out}, /*requires_grad=*/true);
}

Tensor StConvBlock::forward(const Tensor& v) const {
    Tensor lower = temporal_lower.forward(v);
    Tensor spatial_out = relu(spatial.forward(lower));
    Tensor upper = temporal_upper.forward(spatial_out);
    return layer_norm_frames(upper, norm_gain, norm_bias, norm_eps);
}

// ----- OutputHead -----

OutputHead::OutputHead(std::size_t remaining_frames, std::size_t channels, Rng& rng)
    : collapse(remaining_frames, channels, channels, rng) {
    w = glorot_uniform({channels, 1}, channels, 1, rng);
    b = Tensor::zeros({1}, /*requires_grad=*/true);
}

Tensor OutputHead::forward(const Tensor& z) const {
    if (z.extent(1) != collapse.kernel_width()) {
        throw DimensionError("output head: expected " +
                             std::to_string(collapse.kernel_width()) + " frames, got " +
                             std::to_string(z.extent(1)));
    }
    const std::size_t batch = z.extent(0);
    const std::size_t n = z.extent(2);
    Tensor collapsed = collapse.forward(z); // [B,1,n,c]
    Tensor pred = add(contract_last(collapsed, w), b); // [B,1,n,1]
    return reshape(pred, {batch, n, 1});
}

// ----- StgcnModel -----

StgcnModel::StgcnModel(ModelConfig config, std::shared_ptr<const LaplacianBundle> bundle,
                       std::uint64_t seed)
    : config_(std::move(config)), bundle_(std::move(bundle)) {
    if (config_.variant == GraphConvVariant::first_order) {
        config_.cheb_order = 1;
    }
    if (!bundle_) {
        throw ContractError("model: null Laplacian bundle");
    }
    config_.nodes = bundle_->n;
    config_.validate();

    Rng rng(seed);
    blocks_.reserve(config_.blocks.size());
    for (const BlockChannels& bc : config_.blocks) {
        blocks_.emplace_back(bc, config_.temporal_kernel, config_.variant,
                             config_.cheb_order, bundle_, rng);
        blocks_.back().norm_eps = config_.norm_eps;
    }
    head_ = std::make_unique<OutputHead>(config_.remaining_frames(),
                                         config_.blocks.back().c_out, rng);
}

Tensor StgcnModel::forward(const Tensor& window) const {
    if (window.rank() != 3) {
        throw DimensionError("model: expected [M,n,1] window, got " +
                             shape_str(window.shape()));
    }
    Tensor batched = reshape(window, {1, window.extent(0), window.extent(1),
                                      window.extent(2)});
    Tensor out = forward_batch(batched);
    return reshape(out, {out.extent(1), 1});
}

Tensor StgcnModel::forward_batch(const Tensor& batch) const {
    if (batch.rank() != 4) {
        throw DimensionError("model: expected [B,M,n,1] batch, got " +
                             shape_str(batch.shape()));
    }
    if (batch.extent(1) != config_.history) {
        throw DimensionError("model: configured history M=" +
                             std::to_string(config_.history) + ", input has " +
                             std::to_string(batch.extent(1)) + " frames");
    }
    if (batch.extent(2) != config_.nodes) {
        throw DimensionError("model: graph has " + std::to_string(config_.nodes) +
                             " nodes, input has " + std::to_string(batch.extent(2)));
    }
    if (batch.extent(3) != 1) {
        throw DimensionError("model: expected a single speed channel, got " +
                             std::to_string(batch.extent(3)));
    }
    Tensor state = batch;
    for (const StConvBlock& block : blocks_) {
        state = block.forward(state);
    }
    return head_->forward(state);
}

namespace {

void collect_params(const std::vector<StConvBlock>& blocks, const OutputHead& head,
                    std::vector<NamedParam>& out) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        const StConvBlock& block = blocks[i];
        out.push_back({prefix + "t_lower.kernel", block.temporal_lower.kernel});
        if (block.temporal_lower.has_projection()) {
            out.push_back({prefix + "t_lower.proj", block.temporal_lower.projection});
        }
        out.push_back({prefix + "graph.theta", block.spatial.theta});
        out.push_back({prefix + "t_upper.kernel", block.temporal_upper.kernel});
        if (block.temporal_upper.has_projection()) {
            out.push_back({prefix + "t_upper.proj", block.temporal_upper.projection});
        }
        out.push_back({prefix + "norm.gain", block.norm_gain});
        out.push_back({prefix + "norm.bias", block.norm_bias});
    }
    out.push_back({"head.collapse.kernel", head.collapse.kernel});
    if (head.collapse.has_projection()) {
        out.push_back({"head.collapse.proj", head.collapse.projection});
    }
    out.push_back({"head.w", head.w});
    out.push_back({"head.b", head.b});
}

} // namespace

std::vector<NamedParam> StgcnModel::parameters() {
    std::vector<NamedParam> out;
    collect_params(blocks_, *head_, out);
    return out;
}

std::vector<NamedParam> StgcnModel::parameters() const {
    std::vector<NamedParam> out;
    collect_params(blocks_, *head_, out);
    return out;
}

std::size_t StgcnModel::parameter_count() const {
    std::size_t total = 0;
    for (const NamedParam& p : parameters()) {
        total += p.tensor.size();
    }
    return total;
}

void StgcnModel::zero_grads() {
    for (NamedParam& p : parameters()) {
        p.tensor.zero_grad();
    }
}

} // namespace stgcn
