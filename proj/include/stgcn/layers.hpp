#ifndef STGCN_LAYERS_HPP
#define STGCN_LAYERS_HPP

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stgcn/graph.hpp"
#include "stgcn/tensor.hpp"

namespace stgcn {

enum class GraphConvVariant {
    chebyshev,   // K-order polynomial filter on the scaled Laplacian
    first_order, // single renormalized propagation, depth supplies the radius
};

std::string to_string(GraphConvVariant variant);
GraphConvVariant graph_conv_variant_from_string(const std::string& name);

/// Output channel widths of the three layers in one ST-Conv block:
/// temporal (widens to c_out), spatial bottleneck (c_mid), temporal (c_out).
struct BlockChannels {
    std::size_t c_in = 0;
    std::size_t c_mid = 0;
    std::size_t c_out = 0;
};

struct ModelConfig {
    GraphConvVariant variant = GraphConvVariant::chebyshev;
    std::size_t cheb_order = 3;   // K; forced to 1 for the first-order variant
    std::size_t temporal_kernel = 3; // K_t
    std::size_t history = 12;     // M
    std::size_t nodes = 0;        // n
    std::vector<BlockChannels> blocks = {{1, 16, 64}, {64, 16, 64}};
    double norm_eps = 1e-6;

    /// Frames left after all blocks; the output head collapses them.
    std::size_t remaining_frames() const;
    void validate() const;
};

/// Multi-channel graph convolution sharing one kernel across all frames.
/// theta is [K, C_i, C_o]; the first-order variant stores K = 1 and routes
/// through the renormalized propagation matrix.
class GraphConvLayer {
public:
    GraphConvLayer(GraphConvVariant variant, std::size_t order, std::size_t c_in,
                   std::size_t c_out, std::shared_ptr<const LaplacianBundle> bundle,
                   Rng& rng);

    Tensor forward(const Tensor& x) const; // [B,T,n,Ci] -> [B,T,n,Co]

    GraphConvVariant variant() const { return variant_; }
    std::size_t order() const { return order_; }
    std::size_t c_in() const { return c_in_; }
    std::size_t c_out() const { return c_out_; }
    Tensor theta; // parameter [K, Ci, Co]

private:
    GraphConvVariant variant_;
    std::size_t order_;
    std::size_t c_in_;
    std::size_t c_out_;
    std::shared_ptr<const LaplacianBundle> bundle_;
};

/// Width-K_t valid (causal) convolution along time with a GLU gate:
/// out = (P + r) .* sigmoid(Q), where r is the input cropped to the last
/// T - K_t + 1 frames, linearly projected when C_i != C_o.
class TemporalConvLayer {
public:
    TemporalConvLayer(std::size_t kernel_width, std::size_t c_in, std::size_t c_out,
                      Rng& rng);

    Tensor forward(const Tensor& y) const; // [B,T,n,Ci] -> [B,T-Kt+1,n,Co]

    std::size_t kernel_width() const { return kernel_width_; }
    std::size_t c_in() const { return c_in_; }
    std::size_t c_out() const { return c_out_; }
    bool has_projection() const { return projection.defined(); }
    Tensor kernel;     // parameter [Kt, Ci, 2*Co]
    Tensor projection; // parameter [Ci, Co], only when Ci != Co

private:
    std::size_t kernel_width_;
    std::size_t c_in_;
    std::size_t c_out_;
};

/// Temporal -> graph -> ReLU -> temporal sandwich with per-frame layer
/// normalization over the joint (node, channel) axes.
class StConvBlock {
public:
    StConvBlock(const BlockChannels& channels, std::size_t temporal_kernel,
                GraphConvVariant variant, std::size_t cheb_order,
                std::shared_ptr<const LaplacianBundle> bundle, Rng& rng);

    Tensor forward(const Tensor& v) const; // [B,M,n,Cin] -> [B,M-2(Kt-1),n,Cout]

    TemporalConvLayer temporal_lower;
    GraphConvLayer spatial;
    TemporalConvLayer temporal_upper;
    Tensor norm_gain; // parameter [n, Cout]
    Tensor norm_bias; // parameter [n, Cout]
    double norm_eps;
};

/// Gated temporal convolution spanning all remaining frames, then a
/// per-node linear map across channels: v_hat = Z w + b.
class OutputHead {
public:
    OutputHead(std::size_t remaining_frames, std::size_t channels, Rng& rng);

    Tensor forward(const Tensor& z) const; // [B,T,n,c] -> [B,n,1]

    TemporalConvLayer collapse;
    Tensor w; // parameter [c, 1]
    Tensor b; // parameter [1]
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// Two ST-Conv blocks plus the output head, per the standard layout; any
/// number of blocks is accepted as long as frames remain for the head.
class StgcnModel {
public:
    StgcnModel(ModelConfig config, std::shared_ptr<const LaplacianBundle> bundle,
               std::uint64_t seed);

    /// Single window: [M, n, 1] -> [n, 1].
    Tensor forward(const Tensor& window) const;
    /// Batched: [B, M, n, 1] -> [B, n, 1].
    Tensor forward_batch(const Tensor& batch) const;

    std::vector<NamedParam> parameters();
    std::vector<NamedParam> parameters() const;
    std::size_t parameter_count() const;
    void zero_grads();

    const ModelConfig& config() const { return config_; }
    const LaplacianBundle& bundle() const { return *bundle_; }

private:
    ModelConfig config_;
    std::shared_ptr<const LaplacianBundle> bundle_;
    std::vector<StConvBlock> blocks_;
    std::unique_ptr<OutputHead> head_;
};

} // namespace stgcn

#endif
