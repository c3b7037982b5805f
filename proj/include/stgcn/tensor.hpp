#ifndef STGCN_TENSOR_HPP
#define STGCN_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stgcn/error.hpp"
#include "stgcn/rng.hpp"
#include "stgcn/sparse.hpp"

namespace stgcn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

namespace detail {

/// One recorded value in the compute graph. Operation results that track
/// gradients keep references to their parents and a backward callback;
/// everything else is a plain leaf buffer.
struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;   // sized lazily on first accumulation
    bool requires_grad = false;
    bool is_op = false;
    const char* op_name = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;

    std::size_t size() const { return values.size(); }
    void ensure_grad();
    void add_grad(std::span<const double> delta);
};

} // namespace detail

/// Dense multi-dimensional array of 64-bit floats with optional
/// reverse-mode gradient tracking. Copies are shallow handles to the same
/// underlying node, matching the tape semantics of the ops below.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor constant(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Uniform fill in [lo, hi) from the given stream.
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t extent(std::size_t axis) const;

    std::span<const double> values() const&;
    std::vector<double> values() &&; // owning copy; spans into temporaries dangle
    /// Mutable access for leaf tensors (parameter updates between steps).
    std::vector<double>& raw_values();
    double value() const; // scalar tensors only

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const&;
    std::vector<double> grad() &&;
    void zero_grad();

    /// Stable identity of the underlying node (graph bookkeeping in tests).
    const void* id() const { return node_.get(); }

    // internal
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// While a guard is alive, no graph nodes are recorded (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Number of op nodes recorded on the tape since process start. Forward
/// passes that do not require gradients must leave this unchanged.
std::uint64_t op_nodes_created();

/// Raises the allocator's mmap threshold (glibc) so tape buffers are
/// recycled instead of being returned to the kernel and re-zeroed every
/// step. Idempotent; called by the training and evaluation entry points.
void tune_allocator();

// ----- elementwise and reduction ops -----

Tensor add(const Tensor& a, const Tensor& b); // equal shapes, or one scalar
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // Hadamard, or one scalar
Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a); // relu'(0) := 0
Tensor sum(const Tensor& a); // -> scalar

// ----- shape ops -----

Tensor reshape(const Tensor& a, Shape shape);
/// Columns [from, from+len) of the trailing axis.
Tensor slice_last(const Tensor& a, std::size_t from, std::size_t len);
/// Frames [from, from+len) of axis 1 of a [B, T, n, C] tensor.
Tensor slice_time(const Tensor& a, std::size_t from, std::size_t len);
/// Sliding windows of width kt along axis 1: [B, T, n, C] ->
/// [B, T-kt+1, n, kt*C] with out[b,t,i,tau*C+c] = a[b,t+tau,i,c].
Tensor unfold_time(const Tensor& a, std::size_t kt);

// ----- linear algebra -----

Tensor matmul(const Tensor& a, const Tensor& b); // [m,k] x [k,p] -> [m,p]

/// Contracts the trailing axis of `x` with a weight tensor viewed
/// row-major as a [k, p] matrix (k = product of its leading extents):
/// out[..., j] = sum_c x[..., c] * w[c, j]. Equivalent to flattening,
/// matmul and reshaping back, without the copies.
Tensor contract_last(const Tensor& x, const Tensor& w);

// ----- graph ops (operate along the node axis of [B, T, n, C]) -----
// The SparseMatrix must stay alive until backward has run; layers own the
// Laplacian bundle for the lifetime of the model.

/// Chebyshev basis stack [T_0(A)X, ..., T_{K-1}(A)X] along the channel
/// axis: [B, T, n, C] -> [B, T, n, K*C]. A must be symmetric.
Tensor cheb_basis(const Tensor& a, const SparseMatrix& matrix, std::size_t order);
/// Single propagation A*X along the node axis (first-order path).
Tensor propagate(const Tensor& a, const SparseMatrix& matrix);

// ----- normalization -----

/// Normalizes x over all n*C entries jointly, then applies elementwise
/// gain and bias: out = gain .* (x - mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
/// Same normalization applied independently to every [n, C] frame of a
/// [B, T, n, C] tensor; gain and bias are shaped [n, C].
Tensor layer_norm_frames(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps);

// ----- reverse mode -----

/// Seeds d loss / d loss = 1 and accumulates gradients into every
/// reachable tensor that requires them. Gradients add across calls and
/// across multiple uses of the same tensor.
void backward(const Tensor& loss);

} // namespace stgcn

#endif
