#include "stgcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>
#include <unordered_set>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace stgcn {

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out << 'x';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace detail {

void TensorNode::ensure_grad() {
    if (grad.empty()) {
        grad.assign(values.size(), 0.0);
    }
}

void TensorNode::add_grad(std::span<const double> delta) {
    ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) {
        grad[i] += delta[i];
    }
}

} // namespace detail

using detail::TensorNode;

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_op_nodes = 0;

std::size_t shape_product(const Shape& shape) {
    std::size_t total = 1;
    for (std::size_t extent : shape) {
        total *= extent;
    }
    return total;
}

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> values,
                                      bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

/// Wraps an op result. Parents and the backward callback are recorded only
/// when gradients can flow, so no-grad forward passes stay off the tape.
Tensor make_op(const char* name, Shape out_shape, std::vector<double> out_values,
               std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward_fn) {
    bool track = g_grad_enabled;
    if (track) {
        track = false;
        for (const Tensor& t : inputs) {
            if (t.requires_grad()) {
                track = true;
                break;
            }
        }
    }
    auto node = make_node(std::move(out_shape), std::move(out_values), track);
    if (track) {
        node->is_op = true;
        node->op_name = name;
        node->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) {
            node->parents.push_back(t.node());
        }
        node->backward = std::move(backward_fn);
        ++g_op_nodes;
    }
    return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) {
        throw ContractError(std::string(op) + ": undefined tensor");
    }
}

// ----- dense kernels -----

// C = A * B, 4-row register blocking; inner loops vectorize.
void mm_set(const double* __restrict a, const double* __restrict b, double* __restrict c,
            std::size_t m, std::size_t k, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* __restrict c0 = c + (i + 0) * n;
        double* __restrict c1 = c + (i + 1) * n;
        double* __restrict c2 = c + (i + 2) * n;
        double* __restrict c3 = c + (i + 3) * n;
        std::fill(c0, c0 + n, 0.0);
        std::fill(c1, c1 + n, 0.0);
        std::fill(c2, c2 + n, 0.0);
        std::fill(c3, c3 + n, 0.0);
        const double* __restrict a0 = a + (i + 0) * k;
        const double* __restrict a1 = a + (i + 1) * k;
        const double* __restrict a2 = a + (i + 2) * k;
        const double* __restrict a3 = a + (i + 3) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* __restrict brow = b + kk * n;
            const double x0 = a0[kk];
            const double x1 = a1[kk];
            const double x2 = a2[kk];
            const double x3 = a3[kk];
            for (std::size_t j = 0; j < n; ++j) {
                const double bj = brow[j];
                c0[j] += x0 * bj;
                c1[j] += x1 * bj;
                c2[j] += x2 * bj;
                c3[j] += x3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        double* __restrict crow = c + i * n;
        std::fill(crow, crow + n, 0.0);
        const double* __restrict arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* __restrict brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

// C += A * B^T  (used for dA = dC * B^T). Runs on a transposed copy of B
// so the inner loops stay contiguous; reductions would not vectorize.
void mm_abt_add(const double* __restrict a, const double* __restrict b,
                double* __restrict c, std::size_t m, std::size_t p, std::size_t k) {
    // a is m x p, b is k x p, c is m x k
    std::vector<double> bt(p * k);
    for (std::size_t kk = 0; kk < k; ++kk) {
        for (std::size_t j = 0; j < p; ++j) {
            bt[j * k + kk] = b[kk * p + j];
        }
    }
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* __restrict a0 = a + (i + 0) * p;
        const double* __restrict a1 = a + (i + 1) * p;
        const double* __restrict a2 = a + (i + 2) * p;
        const double* __restrict a3 = a + (i + 3) * p;
        double* __restrict c0 = c + (i + 0) * k;
        double* __restrict c1 = c + (i + 1) * k;
        double* __restrict c2 = c + (i + 2) * k;
        double* __restrict c3 = c + (i + 3) * k;
        for (std::size_t j = 0; j < p; ++j) {
            const double* __restrict btrow = bt.data() + j * k;
            const double x0 = a0[j];
            const double x1 = a1[j];
            const double x2 = a2[j];
            const double x3 = a3[j];
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double bj = btrow[kk];
                c0[kk] += x0 * bj;
                c1[kk] += x1 * bj;
                c2[kk] += x2 * bj;
                c3[kk] += x3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        const double* __restrict arow = a + i * p;
        double* __restrict crow = c + i * k;
        for (std::size_t j = 0; j < p; ++j) {
            const double aij = arow[j];
            const double* __restrict btrow = bt.data() + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                crow[kk] += aij * btrow[kk];
            }
        }
    }
}

// C += A^T * B  (outer-product form; used for dB = A^T * dC).
void mm_atb_add(const double* __restrict a, const double* __restrict b,
                double* __restrict c, std::size_t m, std::size_t k, std::size_t p) {
    // a is m x k, b is m x p, c is k x p
    for (std::size_t i = 0; i < m; ++i) {
        const double* __restrict arow = a + i * k;
        const double* __restrict brow = b + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) {
                continue;
            }
            double* __restrict crow = c + kk * p;
            for (std::size_t j = 0; j < p; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

} // namespace

// ----- Tensor -----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> values(shape_product(shape), 0.0);
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::constant(Shape shape, double value, bool requires_grad) {
    std::vector<double> values(shape_product(shape), value);
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_product(shape) != values.size()) {
        throw DimensionError("from_values: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_product(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    std::vector<double> values(shape_product(shape));
    for (double& v : values) {
        v = rng.uniform(lo, hi);
    }
    return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

const Shape& Tensor::shape() const {
    require_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::size() const {
    require_defined(*this, "size");
    return node_->values.size();
}

std::size_t Tensor::extent(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("extent: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s));
    }
    return s[axis];
}

std::span<const double> Tensor::values() const& {
    require_defined(*this, "values");
    return node_->values;
}

std::vector<double> Tensor::values() && {
    require_defined(*this, "values");
    return node_->values;
}

std::vector<double>& Tensor::raw_values() {
    require_defined(*this, "raw_values");
    return node_->values;
}

double Tensor::value() const {
    require_defined(*this, "value");
    if (node_->values.size() != 1) {
        throw ContractError("value: tensor is not scalar, shape " + shape_str(node_->shape));
    }
    return node_->values[0];
}

bool Tensor::requires_grad() const {
    return node_ != nullptr && node_->requires_grad;
}

bool Tensor::has_grad() const {
    return node_ != nullptr && !node_->grad.empty();
}

std::span<const double> Tensor::grad() const& {
    require_defined(*this, "grad");
    if (node_->grad.empty()) {
        throw ContractError("grad: no gradient accumulated yet");
    }
    return node_->grad;
}

std::vector<double> Tensor::grad() && {
    require_defined(*this, "grad");
    if (node_->grad.empty()) {
        throw ContractError("grad: no gradient accumulated yet");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    require_defined(*this, "zero_grad");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

bool grad_enabled() {
    return g_grad_enabled;
}

std::uint64_t op_nodes_created() {
    return g_op_nodes;
}

void tune_allocator() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] { mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024); });
#endif
}

// ----- elementwise -----

namespace {

enum class Broadcast { none, left_scalar, right_scalar };

Broadcast binary_mode(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        return Broadcast::none;
    }
    if (b.size() == 1) {
        return Broadcast::right_scalar;
    }
    if (a.size() == 1) {
        return Broadcast::left_scalar;
    }
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

double sum_of(std::span<const double> v) {
    double total = 0.0;
    for (double x : v) {
        total += x;
    }
    return total;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    const Broadcast mode = binary_mode("add", a, b);
    const Shape& out_shape = mode == Broadcast::left_scalar ? b.shape() : a.shape();
    std::vector<double> out(shape_product(out_shape));
    const auto av = a.values();
    const auto bv = b.values();
    switch (mode) {
    case Broadcast::none:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        break;
    case Broadcast::right_scalar:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[0];
        break;
    case Broadcast::left_scalar:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] + bv[i];
        break;
    }
    return make_op("add", out_shape, std::move(out), {a, b}, [mode](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            if (mode == Broadcast::left_scalar) {
                pa.ensure_grad();
                pa.grad[0] += sum_of(self.grad);
            } else {
                pa.add_grad(self.grad);
            }
        }
        if (pb.requires_grad) {
            if (mode == Broadcast::right_scalar) {
                pb.ensure_grad();
                pb.grad[0] += sum_of(self.grad);
            } else {
                pb.add_grad(self.grad);
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    const Broadcast mode = binary_mode("sub", a, b);
    const Shape& out_shape = mode == Broadcast::left_scalar ? b.shape() : a.shape();
    std::vector<double> out(shape_product(out_shape));
    const auto av = a.values();
    const auto bv = b.values();
    switch (mode) {
    case Broadcast::none:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
        break;
    case Broadcast::right_scalar:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[0];
        break;
    case Broadcast::left_scalar:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] - bv[i];
        break;
    }
    return make_op("sub", out_shape, std::move(out), {a, b}, [mode](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            if (mode == Broadcast::left_scalar) {
                pa.ensure_grad();
                pa.grad[0] += sum_of(self.grad);
            } else {
                pa.add_grad(self.grad);
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            if (mode == Broadcast::right_scalar) {
                pb.grad[0] -= sum_of(self.grad);
            } else {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    pb.grad[i] -= self.grad[i];
                }
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    const Broadcast mode = binary_mode("mul", a, b);
    const Shape& out_shape = mode == Broadcast::left_scalar ? b.shape() : a.shape();
    std::vector<double> out(shape_product(out_shape));
    const auto av = a.values();
    const auto bv = b.values();
    switch (mode) {
    case Broadcast::none:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        break;
    case Broadcast::right_scalar:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[0];
        break;
    case Broadcast::left_scalar:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] * bv[i];
        break;
    }
    return make_op("mul", out_shape, std::move(out), {a, b}, [mode](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& av2 = pa.values;
        const auto& bv2 = pb.values;
        if (pa.requires_grad) {
            pa.ensure_grad();
            switch (mode) {
            case Broadcast::none:
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * bv2[i];
                break;
            case Broadcast::right_scalar:
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * bv2[0];
                break;
            case Broadcast::left_scalar:
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[0] += self.grad[i] * bv2[i];
                break;
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            switch (mode) {
            case Broadcast::none:
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * av2[i];
                break;
            case Broadcast::right_scalar:
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[0] += self.grad[i] * av2[i];
                break;
            case Broadcast::left_scalar:
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * av2[0];
                break;
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    require_defined(a, "scale");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * factor;
    }
    return make_op("scale", a.shape(), std::move(out), {a}, [factor](TensorNode& self) {
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pa.grad[i] += self.grad[i] * factor;
            }
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    require_defined(a, "sigmoid");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i];
        if (x >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            out[i] = e / (1.0 + e);
        }
    }
    return make_op("sigmoid", a.shape(), std::move(out), {a}, [](TensorNode& self) {
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.values[i];
                pa.grad[i] += self.grad[i] * y * (1.0 - y);
            }
        }
    });
}

Tensor relu(const Tensor& a) {
    require_defined(a, "relu");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] > 0.0 ? av[i] : 0.0;
    }
    return make_op("relu", a.shape(), std::move(out), {a}, [](TensorNode& self) {
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (pa.values[i] > 0.0) {
                    pa.grad[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sum(const Tensor& a) {
    require_defined(a, "sum");
    return make_op("sum", {1}, {sum_of(a.values())}, {a}, [](TensorNode& self) {
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double g = self.grad[0];
            for (double& slot : pa.grad) {
                slot += g;
            }
        }
    });
}

// ----- shape ops -----

Tensor reshape(const Tensor& a, Shape shape) {
    require_defined(a, "reshape");
    if (shape_product(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_op("reshape", std::move(shape), std::move(out), {a}, [](TensorNode& self) {
        auto& pa = *self.parents[0];
        if (pa.requires_grad) {
            pa.add_grad(self.grad);
        }
    });
}

Tensor slice_last(const Tensor& a, std::size_t from, std::size_t len) {
    require_defined(a, "slice_last");
    if (a.rank() < 1) {
        throw DimensionError("slice_last: rank-0 tensor");
    }
    const std::size_t c = a.shape().back();
    if (from + len > c) {
        throw DimensionError("slice_last: range [" + std::to_string(from) + ", " +
                             std::to_string(from + len) + ") exceeds extent " +
                             std::to_string(c));
    }
    const std::size_t outer = a.size() / c;
    Shape out_shape = a.shape();
    out_shape.back() = len;
    std::vector<double> out(outer * len);
    const auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = av.data() + o * c + from;
        double* dst = out.data() + o * len;
        std::copy(src, src + len, dst);
    }
    return make_op("slice_last", std::move(out_shape), std::move(out), {a},
                   [from, len, c, outer](TensorNode& self) {
                       auto& pa = *self.parents[0];
                       if (!pa.requires_grad) {
                           return;
                       }
                       pa.ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                           const double* g = self.grad.data() + o * len;
                           double* dst = pa.grad.data() + o * c + from;
                           for (std::size_t j = 0; j < len; ++j) {
                               dst[j] += g[j];
                           }
                       }
                   });
}

namespace {

void require_rank4(const char* op, const Tensor& a) {
    if (a.rank() != 4) {
        throw DimensionError(std::string(op) + ": expected rank-4 [B,T,n,C], got " +
                             shape_str(a.shape()));
    }
}

} // namespace

Tensor slice_time(const Tensor& a, std::size_t from, std::size_t len) {
    require_rank4("slice_time", a);
    const std::size_t batch = a.extent(0);
    const std::size_t frames = a.extent(1);
    const std::size_t row = a.extent(2) * a.extent(3); // n*C doubles per frame
    if (from + len > frames) {
        throw DimensionError("slice_time: range [" + std::to_string(from) + ", " +
                             std::to_string(from + len) + ") exceeds " +
                             std::to_string(frames) + " frames");
    }
    Shape out_shape = a.shape();
    out_shape[1] = len;
    std::vector<double> out(batch * len * row);
    const auto av = a.values();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = av.data() + (b * frames + from) * row;
        double* dst = out.data() + b * len * row;
        std::copy(src, src + len * row, dst);
    }
    return make_op("slice_time", std::move(out_shape), std::move(out), {a},
                   [batch, frames, row, from, len](TensorNode& self) {
                       auto& pa = *self.parents[0];
                       if (!pa.requires_grad) {
                           return;
                       }
                       pa.ensure_grad();
                       for (std::size_t b = 0; b < batch; ++b) {
                           const double* g = self.grad.data() + b * len * row;
                           double* dst = pa.grad.data() + (b * frames + from) * row;
                           for (std::size_t j = 0; j < len * row; ++j) {
                               dst[j] += g[j];
                           }
                       }
                   });
}

Tensor unfold_time(const Tensor& a, std::size_t kt) {
    require_rank4("unfold_time", a);
    const std::size_t batch = a.extent(0);
    const std::size_t frames = a.extent(1);
    const std::size_t nodes = a.extent(2);
    const std::size_t chans = a.extent(3);
    if (kt == 0) {
        throw DimensionError("unfold_time: kernel width 0");
    }
    if (frames < kt) {
        throw DimensionError("unfold_time: sequence length " + std::to_string(frames) +
                             " shorter than kernel width " + std::to_string(kt));
    }
    const std::size_t out_frames = frames - kt + 1;
    Shape out_shape{batch, out_frames, nodes, kt * chans};
    std::vector<double> out(batch * out_frames * nodes * kt * chans);
    const auto av = a.values();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < out_frames; ++t) {
            for (std::size_t i = 0; i < nodes; ++i) {
                double* dst = out.data() +
                              ((b * out_frames + t) * nodes + i) * (kt * chans);
                for (std::size_t tau = 0; tau < kt; ++tau) {
                    const double* src = av.data() +
                                        ((b * frames + t + tau) * nodes + i) * chans;
                    std::copy(src, src + chans, dst + tau * chans);
                }
            }
        }
    }
    return make_op("unfold_time", std::move(out_shape), std::move(out), {a},
                   [batch, frames, nodes, chans, kt, out_frames](TensorNode& self) {
                       auto& pa = *self.parents[0];
                       if (!pa.requires_grad) {
                           return;
                       }
                       pa.ensure_grad();
                       for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t t = 0; t < out_frames; ++t) {
                               for (std::size_t i = 0; i < nodes; ++i) {
                                   const double* g = self.grad.data() +
                                                     ((b * out_frames + t) * nodes + i) *
                                                         (kt * chans);
                                   for (std::size_t tau = 0; tau < kt; ++tau) {
                                       double* dst = pa.grad.data() +
                                                     ((b * frames + t + tau) * nodes + i) *
                                                         chans;
                                       const double* gsrc = g + tau * chans;
                                       for (std::size_t ch = 0; ch < chans; ++ch) {
                                           dst[ch] += gsrc[ch];
                                       }
                                   }
                               }
                           }
                       }
                   });
}

// ----- matmul -----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0);
    const std::size_t k = a.extent(1);
    const std::size_t p = b.extent(1);
    if (b.extent(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * p);
    mm_set(a.values().data(), b.values().data(), out.data(), m, k, p);
    return make_op("matmul", {m, p}, std::move(out), {a, b}, [m, k, p](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            mm_abt_add(self.grad.data(), pb.values.data(), pa.grad.data(), m, p, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            mm_atb_add(pa.values.data(), self.grad.data(), pb.grad.data(), m, k, p);
        }
    });
}

Tensor contract_last(const Tensor& x, const Tensor& w) {
    require_defined(x, "contract_last");
    require_defined(w, "contract_last");
    if (x.rank() < 1 || w.rank() < 2) {
        throw DimensionError("contract_last: need x rank >= 1 and w rank >= 2, got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const std::size_t p = w.shape().back();
    const std::size_t k = w.size() / p;
    if (x.shape().back() != k) {
        throw DimensionError("contract_last: trailing axis of " + shape_str(x.shape()) +
                             " does not match weight " + shape_str(w.shape()) +
                             " viewed as [" + std::to_string(k) + "x" + std::to_string(p) +
                             "]");
    }
    const std::size_t rows = x.size() / k;
    Shape out_shape = x.shape();
    out_shape.back() = p;
    std::vector<double> out(rows * p);
    mm_set(x.values().data(), w.values().data(), out.data(), rows, k, p);
    return make_op("contract_last", std::move(out_shape), std::move(out), {x, w},
                   [rows, k, p](TensorNode& self) {
                       auto& px = *self.parents[0];
                       auto& pw = *self.parents[1];
                       if (px.requires_grad) {
                           px.ensure_grad();
                           mm_abt_add(self.grad.data(), pw.values.data(), px.grad.data(),
                                      rows, p, k);
                       }
                       if (pw.requires_grad) {
                           pw.ensure_grad();
                           mm_atb_add(px.values.data(), self.grad.data(), pw.grad.data(),
                                      rows, k, p);
                       }
                   });
}

// ----- graph ops -----

namespace {

void require_node_axis(const char* op, const Tensor& a, const SparseMatrix& matrix) {
    require_rank4(op, a);
    if (a.extent(2) != matrix.size()) {
        throw DimensionError(std::string(op) + ": node axis " + std::to_string(a.extent(2)) +
                             " does not match operator size " +
                             std::to_string(matrix.size()));
    }
}

// Applies T_k(A) to a block held in `current`, using the three-term
// recurrence; k = 0 leaves the block unchanged.
void apply_cheb_power(const SparseMatrix& matrix, std::size_t k, std::size_t n,
                      std::size_t c, std::vector<double>& current,
                      std::vector<double>& prev, std::vector<double>& scratch) {
    if (k == 0) {
        return;
    }
    prev = current; // T_0 block
    matrix.matmat(prev, current, c); // T_1 block
    for (std::size_t step = 2; step <= k; ++step) {
        matrix.matmat(current, scratch, c);
        for (std::size_t i = 0; i < n * c; ++i) {
            scratch[i] = 2.0 * scratch[i] - prev[i];
        }
        prev.swap(current);
        current.swap(scratch);
    }
}

} // namespace

Tensor cheb_basis(const Tensor& a, const SparseMatrix& matrix, std::size_t order) {
    require_node_axis("cheb_basis", a, matrix);
    if (order == 0) {
        throw InputError("cheb_basis: polynomial order K must be >= 1");
    }
    const std::size_t batch = a.extent(0);
    const std::size_t frames = a.extent(1);
    const std::size_t n = a.extent(2);
    const std::size_t c = a.extent(3);
    const std::size_t block = n * c;
    Shape out_shape{batch, frames, n, order * c};
    std::vector<double> out(batch * frames * n * order * c);
    const auto av = a.values();

    std::vector<double> z_prev(block);
    std::vector<double> z_curr(block);
    std::vector<double> z_next(block);
    const SparseMatrix* op = &matrix;
    for (std::size_t f = 0; f < batch * frames; ++f) {
        const double* x = av.data() + f * block;
        double* dst = out.data() + f * n * order * c;
        // k = 0: identity
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(x + i * c, x + (i + 1) * c, dst + i * order * c);
        }
        if (order == 1) {
            continue;
        }
        std::copy(x, x + block, z_prev.data());
        op->matmat(std::span<const double>(x, block), z_curr, c);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(z_curr.begin() + i * c, z_curr.begin() + (i + 1) * c,
                      dst + i * order * c + c);
        }
        for (std::size_t k = 2; k < order; ++k) {
            op->matmat(z_curr, z_next, c);
            for (std::size_t i = 0; i < block; ++i) {
                z_next[i] = 2.0 * z_next[i] - z_prev[i];
            }
            z_prev.swap(z_curr);
            z_curr.swap(z_next);
            for (std::size_t i = 0; i < n; ++i) {
                std::copy(z_curr.begin() + i * c, z_curr.begin() + (i + 1) * c,
                          dst + i * order * c + k * c);
            }
        }
    }
    return make_op("cheb_basis", std::move(out_shape), std::move(out), {a},
                   [op, order, batch, frames, n, c](TensorNode& self) {
                       auto& pa = *self.parents[0];
                       if (!pa.requires_grad) {
                           return;
                       }
                       pa.ensure_grad();
                       const std::size_t block = n * c;
                       std::vector<double> gz(block);
                       std::vector<double> prev(block);
                       std::vector<double> scratch(block);
                       for (std::size_t f = 0; f < batch * frames; ++f) {
                           const double* g = self.grad.data() + f * n * order * c;
                           double* gx = pa.grad.data() + f * block;
                           for (std::size_t k = 0; k < order; ++k) {
                               for (std::size_t i = 0; i < n; ++i) {
                                   std::copy(g + i * order * c + k * c,
                                             g + i * order * c + (k + 1) * c,
                                             gz.begin() + i * c);
                               }
                               // T_k is symmetric in A, so the adjoint is T_k itself.
                               apply_cheb_power(*op, k, n, c, gz, prev, scratch);
                               for (std::size_t i = 0; i < block; ++i) {
                                   gx[i] += gz[i];
                               }
                           }
                       }
                   });
}

Tensor propagate(const Tensor& a, const SparseMatrix& matrix) {
    require_node_axis("propagate", a, matrix);
    const std::size_t batch = a.extent(0);
    const std::size_t frames = a.extent(1);
    const std::size_t n = a.extent(2);
    const std::size_t c = a.extent(3);
    const std::size_t block = n * c;
    std::vector<double> out(a.size());
    const auto av = a.values();
    const SparseMatrix* op = &matrix;
    for (std::size_t f = 0; f < batch * frames; ++f) {
        op->matmat(std::span<const double>(av.data() + f * block, block),
                   std::span<double>(out.data() + f * block, block), c);
    }
    return make_op("propagate", a.shape(), std::move(out), {a},
                   [op, batch, frames, block, c](TensorNode& self) {
                       auto& pa = *self.parents[0];
                       if (!pa.requires_grad) {
                           return;
                       }
                       pa.ensure_grad();
                       std::vector<double> tmp(block);
                       for (std::size_t f = 0; f < batch * frames; ++f) {
                           op->matmat(std::span<const double>(self.grad.data() + f * block,
                                                              block),
                                      tmp, c);
                           double* gx = pa.grad.data() + f * block;
                           for (std::size_t i = 0; i < block; ++i) {
                               gx[i] += tmp[i];
                           }
                       }
                   });
}

// ----- layer normalization -----

namespace {

Tensor layer_norm_impl(const char* op, const Tensor& x, const Tensor& gain,
                       const Tensor& bias, double eps, std::size_t frame_count,
                       std::size_t frame_len) {
    if (eps <= 0.0) {
        throw ContractError(std::string(op) + ": eps must be positive");
    }
    if (gain.size() != frame_len || bias.size() != frame_len) {
        throw DimensionError(std::string(op) + ": gain/bias shape " + shape_str(gain.shape()) +
                             "/" + shape_str(bias.shape()) + " does not cover a frame of " +
                             std::to_string(frame_len) + " entries");
    }
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    std::vector<double> out(x.size());
    std::vector<double> means(frame_count);
    std::vector<double> inv_stds(frame_count);
    for (std::size_t f = 0; f < frame_count; ++f) {
        const double* src = xv.data() + f * frame_len;
        double mean = 0.0;
        for (std::size_t i = 0; i < frame_len; ++i) {
            mean += src[i];
        }
        mean /= static_cast<double>(frame_len);
        double var = 0.0;
        for (std::size_t i = 0; i < frame_len; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(frame_len);
        const double inv = 1.0 / std::sqrt(var + eps);
        means[f] = mean;
        inv_stds[f] = inv;
        double* dst = out.data() + f * frame_len;
        for (std::size_t i = 0; i < frame_len; ++i) {
            dst[i] = gv[i] * ((src[i] - mean) * inv) + bv[i];
        }
    }
    return make_op(op, x.shape(), std::move(out), {x, gain, bias},
                   [eps, frame_count, frame_len, means = std::move(means),
                    inv_stds = std::move(inv_stds)](TensorNode& self) {
                       auto& px = *self.parents[0];
                       auto& pgain = *self.parents[1];
                       auto& pbias = *self.parents[2];
                       const auto& gv2 = pgain.values;
                       if (px.requires_grad) px.ensure_grad();
                       if (pgain.requires_grad) pgain.ensure_grad();
                       if (pbias.requires_grad) pbias.ensure_grad();
                       std::vector<double> xhat(frame_len);
                       std::vector<double> h(frame_len);
                       for (std::size_t f = 0; f < frame_count; ++f) {
                           const double* src = px.values.data() + f * frame_len;
                           const double* g = self.grad.data() + f * frame_len;
                           const double mean = means[f];
                           const double inv = inv_stds[f];
                           for (std::size_t i = 0; i < frame_len; ++i) {
                               xhat[i] = (src[i] - mean) * inv;
                           }
                           if (pbias.requires_grad) {
                               for (std::size_t i = 0; i < frame_len; ++i) {
                                   pbias.grad[i] += g[i];
                               }
                           }
                           if (pgain.requires_grad) {
                               for (std::size_t i = 0; i < frame_len; ++i) {
                                   pgain.grad[i] += g[i] * xhat[i];
                               }
                           }
                           if (px.requires_grad) {
                               double h_mean = 0.0;
                               double hx_mean = 0.0;
                               for (std::size_t i = 0; i < frame_len; ++i) {
                                   h[i] = g[i] * gv2[i];
                                   h_mean += h[i];
                                   hx_mean += h[i] * xhat[i];
                               }
                               h_mean /= static_cast<double>(frame_len);
                               hx_mean /= static_cast<double>(frame_len);
                               double* gx = px.grad.data() + f * frame_len;
                               for (std::size_t i = 0; i < frame_len; ++i) {
                                   gx[i] += inv * (h[i] - h_mean - xhat[i] * hx_mean);
                               }
                           }
                       }
                   });
}

} // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_defined(x, "layer_norm");
    require_defined(gain, "layer_norm");
    require_defined(bias, "layer_norm");
    if (x.rank() != 2) {
        throw DimensionError("layer_norm: expected rank-2 [n,C], got " + shape_str(x.shape()));
    }
    return layer_norm_impl("layer_norm", x, gain, bias, eps, 1, x.size());
}

Tensor layer_norm_frames(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps) {
    require_rank4("layer_norm_frames", x);
    const std::size_t frames = x.extent(0) * x.extent(1);
    const std::size_t frame_len = x.extent(2) * x.extent(3);
    return layer_norm_impl("layer_norm_frames", x, gain, bias, eps, frames, frame_len);
}

// ----- reverse mode -----

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    auto root = loss.node();
    if (root->size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(root->shape));
    }
    if (!root->requires_grad) {
        return; // nothing reachable tracks gradients
    }

    // Post-order DFS: every node is appended after all of its parents, so a
    // reverse sweep visits each node exactly once after all its consumers.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next < top.node->parents.size()) {
            TensorNode* parent = top.node->parents[top.next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->is_op && node->backward) {
            node->ensure_grad();
            node->backward(*node);
        }
    }
}

} // namespace stgcn
