#ifndef STGCN_GRADCHECK_HPP
#define STGCN_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "stgcn/tensor.hpp"

namespace stgcn {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Compares the analytic gradient of `loss_fn` w.r.t. `param` against
/// central finite differences at up to `samples` seeded random entries.
/// `loss_fn` must rebuild the forward pass from the tensor's current
/// values on every call. Returns the worst relative error, with
/// |a - n| / max(|a|, |n|, 1e-3) as the metric.
double fd_max_rel_error(const std::function<Tensor()>& loss_fn, Tensor param, Rng& rng,
                        std::size_t samples = 10, double step = 1e-5);

/// Finite-difference checks for every layer type on small random
/// instances (n <= 6, M <= 8): graph conv (both variants), gated temporal
/// conv, layer norm, ST-Conv block, output head and the full model.
std::vector<GradCheckEntry> run_layer_gradchecks(std::uint64_t seed, double tolerance);

} // namespace stgcn

#endif
