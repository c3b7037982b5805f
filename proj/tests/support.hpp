#ifndef STGCN_TESTS_SUPPORT_HPP
#define STGCN_TESTS_SUPPORT_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "stgcn/graph.hpp"
#include "stgcn/rng.hpp"
#include "stgcn/tensor.hpp"

namespace testsupport {

// Naive triple-loop product, the independent oracle for matmul.
inline std::vector<double> matmul_oracle(std::span<const double> a, std::span<const double> b,
                                         std::size_t m, std::size_t k, std::size_t p) {
    std::vector<double> c(m * p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += a[i * k + kk] * b[kk * p + j];
            }
            c[i * p + j] = acc;
        }
    }
    return c;
}

inline std::vector<double> dense_matvec(std::span<const double> m, std::span<const double> x,
                                        std::size_t n) {
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            y[i] += m[i * n + j] * x[j];
        }
    }
    return y;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

// Random connected-ish weighted graph with weights in (0, 1].
inline stgcn::WeightedGraph random_graph(std::size_t n, stgcn::Rng& rng,
                                         double edge_prob = 0.6) {
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
    return stgcn::graph_from_adjacency(n, w);
}

inline std::vector<double> random_vector(std::size_t n, stgcn::Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return v;
}

} // namespace testsupport

#endif
