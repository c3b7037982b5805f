#include "stgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "stgcn/error.hpp"
#include "stgcn/rng.hpp"

namespace stgcn {

void AdjacencyConfig::validate() const {
    if (!(sigma_sq > 0.0)) {
        throw InputError("adjacency: sigma_sq must be positive, got " +
                         std::to_string(sigma_sq));
    }
    if (!(epsilon > 0.0) || !(epsilon < 1.0)) {
        throw InputError("adjacency: epsilon must lie in (0, 1), got " +
                         std::to_string(epsilon));
    }
}

std::size_t WeightedGraph::edge_count() const {
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (weights[i * n + j] > 0.0) {
                ++count;
            }
        }
    }
    return count;
}

void WeightedGraph::validate() const {
    if (weights.size() != n * n) {
        throw DimensionError("graph: weight buffer does not match node count");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i * n + i] != 0.0) {
            throw InputError("graph: nonzero self-weight at node " + std::to_string(i));
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double w = weights[i * n + j];
            if (!(w >= 0.0)) {
                throw InputError("graph: negative or NaN weight at (" + std::to_string(i) +
                                 ", " + std::to_string(j) + ")");
            }
            if (w != weights[j * n + i]) {
                throw InputError("graph: adjacency not symmetric at (" + std::to_string(i) +
                                 ", " + std::to_string(j) + ")");
            }
        }
    }
}

namespace {

std::vector<std::string> default_ids(std::size_t n, std::vector<std::string> ids) {
    if (ids.empty()) {
        ids.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            ids.push_back(std::to_string(i));
        }
    } else if (ids.size() != n) {
        throw InputError("graph: " + std::to_string(ids.size()) + " node ids for " +
                         std::to_string(n) + " nodes");
    }
    return ids;
}

void symmetrize(std::size_t n, std::vector<double>& w) {
    for (std::size_t i = 0; i < n; ++i) {
        w[i * n + i] = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (w[i * n + j] + w[j * n + i]);
            w[i * n + j] = avg;
            w[j * n + i] = avg;
        }
    }
}

} // namespace

WeightedGraph build_adjacency(const std::vector<DistanceRecord>& distances, std::size_t n,
                              const AdjacencyConfig& cfg, std::vector<std::string> node_ids) {
    cfg.validate();
    if (n == 0) {
        throw InputError("build_adjacency: empty node set");
    }
    std::vector<double> w(n * n, 0.0);
    for (const DistanceRecord& rec : distances) {
        if (rec.from >= n || rec.to >= n) {
            throw InputError("build_adjacency: station index out of range (" +
                             std::to_string(rec.from) + ", " + std::to_string(rec.to) +
                             ") for n=" + std::to_string(n));
        }
        if (rec.from == rec.to) {
            throw InputError("build_adjacency: self-distance for station " +
                             std::to_string(rec.from));
        }
        if (!(rec.distance >= 0.0)) {
            throw InputError("build_adjacency: negative distance between " +
                             std::to_string(rec.from) + " and " + std::to_string(rec.to));
        }
        const double kernel = std::exp(-(rec.distance * rec.distance) / cfg.sigma_sq);
        w[rec.from * n + rec.to] = kernel >= cfg.epsilon ? kernel : 0.0;
    }
    symmetrize(n, w);
    WeightedGraph g{n, default_ids(n, std::move(node_ids)), std::move(w)};
    g.validate();
    return g;
}

WeightedGraph graph_from_adjacency(std::size_t n, std::span<const double> weights,
                                   std::vector<std::string> node_ids) {
    if (weights.size() != n * n) {
        throw InputError("graph_from_adjacency: matrix is not " + std::to_string(n) + "x" +
                         std::to_string(n));
    }
    std::vector<double> w(weights.begin(), weights.end());
    for (double v : w) {
        if (!(v >= 0.0)) {
            throw InputError("graph_from_adjacency: negative or NaN weight");
        }
    }
    symmetrize(n, w);
    WeightedGraph g{n, default_ids(n, std::move(node_ids)), std::move(w)};
    g.validate();
    return g;
}

double power_iteration_lambda_max(const SparseMatrix& matrix, double tol,
                                  std::size_t max_iters) {
    const std::size_t n = matrix.size();
    if (n == 0) {
        throw ContractError("power_iteration: empty matrix");
    }
    // Deterministic pseudo-random start; an all-ones start can be exactly
    // orthogonal to the dominant eigenvector (two-node graph).
    Rng rng(0x5eedba11ULL);
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(-1.0, 1.0);
    }
    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v) {
        x /= norm;
    }
    std::vector<double> w(n);
    double lambda = 0.0;
    double residual = 0.0;
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        matrix.matvec(v, w);
        lambda = std::inner_product(v.begin(), v.end(), w.begin(), 0.0);
        residual = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = w[i] - lambda * v[i];
            residual += r * r;
        }
        residual = std::sqrt(residual);
        if (residual <= tol) {
            return lambda;
        }
        norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
        if (norm == 0.0) {
            return 0.0; // start vector lies in the null space of a zero map
        }
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = w[i] / norm;
        }
    }
    throw NumericError("power_iteration: no convergence after " + std::to_string(max_iters) +
                       " iterations, residual " + std::to_string(residual));
}

LaplacianBundle normalized_laplacian(const WeightedGraph& g, double forced_lambda_max) {
    g.validate();
    const std::size_t n = g.n;
    std::vector<double> degree(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            degree[i] += g.weights[i * n + j];
        }
    }
    std::vector<double> dinv_sqrt(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (degree[i] > 0.0) {
            dinv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
        }
    }

    std::vector<double> lap(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        lap[i * n + i] = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double w = g.weights[i * n + j];
            if (w != 0.0) {
                lap[i * n + j] -= dinv_sqrt[i] * w * dinv_sqrt[j];
            }
        }
    }

    LaplacianBundle bundle;
    bundle.n = n;
    bundle.laplacian = SparseMatrix::from_dense(n, lap);
    bundle.lambda_max = forced_lambda_max > 0.0
                            ? forced_lambda_max
                            : power_iteration_lambda_max(bundle.laplacian);

    std::vector<double> scaled(n * n, 0.0);
    const double two_over_lmax = 2.0 / bundle.lambda_max;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            scaled[i * n + j] = two_over_lmax * lap[i * n + j] - (i == j ? 1.0 : 0.0);
        }
    }
    bundle.scaled_laplacian = SparseMatrix::from_dense(n, scaled);

    // Renormalization: W~ = W + I, D~ from W~ row sums.
    std::vector<double> prop(n * n, 0.0);
    std::vector<double> dtilde_inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        dtilde_inv_sqrt[i] = 1.0 / std::sqrt(degree[i] + 1.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double wt = g.weights[i * n + j] + (i == j ? 1.0 : 0.0);
            if (wt != 0.0) {
                prop[i * n + j] = dtilde_inv_sqrt[i] * wt * dtilde_inv_sqrt[j];
            }
        }
    }
    bundle.propagation = SparseMatrix::from_dense(n, prop);
    return bundle;
}

std::vector<double> cheb_filter(const LaplacianBundle& bundle, std::span<const double> theta,
                                std::span<const double> x) {
    const std::size_t order = theta.size();
    if (order == 0) {
        throw InputError("cheb_filter: polynomial order K must be >= 1");
    }
    const std::size_t n = bundle.n;
    if (x.size() != n) {
        throw DimensionError("cheb_filter: signal length " + std::to_string(x.size()) +
                             " does not match graph size " + std::to_string(n));
    }
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < n; ++i) {
        acc[i] = theta[0] * x[i];
    }
    if (order == 1) {
        return acc;
    }
    std::vector<double> z_prev(x.begin(), x.end());
    std::vector<double> z_curr(n);
    bundle.scaled_laplacian.matvec(x, z_curr);
    for (std::size_t i = 0; i < n; ++i) {
        acc[i] += theta[1] * z_curr[i];
    }
    std::vector<double> z_next(n);
    for (std::size_t k = 2; k < order; ++k) {
        bundle.scaled_laplacian.matvec(z_curr, z_next);
        for (std::size_t i = 0; i < n; ++i) {
            z_next[i] = 2.0 * z_next[i] - z_prev[i];
        }
        z_prev.swap(z_curr);
        z_curr.swap(z_next);
        for (std::size_t i = 0; i < n; ++i) {
            acc[i] += theta[k] * z_curr[i];
        }
    }
    return acc;
}

std::vector<double> spectral_oracle(const LaplacianBundle& bundle,
                                    std::span<const double> theta,
                                    std::span<const double> x) {
    const std::size_t order = theta.size();
    if (order == 0) {
        throw InputError("spectral_oracle: polynomial order K must be >= 1");
    }
    const std::size_t n = bundle.n;
    if (x.size() != n) {
        throw DimensionError("spectral_oracle: signal length mismatch");
    }
    const std::vector<double> dense = bundle.laplacian.to_dense();
    const SymmetricEigen eig = symmetric_eigen(n, dense);

    // Filter response at each eigenvalue, with the same lambda_max scaling
    // the recurrence path uses.
    std::vector<double> response(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double lam = 2.0 * eig.values[i] / bundle.lambda_max - 1.0;
        double t_prev = 1.0;
        double t_curr = lam;
        response[i] = theta[0];
        for (std::size_t k = 1; k < order; ++k) {
            if (k == 1) {
                response[i] += theta[k] * lam;
            } else {
                const double t_next = 2.0 * lam * t_curr - t_prev;
                t_prev = t_curr;
                t_curr = t_next;
                response[i] += theta[k] * t_curr;
            }
        }
    }

    // y = U diag(response) U^T x; eigenvectors are columns of eig.vectors.
    std::vector<double> coeff(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += eig.vectors[j * n + i] * x[j];
        }
        coeff[i] = acc * response[i];
    }
    std::vector<double> y(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += eig.vectors[j * n + i] * coeff[i];
        }
        y[j] = acc;
    }
    return y;
}

std::vector<double> first_order_propagate(const LaplacianBundle& bundle, double theta,
                                          std::span<const double> x) {
    if (x.size() != bundle.n) {
        throw DimensionError("first_order_propagate: signal length mismatch");
    }
    std::vector<double> y(bundle.n);
    bundle.propagation.matvec(x, y);
    for (double& v : y) {
        v *= theta;
    }
    return y;
}

SymmetricEigen symmetric_eigen(std::size_t n, std::span<const double> dense) {
    if (dense.size() != n * n) {
        throw DimensionError("symmetric_eigen: buffer is not n*n");
    }
    std::vector<double> a(dense.begin(), dense.end());
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        v[i * n + i] = 1.0;
    }

    auto off_norm = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        return std::sqrt(2.0 * s);
    };

    double scale = 0.0;
    for (double x : a) {
        scale = std::max(scale, std::abs(x));
    }
    const double tol = std::max(scale, 1.0) * 1e-14;

    const std::size_t max_sweeps = 100;
    std::size_t sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        if (off_norm() <= tol) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) <= tol * 1e-2) {
                    continue;
                }
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a[i * n + p];
                    const double aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a[p * n + i];
                    const double aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v[i * n + p];
                    const double viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    if (sweep == max_sweeps && off_norm() > tol) {
        throw NumericError("symmetric_eigen: Jacobi sweeps did not converge");
    }

    SymmetricEigen result;
    result.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        result.values[i] = a[i * n + i];
    }
    // Sort eigenpairs ascending.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t l, std::size_t r) { return result.values[l] < result.values[r]; });
    SymmetricEigen sorted;
    sorted.values.resize(n);
    sorted.vectors.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        sorted.values[i] = result.values[idx[i]];
        for (std::size_t j = 0; j < n; ++j) {
            sorted.vectors[j * n + i] = v[j * n + idx[i]];
        }
    }
    return sorted;
}

} // namespace stgcn
