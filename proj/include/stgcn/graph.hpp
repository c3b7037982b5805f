#ifndef STGCN_GRAPH_HPP
#define STGCN_GRAPH_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stgcn/sparse.hpp"

namespace stgcn {

/// Distance-kernel thresholds of the adjacency construction:
/// w_ij = exp(-d_ij^2 / sigma_sq) kept when >= epsilon.
struct AdjacencyConfig {
    double sigma_sq = 10.0;
    double epsilon = 0.5;

    void validate() const;
};

struct DistanceRecord {
    std::size_t from = 0;
    std::size_t to = 0;
    double distance = 0.0;
};

/// Undirected weighted sensor graph. The adjacency is stored dense
/// (row-major n*n); construction guarantees symmetry, a zero diagonal and
/// nonnegative weights.
struct WeightedGraph {
    std::size_t n = 0;
    std::vector<std::string> node_ids;
    std::vector<double> weights;

    double weight(std::size_t i, std::size_t j) const { return weights[i * n + j]; }
    /// Unordered pairs with positive weight.
    std::size_t edge_count() const;
    void validate() const;
};

/// All spectral operators derived from one graph. Immutable once built and
/// safe to share across threads.
struct LaplacianBundle {
    std::size_t n = 0;
    SparseMatrix laplacian;         // L = I - D^{-1/2} W D^{-1/2}
    double lambda_max = 0.0;        // largest eigenvalue of L
    SparseMatrix scaled_laplacian;  // 2L/lambda_max - I
    SparseMatrix propagation;       // D~^{-1/2} W~ D~^{-1/2}, W~ = W + I
};

/// Kernel-thresholded adjacency from pairwise distances. Entries are
/// filled per record and the result is symmetrized as (W + W^T) / 2;
/// missing pairs have weight zero.
WeightedGraph build_adjacency(const std::vector<DistanceRecord>& distances, std::size_t n,
                              const AdjacencyConfig& cfg,
                              std::vector<std::string> node_ids = {});

/// Graph from an explicit adjacency matrix, symmetrized the same way.
WeightedGraph graph_from_adjacency(std::size_t n, std::span<const double> weights,
                                   std::vector<std::string> node_ids = {});

/// Dominant eigenvalue by power iteration; throws NumericError with the
/// final residual if it fails to reach `tol` within `max_iters`.
double power_iteration_lambda_max(const SparseMatrix& matrix, double tol = 1e-9,
                                  std::size_t max_iters = 5000);

/// Builds L, lambda_max, the scaled Laplacian and the renormalized
/// propagation matrix. Isolated nodes use the D^{-1/2} := 0 convention,
/// which leaves their Laplacian row equal to the identity row.
/// `forced_lambda_max` overrides power iteration (the first-order path
/// assumes lambda_max = 2).
LaplacianBundle normalized_laplacian(const WeightedGraph& g,
                                     double forced_lambda_max = 0.0);

/// Chebyshev filter sum_{k<K} theta_k T_k(L~) x via the three-term
/// recurrence; O(K * nnz) per signal.
std::vector<double> cheb_filter(const LaplacianBundle& bundle,
                                std::span<const double> theta,
                                std::span<const double> x);

/// Exact spectral-domain filter U diag(sum theta_k T_k(lambda~)) U^T x via
/// dense symmetric eigendecomposition. Test oracle; O(n^3).
std::vector<double> spectral_oracle(const LaplacianBundle& bundle,
                                    std::span<const double> theta,
                                    std::span<const double> x);

/// theta * (D~^{-1/2} W~ D~^{-1/2}) x, the first-order propagation.
std::vector<double> first_order_propagate(const LaplacianBundle& bundle, double theta,
                                          std::span<const double> x);

/// Cyclic Jacobi eigendecomposition of a dense symmetric matrix.
/// Eigenvalues ascend; eigenvectors are the columns of `vectors`.
struct SymmetricEigen {
    std::vector<double> values;
    std::vector<double> vectors; // row-major n*n
};
SymmetricEigen symmetric_eigen(std::size_t n, std::span<const double> dense);

} // namespace stgcn

#endif
