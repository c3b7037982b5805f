#ifndef STGCN_SPARSE_HPP
#define STGCN_SPARSE_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "stgcn/error.hpp"

namespace stgcn {

/// Square sparse matrix in CSR layout. Rows of the spectral operators are
/// short (graph neighbourhoods), so index-value lists keep the Chebyshev
/// recurrence at O(K * nnz) per signal.
class SparseMatrix {
public:
    SparseMatrix() = default;

    /// Build from a dense row-major n*n buffer, dropping exact zeros.
    static SparseMatrix from_dense(std::size_t n, std::span<const double> dense);

    /// Build from coordinate triplets (duplicates are summed).
    static SparseMatrix from_triplets(std::size_t n,
                                      const std::vector<std::size_t>& rows,
                                      const std::vector<std::size_t>& cols,
                                      const std::vector<double>& values);

    std::size_t size() const { return n_; }
    std::size_t nnz() const { return values_.size(); }

    /// y = A * x for a single length-n vector.
    void matvec(std::span<const double> x, std::span<double> y) const;

    /// Y = A * X where X is a row-major n x c block: every column is an
    /// independent graph signal. This is the kernel of the Chebyshev path.
    void matmat(std::span<const double> x, std::span<double> y, std::size_t c) const;

    std::vector<double> to_dense() const;

    double at(std::size_t i, std::size_t j) const;

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> row_offsets_;
    std::vector<std::size_t> col_indices_;
    std::vector<double> values_;
};

} // namespace stgcn

#endif
