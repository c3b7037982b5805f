#include "stgcn/sparse.hpp"

#include <algorithm>
#include <map>
#include <string>

namespace stgcn {

SparseMatrix SparseMatrix::from_dense(std::size_t n, std::span<const double> dense) {
    if (dense.size() != n * n) {
        throw DimensionError("SparseMatrix::from_dense: buffer holds " +
                             std::to_string(dense.size()) + " values, expected " +
                             std::to_string(n * n));
    }
    SparseMatrix m;
    m.n_ = n;
    m.row_offsets_.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        m.row_offsets_[i] = m.values_.size();
        for (std::size_t j = 0; j < n; ++j) {
            const double v = dense[i * n + j];
            if (v != 0.0) {
                m.col_indices_.push_back(j);
                m.values_.push_back(v);
            }
        }
    }
    m.row_offsets_[n] = m.values_.size();
    return m;
}

SparseMatrix SparseMatrix::from_triplets(std::size_t n,
                                         const std::vector<std::size_t>& rows,
                                         const std::vector<std::size_t>& cols,
                                         const std::vector<double>& values) {
    if (rows.size() != cols.size() || rows.size() != values.size()) {
        throw DimensionError("SparseMatrix::from_triplets: triplet arrays disagree");
    }
    std::map<std::pair<std::size_t, std::size_t>, double> entries;
    for (std::size_t e = 0; e < rows.size(); ++e) {
        if (rows[e] >= n || cols[e] >= n) {
            throw DimensionError("SparseMatrix::from_triplets: index out of range");
        }
        entries[{rows[e], cols[e]}] += values[e];
    }
    SparseMatrix m;
    m.n_ = n;
    m.row_offsets_.assign(n + 1, 0);
    std::size_t row = 0;
    for (const auto& [key, value] : entries) {
        while (row <= key.first) {
            m.row_offsets_[row++] = m.values_.size();
        }
        m.col_indices_.push_back(key.second);
        m.values_.push_back(value);
    }
    while (row <= n) {
        m.row_offsets_[row++] = m.values_.size();
    }
    return m;
}

void SparseMatrix::matvec(std::span<const double> x, std::span<double> y) const {
    if (x.size() != n_ || y.size() != n_) {
        throw DimensionError("SparseMatrix::matvec: vector length mismatch");
    }
    for (std::size_t i = 0; i < n_; ++i) {
        double acc = 0.0;
        for (std::size_t e = row_offsets_[i]; e < row_offsets_[i + 1]; ++e) {
            acc += values_[e] * x[col_indices_[e]];
        }
        y[i] = acc;
    }
}

void SparseMatrix::matmat(std::span<const double> x, std::span<double> y,
                          std::size_t c) const {
    if (x.size() != n_ * c || y.size() != n_ * c) {
        throw DimensionError("SparseMatrix::matmat: block size mismatch");
    }
    for (std::size_t i = 0; i < n_; ++i) {
        double* __restrict out = y.data() + i * c;
        std::fill(out, out + c, 0.0);
        for (std::size_t e = row_offsets_[i]; e < row_offsets_[i + 1]; ++e) {
            const double w = values_[e];
            const double* __restrict src = x.data() + col_indices_[e] * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                out[ch] += w * src[ch];
            }
        }
    }
}

std::vector<double> SparseMatrix::to_dense() const {
    std::vector<double> dense(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t e = row_offsets_[i]; e < row_offsets_[i + 1]; ++e) {
            dense[i * n_ + col_indices_[e]] = values_[e];
        }
    }
    return dense;
}

double SparseMatrix::at(std::size_t i, std::size_t j) const {
    if (i >= n_ || j >= n_) {
        throw DimensionError("SparseMatrix::at: index out of range");
    }
    for (std::size_t e = row_offsets_[i]; e < row_offsets_[i + 1]; ++e) {
        if (col_indices_[e] == j) {
            return values_[e];
        }
    }
    return 0.0;
}

} // namespace stgcn
