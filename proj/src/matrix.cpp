#include "pss/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace pss {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
    }
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::append_row(std::span<const double> values) {
    if (values.size() != cols_) {
        throw DimensionError("append_row: expected " + std::to_string(cols_) + " values, got " +
                             std::to_string(values.size()));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

void Matrix::append_col(std::span<const double> values) {
    if (values.size() != rows_) {
        throw DimensionError("append_col: expected " + std::to_string(rows_) + " values, got " +
                             std::to_string(values.size()));
    }
    std::vector<double> grown(rows_ * (cols_ + 1));
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_), cols_,
                    grown.begin() + static_cast<std::ptrdiff_t>(r * (cols_ + 1)));
        grown[r * (cols_ + 1) + cols_] = values[r];
    }
    data_ = std::move(grown);
    ++cols_;
}

Matrix Matrix::slice_rows(std::size_t first, std::size_t count) const {
    if (first + count > rows_) throw DimensionError("slice_rows out of range");
    Matrix out(count, cols_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_), count * cols_,
                out.data_.begin());
    return out;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) throw DimensionError("gather_rows index out of range");
        auto src = row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    const std::size_t n = std::min(a.size(), b.size());
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        lane[0] += a[j] * b[j];
        lane[1] += a[j + 1] * b[j + 1];
        lane[2] += a[j + 2] * b[j + 2];
        lane[3] += a[j + 3] * b[j + 3];
    }
    for (; j < n; ++j) lane[j & 3u] += a[j] * b[j];
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

}  // namespace pss
