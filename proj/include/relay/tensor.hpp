#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace relay {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    /// Appends the rows of `other` (same column count) below this matrix.
    void append_rows(const Matrix& other) {
        if (rows_ == 0) {
            cols_ = other.cols_;
        }
        data_.insert(data_.end(), other.data_.begin(), other.data_.end());
        rows_ += other.rows_;
    }

    /// Copy of rows [first, first + count).
    Matrix slice_rows(std::size_t first, std::size_t count) const {
        Matrix out(count, cols_);
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
                  data_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols_), out.data_.begin());
        return out;
    }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows, std::size_t cols) {
        Matrix m(rows.size(), cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
        }
        return m;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace relay
