// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices in double precision.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace slora {

/// Raised when an operation would produce NaN or Inf.
class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Dense 2-D real array with row-major storage. Dimensions are always >= 1
/// and every entry is finite.
class Matrix {
public:
    /// Zero-filled rows x cols matrix.
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    /// Exact, element-wise equality (no tolerance).
    friend bool operator==(const Matrix& a, const Matrix& b) = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// "RxC" rendering used in error messages.
std::string shape_string(const Matrix& m);

/// Throws NonFiniteError naming `context` if any entry is NaN or Inf.
void require_finite(const Matrix& m, const char* context);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double factor);

/// Rows [first, first + count).
Matrix slice_rows(const Matrix& m, std::size_t first, std::size_t count);
/// Vertical stacking; all parts must share a column count.
Matrix concat_rows(std::span<const Matrix> parts);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
/// ||a - b||_F / ||b||_F, or ||a - b||_F when b is zero.
double relative_error(const Matrix& a, const Matrix& b);

/// I.i.d. N(0, std^2) entries drawn row-major from the stream seeded with
/// `seed` (see rng.h for the exact generator).
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::uint64_t seed);

}  // namespace slora
