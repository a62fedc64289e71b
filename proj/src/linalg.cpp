// SPDX-License-Identifier: Apache-2.0

#include "slora/linalg.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "slora/rng.h"

namespace slora {

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) {
        throw std::invalid_argument(fmt::format("matrix dimensions must be positive, got {}x{}", rows, cols));
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) {
        throw std::invalid_argument(fmt::format("matrix dimensions must be positive, got {}x{}", rows, cols));
    }
    if (data_.size() != rows * cols) {
        throw std::invalid_argument(
            fmt::format("matrix {}x{} needs {} values, got {}", rows, cols, rows * cols, data_.size()));
    }
    require_finite(*this, "matrix construction");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("ragged row list");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

std::string shape_string(const Matrix& m) { return fmt::format("{}x{}", m.rows(), m.cols()); }

void require_finite(const Matrix& m, const char* context) {
    for (double v : m.data()) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(fmt::format("{}: non-finite value in {} matrix", context, shape_string(m)));
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument(
            fmt::format("matmul: shape mismatch {} * {}", shape_string(a), shape_string(b)));
    }
    const std::size_t n = a.rows();
    const std::size_t k = a.cols();
    const std::size_t m = b.cols();
    Matrix c(n, m);
    auto cd = c.data();
    auto ad = a.data();
    auto bd = b.data();
    // i-p-j order: contiguous inner loop over rows of b and c.
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = cd.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ad[i * k + p];
            const double* brow = bd.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                crow[j] += aip * brow[j];
            }
        }
    }
    require_finite(c, "matmul");
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            t(j, i) = m(i, j);
        }
    }
    return t;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a), shape_string(b)));
    }
}

}  // namespace

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c = a;
    auto cd = c.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < cd.size(); ++i) {
        cd[i] += bd[i];
    }
    require_finite(c, "add");
    return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix c = a;
    auto cd = c.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < cd.size(); ++i) {
        cd[i] -= bd[i];
    }
    require_finite(c, "subtract");
    return c;
}

Matrix scale(const Matrix& m, double factor) {
    Matrix c = m;
    for (double& v : c.data()) {
        v *= factor;
    }
    require_finite(c, "scale");
    return c;
}

Matrix slice_rows(const Matrix& m, std::size_t first, std::size_t count) {
    if (count == 0 || first + count > m.rows()) {
        throw std::invalid_argument(
            fmt::format("slice_rows: rows [{}, {}) out of range for {}", first, first + count, shape_string(m)));
    }
    const auto src = m.data().subspan(first * m.cols(), count * m.cols());
    return Matrix(count, m.cols(), std::vector<double>(src.begin(), src.end()));
}

Matrix concat_rows(std::span<const Matrix> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: no parts");
    }
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw std::invalid_argument(fmt::format("concat_rows: column mismatch {} vs {}", shape_string(parts.front()),
                                                    shape_string(p)));
        }
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) {
        data.insert(data.end(), p.data().begin(), p.data().end());
    }
    return Matrix(rows, cols, std::move(data));
}

double frobenius_norm(const Matrix& m) {
    double sum = 0.0;
    for (double v : m.data()) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

double max_abs(const Matrix& m) {
    double best = 0.0;
    for (double v : m.data()) {
        best = std::max(best, std::abs(v));
    }
    return best;
}

double relative_error(const Matrix& a, const Matrix& b) {
    const double diff = frobenius_norm(subtract(a, b));
    const double ref = frobenius_norm(b);
    return ref > 0.0 ? diff / ref : diff;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::uint64_t seed) {
    if (!(std >= 0.0) || !std::isfinite(std)) {
        throw std::invalid_argument(fmt::format("gaussian_matrix: std must be finite and >= 0, got {}", std));
    }
    Matrix m(rows, cols);
    if (std == 0.0) {
        return m;
    }
    NormalStream normals(seed);
    for (double& v : m.data()) {
        v = std * normals.next();
    }
    return m;
}

}  // namespace slora
