// SPDX-License-Identifier: Apache-2.0

#include "slora/svd.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace slora {

namespace {

using Column = std::vector<double>;

double dot(const Column& a, const Column& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += a[i] * b[i];
    }
    return sum;
}

// Rotate column pairs of `g` (m x n stored as n columns, m >= n) until they
// are mutually orthogonal; the same rotations accumulate into `v`.
void orthogonalize_columns(std::vector<Column>& g, std::vector<Column>& v, const SvdOptions& options) {
    const std::size_t n = g.size();
    for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double alpha = dot(g[i], g[i]);
                const double beta = dot(g[j], g[j]);
                const double gamma = dot(g[i], g[j]);
                if (alpha == 0.0 || beta == 0.0 || std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (auto* cols : {&g, &v}) {
                    auto& ci = (*cols)[i];
                    auto& cj = (*cols)[j];
                    for (std::size_t k = 0; k < ci.size(); ++k) {
                        const double x = ci[k];
                        const double y = cj[k];
                        ci[k] = c * x - s * y;
                        cj[k] = s * x + c * y;
                    }
                }
            }
        }
        if (!rotated) {
            return;
        }
    }
    throw SvdConvergenceError(fmt::format("svd: no convergence after {} sweeps", options.max_sweeps));
}

// Orthonormalize `cols` in order with two passes of modified Gram-Schmidt.
// A column that vanishes against its predecessors is replaced by the first
// standard basis vector that does not.
void orthonormalize(std::vector<Column>& cols) {
    const std::size_t m = cols.empty() ? 0 : cols.front().size();
    auto project_out = [&](Column& c, std::size_t upto) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t p = 0; p < upto; ++p) {
                const double coef = dot(cols[p], c);
                for (std::size_t k = 0; k < m; ++k) {
                    c[k] -= coef * cols[p][k];
                }
            }
        }
        return std::sqrt(dot(c, c));
    };
    for (std::size_t i = 0; i < cols.size(); ++i) {
        double norm = std::sqrt(dot(cols[i], cols[i]));
        if (norm > 0.0) {
            for (double& x : cols[i]) {
                x /= norm;
            }
            norm = project_out(cols[i], i);
        }
        for (std::size_t e = 0; norm < 0.5 && e < m; ++e) {
            Column basis(m, 0.0);
            basis[e] = 1.0;
            cols[i] = basis;
            norm = project_out(cols[i], i);
        }
        for (double& x : cols[i]) {
            x /= norm;
        }
    }
}

// Thin SVD for rows >= cols.
SvdResult svd_tall(const Matrix& a, const SvdOptions& options) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    std::vector<Column> g(n, Column(m));
    std::vector<Column> v(n, Column(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
            g[j][i] = a(i, j);
        }
        v[j][j] = 1.0;
    }
    orthogonalize_columns(g, v, options);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        sigma[j] = std::sqrt(dot(g[j], g[j]));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    std::vector<Column> ucols;
    ucols.reserve(n);
    SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.s[k] = sigma[j];
        ucols.push_back(g[j]);
        for (std::size_t c = 0; c < n; ++c) {
            out.vt(k, c) = v[j][c];
        }
    }
    orthonormalize(ucols);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < m; ++i) {
            out.u(i, k) = ucols[k][i];
        }
    }
    return out;
}

}  // namespace

SvdResult svd(const Matrix& m, const SvdOptions& options) {
    require_finite(m, "svd");
    if (m.rows() >= m.cols()) {
        return svd_tall(m, options);
    }
    SvdResult t = svd_tall(transpose(m), options);
    return SvdResult{transpose(t.vt), std::move(t.s), transpose(t.u)};
}

std::size_t effective_rank(std::span<const double> s, double rel_tol) {
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) {
        throw std::invalid_argument(fmt::format("effective_rank: rel_tol must be in (0, 1), got {}", rel_tol));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!(s[i] >= 0.0)) {
            throw std::invalid_argument(fmt::format("effective_rank: negative singular value at index {}", i));
        }
        if (i > 0 && s[i] > s[i - 1]) {
            throw std::invalid_argument(fmt::format("effective_rank: singular values not sorted at index {}", i));
        }
    }
    if (s.empty() || s[0] == 0.0) {
        return 0;
    }
    const double threshold = rel_tol * s[0];
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](double x) { return x > threshold; }));
}

}  // namespace slora
