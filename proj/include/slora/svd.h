// SPDX-License-Identifier: Apache-2.0
//
// Thin singular value decomposition via one-sided (Hestenes) Jacobi.

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "slora/linalg.h"

namespace slora {

class SvdConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// m = u * diag(s) * vt with k = min(rows, cols).
struct SvdResult {
    Matrix u;               // m x k, orthonormal columns
    std::vector<double> s;  // nonincreasing, >= 0
    Matrix vt;              // k x n, orthonormal rows
};

struct SvdOptions {
    int max_sweeps = 60;
    /// A column pair is rotated while |<g_i, g_j>| > tolerance * ||g_i|| ||g_j||.
    double tolerance = 1e-12;
};

/// Throws SvdConvergenceError if a sweep still rotates after `max_sweeps`.
SvdResult svd(const Matrix& m, const SvdOptions& options = {});

/// Number of s_i > rel_tol * s_0; 0 when s is empty or s_0 == 0.
/// Rejects unsorted or negative input and rel_tol outside (0, 1).
std::size_t effective_rank(std::span<const double> s, double rel_tol);

}  // namespace slora
