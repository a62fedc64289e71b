// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of analytic gradients.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "slora/adapter.h"
#include "slora/encoder_graph.h"
#include "slora/linalg.h"

namespace slora {

class NonDeterministicError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A scalar function of a parameter list and its analytic gradient.
struct Objective {
    std::function<double(std::span<const Matrix>)> loss;
    std::function<std::vector<Matrix>(std::span<const Matrix>)> gradient;
};

struct GradCheckOptions {
    double eps = 1e-5;
    /// Every entry is checked when the total count is below this.
    std::size_t full_check_limit = 2000;
    /// Entries drawn (with a seeded stream) above the limit.
    std::size_t subsample = 500;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t entries_checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_entry = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over the
/// checked entries, numeric = (f(p + eps) - f(p - eps)) / (2 eps).
/// Throws NonDeterministicError if repeated evaluations at `params` disagree,
/// std::invalid_argument if eps is outside (0, 1e-3].
GradCheckReport grad_check(const Objective& objective, std::vector<Matrix> params, const GradCheckOptions& options = {});

/// A random frozen stack with random nonzero adapters (both factors
/// Gaussian, so no gradient vanishes identically) on random inputs.
struct EncoderGradCheckConfig {
    AdapterMode mode = AdapterMode::Serial;
    std::size_t d_model = 16;
    std::size_t heads = 2;
    std::size_t n_blocks = 2;
    std::size_t n_tokens = 5;
    std::size_t rank = 2;
    std::size_t n_samples = 2;
    LossKind loss = LossKind::Mse;
    std::uint64_t seed = 0;
    double eps = 1e-5;
};

GradCheckReport encoder_grad_check(const EncoderGradCheckConfig& config);

}  // namespace slora
