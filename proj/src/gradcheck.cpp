// SPDX-License-Identifier: Apache-2.0

#include "slora/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "slora/rng.h"
#include "slora/tasks.h"

namespace slora {

GradCheckReport grad_check(const Objective& objective, std::vector<Matrix> params, const GradCheckOptions& options) {
    if (!(options.eps > 0.0 && options.eps <= 1e-3)) {
        throw std::invalid_argument(fmt::format("grad_check: eps must be in (0, 1e-3], got {}", options.eps));
    }
    const double f0 = objective.loss(params);
    const std::vector<Matrix> analytic = objective.gradient(params);
    if (objective.loss(params) != f0 || objective.gradient(params) != analytic) {
        throw NonDeterministicError("grad_check: objective is not deterministic");
    }
    if (analytic.size() != params.size()) {
        throw std::invalid_argument(
            fmt::format("grad_check: {} gradients for {} parameters", analytic.size(), params.size()));
    }

    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!analytic[p].same_shape(params[p])) {
            throw std::invalid_argument(fmt::format("grad_check: gradient {} has shape {}, parameter {}", p,
                                                    shape_string(analytic[p]), shape_string(params[p])));
        }
        for (std::size_t e = 0; e < params[p].size(); ++e) {
            entries.emplace_back(p, e);
        }
    }
    if (entries.size() >= options.full_check_limit && options.subsample < entries.size()) {
        SplitMix64 rng(options.seed);
        std::vector<std::size_t> idx(entries.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        shuffle_indices(idx, rng);
        idx.resize(options.subsample);
        std::sort(idx.begin(), idx.end());
        std::vector<std::pair<std::size_t, std::size_t>> picked;
        for (std::size_t i : idx) picked.push_back(entries[i]);
        entries = std::move(picked);
    }

    GradCheckReport report;
    for (const auto& [p, e] : entries) {
        double& slot = params[p].data()[e];
        const double saved = slot;
        slot = saved + options.eps;
        const double up = objective.loss(params);
        slot = saved - options.eps;
        const double down = objective.loss(params);
        slot = saved;
        const double numeric = (up - down) / (2.0 * options.eps);
        const double exact = analytic[p].data()[e];
        const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
        const double err = std::abs(exact - numeric) / denom;
        if (err > report.max_rel_error || report.entries_checked == 0) {
            report.max_rel_error = std::max(report.max_rel_error, err);
            report.worst_param = p;
            report.worst_entry = e;
            report.worst_analytic = exact;
            report.worst_numeric = numeric;
        }
        ++report.entries_checked;
    }
    return report;
}

GradCheckReport encoder_grad_check(const EncoderGradCheckConfig& c) {
    const EncoderStack base = random_stack(c.d_model, c.heads, c.n_blocks, derive_seed(c.seed, 1));
    std::vector<AdapterSet> adapters = random_adapters(c.mode, c.d_model, c.rank, c.n_blocks, derive_seed(c.seed, 2));
    const ParamLayout layout(adapters);

    std::vector<Matrix> inputs;
    std::vector<Matrix> targets;
    std::vector<Supervision> sups;
    LossSpec loss{c.loss, std::nullopt};
    const std::size_t n_classes = 3;
    if (c.loss == LossKind::CrossEntropy) {
        loss.readout = gaussian_matrix(n_classes, c.d_model, 1.0, derive_seed(c.seed, 3));
    }
    for (std::size_t i = 0; i < c.n_samples; ++i) {
        inputs.push_back(gaussian_matrix(c.d_model, c.n_tokens, 1.0, derive_seed(derive_seed(c.seed, 4), i)));
        targets.push_back(gaussian_matrix(c.d_model, c.n_tokens, 1.0, derive_seed(derive_seed(c.seed, 5), i)));
    }
    for (std::size_t i = 0; i < c.n_samples; ++i) {
        sups.push_back(Supervision{&targets[i], i % n_classes});
    }
    std::vector<const Matrix*> input_ptrs;
    for (const auto& x : inputs) input_ptrs.push_back(&x);

    auto evaluate = [&](std::span<const Matrix> params) {
        std::vector<AdapterSet> ad = adapters;
        layout.assign(ad, params);
        return batch_gradient(with_adapters(base, std::move(ad)), layout, loss, input_ptrs, sups);
    };
    Objective objective{
        [&](std::span<const Matrix> p) { return evaluate(p).loss; },
        [&](std::span<const Matrix> p) { return evaluate(p).grads; },
    };
    GradCheckOptions options;
    options.eps = c.eps;
    options.seed = c.seed;
    return grad_check(objective, layout.values(adapters), options);
}

}  // namespace slora
