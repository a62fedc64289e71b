// SPDX-License-Identifier: Apache-2.0

#include "slora/trainer.h"

#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "slora/rng.h"

namespace slora {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::uint64_t kShuffleStream = 7;

}  // namespace

double TrainConfig::resolved_ab_ratio() const { return plus_variant ? ab_ratio.value_or(kDefaultPlusRatio) : 1.0; }

double TrainConfig::resolved_init_std() const { return init_std.value_or(default_init_std(rank)); }

void TrainConfig::validate() const {
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
        throw std::invalid_argument(fmt::format("learning rate must be positive, got {}", base_lr));
    }
    if (!(resolved_ab_ratio() >= 1.0) || !std::isfinite(resolved_ab_ratio())) {
        throw std::invalid_argument(fmt::format("A:B ratio must be >= 1, got {}", resolved_ab_ratio()));
    }
    if (rank == 0) {
        throw std::invalid_argument("rank must be positive");
    }
}

ParamGroups make_param_groups(std::span<const AdapterSet> adapters, const TrainConfig& config) {
    config.validate();
    ParamGroups groups{{"A", config.base_lr, {}}, {"B", config.resolved_ab_ratio() * config.base_lr, {}}};
    const ParamLayout layout(adapters);
    for (const auto& key : layout.keys()) {
        (key.factor == Factor::A ? groups.a : groups.b).keys.push_back(key);
    }
    return groups;
}

std::vector<double> layout_learning_rates(const ParamLayout& layout, const ParamGroups& groups) {
    std::vector<double> out;
    for (const auto& key : layout.keys()) {
        out.push_back(groups.lr_for(key));
    }
    return out;
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<double> learning_rates)
    : kind_(kind), lr_(std::move(learning_rates)) {}

void Optimizer::step(std::span<Matrix> params, std::span<const Matrix> grads) {
    if (params.size() != lr_.size() || grads.size() != lr_.size()) {
        throw std::invalid_argument(fmt::format("optimizer: {} params, {} grads, {} rates", params.size(),
                                                grads.size(), lr_.size()));
    }
    ++t_;
    if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto w = params[p].data();
            auto g = grads[p].data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= lr_[p] * g[i];
            }
        }
        return;
    }
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.rows(), p.cols());
            v_.emplace_back(p.rows(), p.cols());
        }
    }
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto w = params[p].data();
        auto g = grads[p].data();
        auto m = m_[p].data();
        auto v = v_[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            w[i] -= lr_[p] * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
        }
    }
}

double evaluate(const EncoderStack& stack, const Split& split, const LossSpec& loss, std::size_t threads) {
    if (split.size() == 0) {
        throw std::invalid_argument("evaluate: empty split");
    }
    // Reuse the batched path without parameters: it handles threading and
    // sums in sample order.
    static const std::vector<AdapterSet> kNone;
    const ParamLayout empty(kNone);
    std::vector<const Matrix*> inputs;
    std::vector<Supervision> sups;
    for (std::size_t i = 0; i < split.size(); ++i) {
        inputs.push_back(&split.inputs[i]);
        sups.push_back(split.supervision(i));
    }
    return batch_gradient(stack, empty, loss, inputs, sups, threads).loss;
}

TrainHistory train(const EncoderStack& stack, const Dataset& data, const TrainConfig& config) {
    config.validate();
    stack.validate();
    data.validate();
    if (data.d_model != stack.d_model) {
        throw std::invalid_argument(
            fmt::format("dataset d_model {} does not match stack d_model {}", data.d_model, stack.d_model));
    }

    std::vector<AdapterSet> adapters;
    if (const auto mode = stack.adapter_mode()) {
        adapters = stack.adapters();
        if (*mode != config.mode || adapters.front().rank() != config.rank) {
            throw std::invalid_argument(fmt::format("stack carries {} adapters of rank {}, config asks for {} rank {}",
                                                    to_string(*mode), adapters.front().rank(),
                                                    to_string(config.mode), config.rank));
        }
    } else {
        for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
            adapters.push_back(
                init_adapter(config.mode, stack.d_model, config.rank, config.resolved_init_std(), config.seed, b));
        }
    }

    TrainHistory history;
    history.initial_adapters = adapters;
    EncoderStack working = with_adapters(stack, adapters);
    const ParamLayout layout(adapters);
    const ParamGroups groups = make_param_groups(adapters, config);
    Optimizer optimizer(config.optimizer, layout_learning_rates(layout, groups));
    std::vector<Matrix> params = layout.values(adapters);
    const LossSpec loss = data.loss_spec();
    const Split& eval_split = data.eval.size() > 0 ? data.eval : data.train;

    const std::size_t n = data.train.size();
    const std::size_t batch = (config.batch == 0 || config.batch > n) ? n : config.batch;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle_rng(derive_seed(config.seed, kShuffleStream));

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        if (batch < n) {
            shuffle_indices(order, shuffle_rng);
        }
        double loss_sum = 0.0;
        std::size_t step = 0;
        for (std::size_t first = 0; first < n; first += batch, ++step) {
            const std::size_t count = std::min(batch, n - first);
            std::vector<const Matrix*> inputs;
            std::vector<Supervision> sups;
            for (std::size_t i = first; i < first + count; ++i) {
                inputs.push_back(&data.train.inputs[order[i]]);
                sups.push_back(data.train.supervision(order[i]));
            }
            BatchGradient bg;
            try {
                bg = batch_gradient(working, layout, loss, inputs, sups, config.threads);
                if (!std::isfinite(bg.loss)) {
                    throw NonFiniteError("loss is not finite");
                }
                optimizer.step(params, bg.grads);
                for (const auto& p : params) require_finite(p, "optimizer step");
            } catch (const NonFiniteError& e) {
                throw TrainingDivergedError(fmt::format("training diverged at epoch {} step {}: {}", epoch, step, e.what()));
            }
            layout.assign(adapters, params);
            working = with_adapters(stack, adapters);
            loss_sum += bg.loss * static_cast<double>(count);
        }
        double eval_loss = 0.0;
        try {
            eval_loss = evaluate(working, eval_split, loss, config.threads);
        } catch (const NonFiniteError& e) {
            throw TrainingDivergedError(fmt::format("training diverged at epoch {} (eval): {}", epoch, e.what()));
        }
        if (!std::isfinite(eval_loss)) {
            throw TrainingDivergedError(fmt::format("training diverged at epoch {} (eval loss)", epoch));
        }
        const double seconds =
            config.record_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() : 0.0;
        history.epochs.push_back({epoch, loss_sum / static_cast<double>(n), eval_loss, seconds});
    }
    history.final_adapters = adapters;
    return history;
}

std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,train_loss,eval_loss,seconds\n";
    for (const auto& e : history.epochs) {
        out += fmt::format("{},{:.17g},{:.17g},{:.6f}\n", e.epoch, e.train_loss, e.eval_loss, e.seconds);
    }
    return out;
}

}  // namespace slora
