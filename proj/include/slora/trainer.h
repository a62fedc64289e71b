// SPDX-License-Identifier: Apache-2.0
//
// Adapter fine-tuning on a frozen encoder stack.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slora/adapter.h"
#include "slora/attention.h"
#include "slora/encoder_graph.h"
#include "slora/tasks.h"

namespace slora {

/// Raised when the loss turns non-finite during training.
class TrainingDivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class OptimizerKind { Sgd, Adam };

/// LoRA+ ratio used when plus_variant is set and no ratio is given.
inline constexpr double kDefaultPlusRatio = 20.0;

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double base_lr = 4e-3;
    /// lr(B) = ratio * lr(A). Ignored (forced to 1) unless plus_variant.
    std::optional<double> ab_ratio;
    std::size_t epochs = 200;
    /// 0 means full batch.
    std::size_t batch = 16;
    std::uint64_t seed = 0;
    std::size_t rank = 2;
    AdapterMode mode = AdapterMode::Serial;
    bool plus_variant = false;
    /// A-factor init std; defaults to 1/sqrt(rank).
    std::optional<double> init_std;
    std::size_t threads = 1;
    /// Fill EpochRecord::seconds with wall time; left 0 otherwise so runs are byte-reproducible.
    bool record_time = false;

    double resolved_ab_ratio() const;
    double resolved_init_std() const;
    void validate() const;
};

struct ParamGroup {
    std::string name;
    double lr;
    std::vector<ParamKey> keys;
};

/// All A factors at base_lr and all B factors at ab_ratio * base_lr.
struct ParamGroups {
    ParamGroup a;
    ParamGroup b;

    double lr_for(const ParamKey& key) const { return key.factor == Factor::A ? a.lr : b.lr; }
};

ParamGroups make_param_groups(std::span<const AdapterSet> adapters, const TrainConfig& config);

/// Per-parameter SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected).
class Optimizer {
public:
    Optimizer(OptimizerKind kind, std::vector<double> learning_rates);

    void step(std::span<Matrix> params, std::span<const Matrix> grads);
    std::size_t steps() const { return t_; }

private:
    OptimizerKind kind_;
    std::vector<double> lr_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::size_t t_ = 0;
};

/// Learning rate of every ParamLayout position under `groups`.
std::vector<double> layout_learning_rates(const ParamLayout& layout, const ParamGroups& groups);

struct EpochRecord {
    std::size_t epoch;
    double train_loss;
    double eval_loss;
    double seconds;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::vector<AdapterSet> initial_adapters;
    std::vector<AdapterSet> final_adapters;
};

/// Mean loss of `stack` (adapters attached) over a split.
double evaluate(const EncoderStack& stack, const Split& split, const LossSpec& loss, std::size_t threads = 1);

/// Trains adapters of config.mode/rank on `stack`. A stack that already
/// carries adapters starts from them (mode and rank must match the config);
/// otherwise adapters come from init_adapter with config.seed. The stack
/// itself is never modified. When the eval split is empty, eval_loss is
/// measured on the training split.
TrainHistory train(const EncoderStack& stack, const Dataset& data, const TrainConfig& config);

/// "epoch,train_loss,eval_loss,seconds" with round-trip precision.
std::string history_csv(const TrainHistory& history);

}  // namespace slora
