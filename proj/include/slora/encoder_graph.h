// SPDX-License-Identifier: Apache-2.0
//
// The encoder forward pass recorded on a Tape, with adapter factors as
// trainable leaves and frozen weights as constants. The recorded values are
// computed with the same kernels as encoder_forward, so they agree bit for bit.

#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "slora/adapter.h"
#include "slora/attention.h"
#include "slora/autograd.h"

namespace slora {

struct ParamKey {
    std::size_t block;
    Slot slot;
    Factor factor;
    auto operator<=>(const ParamKey&) const = default;
};

/// Enumerates adapter factors in block order, then slot order, A before B.
/// The position of a key in keys() is its ParamId.
class ParamLayout {
public:
    explicit ParamLayout(std::span<const AdapterSet> adapters);

    std::span<const ParamKey> keys() const { return keys_; }
    std::size_t size() const { return keys_.size(); }
    ParamId id(const ParamKey& key) const;
    const ParamKey& key(ParamId id) const { return keys_.at(id.value); }

    std::vector<Matrix> values(std::span<const AdapterSet> adapters) const;
    /// Writes `values` back into the matching factors; shapes must agree.
    void assign(std::span<AdapterSet> adapters, std::span<const Matrix> values) const;
    std::size_t scalar_count(std::span<const AdapterSet> adapters) const;

private:
    std::vector<ParamKey> keys_;
};

/// Records encoder_forward(x, stack) on `tape`. Adapter factors become
/// parameters keyed by `layout`; pass layout == nullptr to record them as
/// constants.
NodeId record_encoder(Tape& tape, NodeId x, const EncoderStack& stack, const ParamLayout* layout);

enum class LossKind { Mse, CrossEntropy };

/// Loss attached to the encoder output. Classification reads logits as
/// readout * mean_over_tokens(output), with readout n_classes x d_model.
struct LossSpec {
    LossKind kind = LossKind::Mse;
    std::optional<Matrix> readout;
};

/// regression target for Mse, label for CrossEntropy.
struct Supervision {
    const Matrix* target = nullptr;
    std::size_t label = 0;
};

NodeId record_loss(Tape& tape, NodeId output, const LossSpec& loss, const Supervision& sup);

/// Per-sample loss value (no tape kept).
double sample_loss(const EncoderStack& stack, const Matrix& input, const LossSpec& loss, const Supervision& sup);

struct BatchGradient {
    double loss = 0.0;
    std::vector<Matrix> grads;  // indexed by ParamLayout position
};

/// Mean loss over `samples` of (input, supervision) pairs and its gradient
/// with respect to every adapter factor. Per-sample tapes run on up to
/// `threads` workers; the reduction always sums in sample order.
BatchGradient batch_gradient(const EncoderStack& stack, const ParamLayout& layout, const LossSpec& loss,
                             std::span<const Matrix* const> inputs, std::span<const Supervision> sups,
                             std::size_t threads = 1);

}  // namespace slora
