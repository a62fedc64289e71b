// SPDX-License-Identifier: Apache-2.0
//
// Bias-free multi-head self-attention over column-per-token inputs
// (x is d_model x n), stacked with residual connections. No layer norm, no
// MLP sub-block.

#pragma once

#include <optional>
#include <vector>

#include "slora/adapter.h"
#include "slora/linalg.h"

namespace slora {

/// Frozen projections, each d_model x d_model.
struct MhaWeights {
    Matrix wq;
    Matrix wk;
    Matrix wv;
    Matrix wout;
    std::size_t heads = 1;

    std::size_t d_model() const { return wq.rows(); }
    const Matrix& weight(Slot slot) const;
    Matrix& weight(Slot slot);
    /// Throws when a projection is not square d x d or d is not divisible by heads.
    void validate() const;

    friend bool operator==(const MhaWeights&, const MhaWeights&) = default;
};

struct EncoderBlock {
    MhaWeights weights;
    std::optional<AdapterSet> adapter;
};

struct EncoderStack {
    std::size_t d_model = 0;
    std::size_t heads = 1;
    std::vector<EncoderBlock> blocks;

    /// Every block conforms to d_model/heads and adapters are all absent or
    /// all of one mode with matching d_model.
    void validate() const;
    /// Mode shared by all blocks, or nullopt for an adapter-free stack.
    std::optional<AdapterMode> adapter_mode() const;
    std::vector<AdapterSet> adapters() const;
    std::vector<MhaWeights> weights() const;
};

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

/// Per head h: softmax(q_h^T k_h / sqrt(d_head)) applied to v_h, heads
/// concatenated back to d_model rows. q, k, v are d_model x n.
Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads);

/// Output of one attention block (without the residual). `adapter` may be null.
Matrix mha_forward(const Matrix& x, const MhaWeights& w, const AdapterSet* adapter);

/// x <- x + mha_forward(x, block) for each block in order.
Matrix encoder_forward(const Matrix& x, const EncoderStack& stack);

/// Copy of `stack` carrying `adapters` (one per block).
EncoderStack with_adapters(const EncoderStack& stack, std::vector<AdapterSet> adapters);
EncoderStack without_adapters(const EncoderStack& stack);

/// Adapter-free stack whose weights absorb each block's adapter:
/// parallel W + B A on all four projections, serial W (I + B A) on Wq, Wk, Wv.
EncoderStack fold_adapters(const EncoderStack& stack);

}  // namespace slora
