// SPDX-License-Identifier: Apache-2.0

#include "slora/attention.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace slora {

const Matrix& MhaWeights::weight(Slot slot) const {
    switch (slot) {
    case Slot::Q: return wq;
    case Slot::K: return wk;
    case Slot::V: return wv;
    case Slot::Out: return wout;
    case Slot::Serial: break;
    }
    throw std::invalid_argument("attention block has no serial weight");
}

Matrix& MhaWeights::weight(Slot slot) { return const_cast<Matrix&>(static_cast<const MhaWeights&>(*this).weight(slot)); }

void MhaWeights::validate() const {
    const std::size_t d = d_model();
    for (Slot s : kProjectionSlots) {
        const Matrix& w = weight(s);
        if (w.rows() != d || w.cols() != d) {
            throw std::invalid_argument(fmt::format("projection {} is {}, expected {}x{}", to_string(s),
                                                    shape_string(w), d, d));
        }
    }
    if (heads == 0 || d % heads != 0) {
        throw std::invalid_argument(fmt::format("d_model {} is not divisible by {} heads", d, heads));
    }
}

void EncoderStack::validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0) {
        throw std::invalid_argument(fmt::format("invalid stack: d_model {} with {} heads", d_model, heads));
    }
    std::optional<std::optional<AdapterMode>> first;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        b.weights.validate();
        if (b.weights.d_model() != d_model || b.weights.heads != heads) {
            throw std::invalid_argument(fmt::format("block {}: d_model {} heads {} disagree with stack {} / {}", i,
                                                    b.weights.d_model(), b.weights.heads, d_model, heads));
        }
        std::optional<AdapterMode> mode;
        if (b.adapter) {
            mode = b.adapter->mode();
            if (b.adapter->d_model() != d_model) {
                throw std::invalid_argument(
                    fmt::format("block {}: adapter d_model {} != {}", i, b.adapter->d_model(), d_model));
            }
        }
        if (!first) {
            first = mode;
        } else if (*first != mode) {
            throw std::invalid_argument(fmt::format("block {}: adapter mode differs from block 0", i));
        }
    }
}

std::optional<AdapterMode> EncoderStack::adapter_mode() const {
    if (blocks.empty() || !blocks.front().adapter) {
        return std::nullopt;
    }
    return blocks.front().adapter->mode();
}

std::vector<AdapterSet> EncoderStack::adapters() const {
    std::vector<AdapterSet> out;
    for (const auto& b : blocks) {
        if (b.adapter) {
            out.push_back(*b.adapter);
        }
    }
    return out;
}

std::vector<MhaWeights> EncoderStack::weights() const {
    std::vector<MhaWeights> out;
    for (const auto& b : blocks) {
        out.push_back(b.weights);
    }
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double top = m(i, 0);
        for (std::size_t j = 1; j < m.cols(); ++j) {
            top = std::max(top, m(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = std::exp(m(i, j) - top);
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) /= sum;
        }
    }
    require_finite(out, "softmax_rows");
    return out;
}

Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads) {
    if (!q.same_shape(k) || !q.same_shape(v)) {
        throw std::invalid_argument(fmt::format("attend: q {} k {} v {} shapes differ", shape_string(q),
                                                shape_string(k), shape_string(v)));
    }
    if (heads == 0 || q.rows() % heads != 0) {
        throw std::invalid_argument(fmt::format("attend: {} rows not divisible by {} heads", q.rows(), heads));
    }
    const std::size_t dh = q.rows() / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Matrix> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const Matrix qh = slice_rows(q, h * dh, dh);
        const Matrix kh = slice_rows(k, h * dh, dh);
        const Matrix vh = slice_rows(v, h * dh, dh);
        // scores(i, j) = <q_i, k_j> / sqrt(d_head); row i is query token i.
        const Matrix probs = softmax_rows(scale(matmul(transpose(qh), kh), inv_sqrt));
        outs.push_back(matmul(vh, transpose(probs)));
    }
    return concat_rows(outs);
}

Matrix mha_forward(const Matrix& x, const MhaWeights& w, const AdapterSet* adapter) {
    w.validate();
    if (x.rows() != w.d_model()) {
        throw std::invalid_argument(
            fmt::format("mha_forward: input {} does not match d_model {}", shape_string(x), w.d_model()));
    }
    if (adapter != nullptr && adapter->d_model() != w.d_model()) {
        throw std::invalid_argument(
            fmt::format("mha_forward: adapter d_model {} != {}", adapter->d_model(), w.d_model()));
    }
    if (adapter == nullptr) {
        return matmul(w.wout, attend(matmul(w.wq, x), matmul(w.wk, x), matmul(w.wv, x), w.heads));
    }
    if (adapter->mode() == AdapterMode::Serial) {
        const Matrix xs = serial_transform(x, adapter->pair(Slot::Serial));
        return matmul(w.wout, attend(matmul(w.wq, xs), matmul(w.wk, xs), matmul(w.wv, xs), w.heads));
    }
    auto eff = [&](Slot s) { return merge_parallel(w.weight(s), adapter->pair(s)); };
    return matmul(eff(Slot::Out), attend(matmul(eff(Slot::Q), x), matmul(eff(Slot::K), x),
                                         matmul(eff(Slot::V), x), w.heads));
}

Matrix encoder_forward(const Matrix& x, const EncoderStack& stack) {
    if (x.rows() != stack.d_model) {
        throw std::invalid_argument(
            fmt::format("encoder_forward: input {} does not match d_model {}", shape_string(x), stack.d_model));
    }
    Matrix h = x;
    for (const auto& block : stack.blocks) {
        h = add(h, mha_forward(h, block.weights, block.adapter ? &*block.adapter : nullptr));
    }
    return h;
}

EncoderStack with_adapters(const EncoderStack& stack, std::vector<AdapterSet> adapters) {
    if (adapters.size() != stack.blocks.size()) {
        throw std::invalid_argument(
            fmt::format("{} adapters for {} blocks", adapters.size(), stack.blocks.size()));
    }
    EncoderStack out = stack;
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        out.blocks[i].adapter = std::move(adapters[i]);
    }
    out.validate();
    return out;
}

EncoderStack without_adapters(const EncoderStack& stack) {
    EncoderStack out = stack;
    for (auto& b : out.blocks) {
        b.adapter.reset();
    }
    return out;
}

EncoderStack fold_adapters(const EncoderStack& stack) {
    EncoderStack out = without_adapters(stack);
    for (std::size_t i = 0; i < stack.blocks.size(); ++i) {
        const auto& ad = stack.blocks[i].adapter;
        if (!ad) {
            continue;
        }
        MhaWeights& w = out.blocks[i].weights;
        if (ad->mode() == AdapterMode::Parallel) {
            for (Slot s : kProjectionSlots) {
                w.weight(s) = merge_parallel(w.weight(s), ad->pair(s));
            }
        } else {
            const auto& p = ad->pair(Slot::Serial);
            for (Slot s : {Slot::Q, Slot::K, Slot::V}) {
                w.weight(s) = merge_serial(w.weight(s), p);
            }
        }
    }
    return out;
}

}  // namespace slora
