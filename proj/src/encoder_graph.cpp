// SPDX-License-Identifier: Apache-2.0

#include "slora/encoder_graph.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include <fmt/format.h>

namespace slora {

ParamLayout::ParamLayout(std::span<const AdapterSet> adapters) {
    for (std::size_t b = 0; b < adapters.size(); ++b) {
        for (Slot s : adapters[b].slots()) {
            keys_.push_back({b, s, Factor::A});
            keys_.push_back({b, s, Factor::B});
        }
    }
}

ParamId ParamLayout::id(const ParamKey& key) const {
    const auto it = std::find(keys_.begin(), keys_.end(), key);
    if (it == keys_.end()) {
        throw std::out_of_range(fmt::format("no parameter block{}.{}.{}", key.block, to_string(key.slot),
                                            to_string(key.factor)));
    }
    return ParamId{static_cast<std::size_t>(it - keys_.begin())};
}

std::vector<Matrix> ParamLayout::values(std::span<const AdapterSet> adapters) const {
    std::vector<Matrix> out;
    out.reserve(keys_.size());
    for (const auto& k : keys_) {
        out.push_back(adapters[k.block].pair(k.slot).factor(k.factor));
    }
    return out;
}

void ParamLayout::assign(std::span<AdapterSet> adapters, std::span<const Matrix> values) const {
    if (values.size() != keys_.size()) {
        throw std::invalid_argument(fmt::format("assign: {} values for {} parameters", values.size(), keys_.size()));
    }
    for (std::size_t i = 0; i < keys_.size(); ++i) {
        const auto& k = keys_[i];
        auto dst = adapters[k.block].pair(k.slot).factor_data(k.factor);
        if (dst.size() != values[i].size()) {
            throw std::invalid_argument(fmt::format("assign: size mismatch for parameter {}", i));
        }
        std::copy(values[i].data().begin(), values[i].data().end(), dst.begin());
    }
}

std::size_t ParamLayout::scalar_count(std::span<const AdapterSet> adapters) const {
    std::size_t n = 0;
    for (const auto& k : keys_) {
        n += adapters[k.block].pair(k.slot).factor(k.factor).size();
    }
    return n;
}

namespace {

NodeId leaf(Tape& tape, const ParamLayout* layout, std::size_t block, Slot slot, Factor f, const Matrix& value) {
    if (layout == nullptr) {
        return tape.constant(value);
    }
    return tape.parameter(layout->id({block, slot, f}), value);
}

NodeId record_attend(Tape& tape, NodeId q, NodeId k, NodeId v, std::size_t d_model, std::size_t heads) {
    const std::size_t dh = d_model / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<NodeId> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        const NodeId qh = tape.slice_rows(q, h * dh, dh);
        const NodeId kh = tape.slice_rows(k, h * dh, dh);
        const NodeId vh = tape.slice_rows(v, h * dh, dh);
        const NodeId probs = tape.softmax_rows(tape.scale(tape.matmul(tape.transpose(qh), kh), inv_sqrt));
        outs.push_back(tape.matmul(vh, tape.transpose(probs)));
    }
    return tape.concat_rows(outs);
}

}  // namespace

NodeId record_encoder(Tape& tape, NodeId x, const EncoderStack& stack, const ParamLayout* layout) {
    stack.validate();
    if (tape.value(x).rows() != stack.d_model) {
        throw std::invalid_argument(fmt::format("record_encoder: input {} does not match d_model {}",
                                                shape_string(tape.value(x)), stack.d_model));
    }
    NodeId h = x;
    for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
        const auto& block = stack.blocks[b];
        const auto& w = block.weights;
        std::array<NodeId, 4> weights{};
        for (std::size_t s = 0; s < 4; ++s) {
            const Slot slot = kProjectionSlots[s];
            weights[s] = tape.constant(w.weight(slot));
            if (block.adapter && block.adapter->mode() == AdapterMode::Parallel) {
                const auto& p = block.adapter->pair(slot);
                const NodeId bn = leaf(tape, layout, b, slot, Factor::B, p.b());
                const NodeId an = leaf(tape, layout, b, slot, Factor::A, p.a());
                weights[s] = tape.add(weights[s], tape.matmul(bn, an));
            }
        }
        NodeId xin = h;
        if (block.adapter && block.adapter->mode() == AdapterMode::Serial) {
            const auto& p = block.adapter->pair(Slot::Serial);
            const NodeId bn = leaf(tape, layout, b, Slot::Serial, Factor::B, p.b());
            const NodeId an = leaf(tape, layout, b, Slot::Serial, Factor::A, p.a());
            xin = tape.serial_transform(h, bn, an);
        }
        const NodeId q = tape.matmul(weights[0], xin);
        const NodeId k = tape.matmul(weights[1], xin);
        const NodeId v = tape.matmul(weights[2], xin);
        const NodeId heads = record_attend(tape, q, k, v, stack.d_model, stack.heads);
        h = tape.add(h, tape.matmul(weights[3], heads));
    }
    return h;
}

NodeId record_loss(Tape& tape, NodeId output, const LossSpec& loss, const Supervision& sup) {
    if (loss.kind == LossKind::Mse) {
        if (sup.target == nullptr) {
            throw std::invalid_argument("mse loss needs a regression target");
        }
        return tape.mse(output, *sup.target);
    }
    if (!loss.readout) {
        throw std::invalid_argument("cross-entropy loss needs a readout matrix");
    }
    const NodeId readout = tape.constant(*loss.readout);
    return tape.cross_entropy(tape.matmul(readout, tape.mean_cols(output)), sup.label);
}

double sample_loss(const EncoderStack& stack, const Matrix& input, const LossSpec& loss, const Supervision& sup) {
    Tape tape;
    const NodeId out = record_encoder(tape, tape.constant(input), stack, nullptr);
    return tape.value(record_loss(tape, out, loss, sup))(0, 0);
}

BatchGradient batch_gradient(const EncoderStack& stack, const ParamLayout& layout, const LossSpec& loss,
                             std::span<const Matrix* const> inputs, std::span<const Supervision> sups,
                             std::size_t threads) {
    if (inputs.empty() || inputs.size() != sups.size()) {
        throw std::invalid_argument(fmt::format("batch_gradient: {} inputs, {} targets", inputs.size(), sups.size()));
    }
    const std::size_t n = inputs.size();
    std::vector<double> losses(n, 0.0);
    std::vector<GradientMap> grads(n);

    auto run = [&](std::size_t i) {
        Tape tape;
        const NodeId out =
            record_encoder(tape, tape.constant(*inputs[i]), stack, layout.size() > 0 ? &layout : nullptr);
        const NodeId l = record_loss(tape, out, loss, sups[i]);
        losses[i] = tape.value(l)(0, 0);
        grads[i] = tape.backward(l);
    };

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += workers) run(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    BatchGradient out;
    const std::vector<AdapterSet> adapters = stack.adapters();
    for (std::size_t p = 0; p < layout.size(); ++p) {
        const auto& k = layout.key(ParamId{p});
        const Matrix& shape = adapters.at(k.block).pair(k.slot).factor(k.factor);
        out.grads.emplace_back(shape.rows(), shape.cols());
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.loss += losses[i];
        for (const auto& [id, g] : grads[i]) {
            auto dst = out.grads[id.value].data();
            for (std::size_t e = 0; e < dst.size(); ++e) {
                dst[e] += inv * g.data()[e];
            }
        }
    }
    out.loss *= inv;
    return out;
}

}  // namespace slora
