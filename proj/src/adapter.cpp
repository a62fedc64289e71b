// SPDX-License-Identifier: Apache-2.0

#include "slora/adapter.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace slora {

std::string_view to_string(AdapterMode mode) { return mode == AdapterMode::Parallel ? "parallel" : "serial"; }

std::string_view to_string(Slot slot) {
    switch (slot) {
    case Slot::Q: return "q";
    case Slot::K: return "k";
    case Slot::V: return "v";
    case Slot::Out: return "out";
    case Slot::Serial: return "serial";
    }
    return "?";
}

std::string_view to_string(Factor factor) { return factor == Factor::A ? "A" : "B"; }

AdapterMode parse_mode(std::string_view text) {
    if (text == "parallel") return AdapterMode::Parallel;
    if (text == "serial") return AdapterMode::Serial;
    throw std::invalid_argument(fmt::format("unknown adapter mode '{}'", text));
}

Slot parse_slot(std::string_view text) {
    for (Slot s : {Slot::Q, Slot::K, Slot::V, Slot::Out, Slot::Serial}) {
        if (text == to_string(s)) return s;
    }
    throw std::invalid_argument(fmt::format("unknown slot '{}'", text));
}

std::uint64_t slot_seed_offset(Slot slot) {
    switch (slot) {
    case Slot::Q: return 1;
    case Slot::K: return 2;
    case Slot::V: return 3;
    case Slot::Out: return 4;
    case Slot::Serial: return 5;
    }
    return 0;
}

std::uint64_t slot_seed(std::uint64_t base, std::size_t block, Slot slot) {
    return base + 16 * static_cast<std::uint64_t>(block) + slot_seed_offset(slot);
}

LowRankPair::LowRankPair(Matrix b, Matrix a) : b_(std::move(b)), a_(std::move(a)) {
    if (b_.cols() != a_.rows()) {
        throw std::invalid_argument(
            fmt::format("low-rank pair: B {} and A {} disagree on rank", shape_string(b_), shape_string(a_)));
    }
    if (rank() > std::min(d_out(), d_in())) {
        throw std::invalid_argument(
            fmt::format("low-rank pair: rank {} exceeds min({}, {})", rank(), d_out(), d_in()));
    }
}

AdapterSet AdapterSet::parallel(std::array<LowRankPair, 4> pairs) {
    const std::size_t d = pairs[0].d_out();
    const std::size_t r = pairs[0].rank();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.d_out() != d || p.d_in() != d || p.rank() != r) {
            throw std::invalid_argument(fmt::format("parallel adapter: slot {} is {}x{} rank {}, expected {}x{} rank {}",
                                                    to_string(kProjectionSlots[i]), p.d_out(), p.d_in(), p.rank(), d,
                                                    d, r));
        }
    }
    return AdapterSet(AdapterMode::Parallel, std::vector<LowRankPair>(pairs.begin(), pairs.end()));
}

AdapterSet AdapterSet::serial(LowRankPair pair) {
    if (pair.d_out() != pair.d_in()) {
        throw std::invalid_argument(
            fmt::format("serial adapter must be square, got {}x{}", pair.d_out(), pair.d_in()));
    }
    return AdapterSet(AdapterMode::Serial, {std::move(pair)});
}

std::size_t AdapterSet::d_model() const { return pairs_.front().d_in(); }
std::size_t AdapterSet::rank() const { return pairs_.front().rank(); }

std::vector<Slot> AdapterSet::slots() const {
    if (mode_ == AdapterMode::Serial) {
        return {Slot::Serial};
    }
    return {kProjectionSlots.begin(), kProjectionSlots.end()};
}

const LowRankPair* AdapterSet::find(Slot slot) const {
    if (mode_ == AdapterMode::Serial) {
        return slot == Slot::Serial ? &pairs_.front() : nullptr;
    }
    if (slot == Slot::Serial) {
        return nullptr;
    }
    return &pairs_[static_cast<std::size_t>(slot)];
}

const LowRankPair& AdapterSet::pair(Slot slot) const {
    const LowRankPair* p = find(slot);
    if (p == nullptr) {
        throw std::invalid_argument(fmt::format("{} adapter has no '{}' slot", to_string(mode_), to_string(slot)));
    }
    return *p;
}

LowRankPair& AdapterSet::pair(Slot slot) {
    return const_cast<LowRankPair&>(static_cast<const AdapterSet&>(*this).pair(slot));
}

double default_init_std(std::size_t rank) { return 1.0 / std::sqrt(static_cast<double>(rank)); }

AdapterSet init_adapter(AdapterMode mode, std::size_t d_model, std::size_t rank, double std, std::uint64_t seed,
                        std::size_t block) {
    if (rank == 0 || rank > d_model) {
        throw std::invalid_argument(fmt::format("adapter rank must be in [1, {}], got {}", d_model, rank));
    }
    auto make = [&](Slot slot) {
        return LowRankPair(Matrix(d_model, rank), gaussian_matrix(rank, d_model, std, slot_seed(seed, block, slot)));
    };
    if (mode == AdapterMode::Serial) {
        return AdapterSet::serial(make(Slot::Serial));
    }
    return AdapterSet::parallel({make(Slot::Q), make(Slot::K), make(Slot::V), make(Slot::Out)});
}

Matrix lora_delta(const LowRankPair& p) { return matmul(p.b(), p.a()); }

Matrix serial_transform(const Matrix& x, const LowRankPair& p) {
    if (p.d_in() != p.d_out() || x.rows() != p.d_in()) {
        throw std::invalid_argument(fmt::format("serial_transform: input {} does not fit pair B {} A {}",
                                                shape_string(x), shape_string(p.b()), shape_string(p.a())));
    }
    return add(x, matmul(p.b(), matmul(p.a(), x)));
}

Matrix merge_parallel(const Matrix& w, const LowRankPair& p) {
    if (w.rows() != p.d_out() || w.cols() != p.d_in()) {
        throw std::invalid_argument(fmt::format("merge_parallel: weight {} does not fit pair B {} A {}",
                                                shape_string(w), shape_string(p.b()), shape_string(p.a())));
    }
    return add(w, lora_delta(p));
}

Matrix merge_serial(const Matrix& w, const LowRankPair& p) {
    if (p.d_in() != p.d_out() || w.cols() != p.d_out()) {
        throw std::invalid_argument(fmt::format("merge_serial: weight {} does not fit pair B {} A {}",
                                                shape_string(w), shape_string(p.b()), shape_string(p.a())));
    }
    return add(w, matmul(matmul(w, p.b()), p.a()));
}

std::vector<SlotDims> square_projection_slots(std::size_t d_model) {
    std::vector<SlotDims> out;
    for (Slot s : kProjectionSlots) {
        out.push_back({std::string(to_string(s)), d_model, d_model});
    }
    return out;
}

std::size_t param_count(std::size_t d_model, std::size_t rank, std::size_t n_blocks, AdapterMode mode,
                        std::span<const SlotDims> slots) {
    if (mode == AdapterMode::Serial) {
        return n_blocks * rank * 2 * d_model;
    }
    if (slots.empty()) {
        throw std::invalid_argument("param_count: parallel mode needs at least one adapted slot");
    }
    std::size_t per_block = 0;
    for (const auto& s : slots) {
        per_block += rank * (s.d_in + s.d_out);
    }
    return n_blocks * per_block;
}

}  // namespace slora
