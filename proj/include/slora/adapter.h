// SPDX-License-Identifier: Apache-2.0
//
// Low-rank factor pairs and their attachment to an attention block.
//
// Parallel mode (standard LoRA) gives each projection W in {Wq, Wk, Wv, Wout}
// its own pair and uses W + B A. Serial mode shares one square pair per block
// and feeds (I + B A) x into the Q, K and V projections; Wout stays unadapted.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slora/linalg.h"

namespace slora {

enum class AdapterMode { Parallel, Serial };
enum class Slot { Q, K, V, Out, Serial };
enum class Factor { A, B };

inline constexpr std::array<Slot, 4> kProjectionSlots = {Slot::Q, Slot::K, Slot::V, Slot::Out};

std::string_view to_string(AdapterMode mode);
std::string_view to_string(Slot slot);
std::string_view to_string(Factor factor);
AdapterMode parse_mode(std::string_view text);
Slot parse_slot(std::string_view text);

/// Seed offset of a slot inside its block: Q 1, K 2, V 3, Out 4, Serial 5.
std::uint64_t slot_seed_offset(Slot slot);
/// base + 16 * block + slot_seed_offset(slot).
std::uint64_t slot_seed(std::uint64_t base, std::size_t block, Slot slot);

/// Delta W = B A with B: d_out x r and A: r x d_in.
class LowRankPair {
public:
    LowRankPair(Matrix b, Matrix a);

    const Matrix& b() const { return b_; }
    const Matrix& a() const { return a_; }
    const Matrix& factor(Factor f) const { return f == Factor::A ? a_ : b_; }
    /// In-place access to entries; the shape cannot change through it.
    std::span<double> factor_data(Factor f) { return f == Factor::A ? a_.data() : b_.data(); }

    std::size_t rank() const { return a_.rows(); }
    std::size_t d_out() const { return b_.rows(); }
    std::size_t d_in() const { return a_.cols(); }

    friend bool operator==(const LowRankPair&, const LowRankPair&) = default;

private:
    Matrix b_;
    Matrix a_;
};

class AdapterSet {
public:
    /// Pairs ordered Q, K, V, Out; each must be d x d with a common rank.
    static AdapterSet parallel(std::array<LowRankPair, 4> pairs);
    static AdapterSet serial(LowRankPair pair);

    AdapterMode mode() const { return mode_; }
    std::size_t d_model() const;
    std::size_t rank() const;

    /// Populated slots: Q, K, V, Out in parallel mode, Serial in serial mode.
    std::vector<Slot> slots() const;
    /// nullptr when the slot is not populated in this mode.
    const LowRankPair* find(Slot slot) const;
    const LowRankPair& pair(Slot slot) const;
    LowRankPair& pair(Slot slot);

    friend bool operator==(const AdapterSet&, const AdapterSet&) = default;

private:
    AdapterSet(AdapterMode mode, std::vector<LowRankPair> pairs) : mode_(mode), pairs_(std::move(pairs)) {}

    AdapterMode mode_;
    std::vector<LowRankPair> pairs_;
};

/// A factors ~ gaussian_matrix(std, slot_seed(seed, block, slot)); B factors zero.
AdapterSet init_adapter(AdapterMode mode, std::size_t d_model, std::size_t rank, double std, std::uint64_t seed,
                        std::size_t block = 0);

/// Default A-factor standard deviation, 1/sqrt(rank).
double default_init_std(std::size_t rank);

Matrix lora_delta(const LowRankPair& p);

/// x + B (A x), without forming I + B A.
Matrix serial_transform(const Matrix& x, const LowRankPair& p);

/// W + B A.
Matrix merge_parallel(const Matrix& w, const LowRankPair& p);

/// W + (W B) A, i.e. W (I + B A).
Matrix merge_serial(const Matrix& w, const LowRankPair& p);

/// Shape of one adaptable projection (d_out x d_in).
struct SlotDims {
    std::string name;
    std::size_t d_out;
    std::size_t d_in;
};

/// The four attention projections as square d_model x d_model slots.
std::vector<SlotDims> square_projection_slots(std::size_t d_model);

/// Trainable adapter entries over n_blocks blocks.
/// Parallel: n_blocks * sum over slots of r * (d_in + d_out); `slots` must be nonempty.
/// Serial: n_blocks * r * 2 * d_model; `slots` is ignored.
std::size_t param_count(std::size_t d_model, std::size_t rank, std::size_t n_blocks, AdapterMode mode,
                        std::span<const SlotDims> slots);

}  // namespace slora
