// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "slora/adapter.h"
#include "slora/linalg.h"
#include "slora/svd.h"

namespace slora {
namespace {

LowRankPair random_pair(std::size_t d_out, std::size_t d_in, std::size_t r, std::uint64_t seed) {
    return LowRankPair(gaussian_matrix(d_out, r, 1.0, 2 * seed), gaussian_matrix(r, d_in, 1.0, 2 * seed + 1));
}

TEST(LowRankPair, ValidatesShapes) {
    EXPECT_THROW(LowRankPair(Matrix(4, 2), Matrix(3, 4)), std::invalid_argument);
    EXPECT_THROW(LowRankPair(Matrix(2, 3), Matrix(3, 2)), std::invalid_argument);
    const LowRankPair p(Matrix(6, 2), Matrix(2, 5));
    EXPECT_EQ(p.rank(), 2u);
    EXPECT_EQ(p.d_out(), 6u);
    EXPECT_EQ(p.d_in(), 5u);
}

TEST(AdapterSet, ParallelRequiresSquareCommonRank) {
    const LowRankPair p = random_pair(4, 4, 2, 0);
    const LowRankPair other_rank = random_pair(4, 4, 1, 1);
    EXPECT_NO_THROW(AdapterSet::parallel({p, p, p, p}));
    EXPECT_THROW(AdapterSet::parallel({p, p, p, other_rank}), std::invalid_argument);
    EXPECT_THROW(AdapterSet::serial(random_pair(4, 3, 1, 2)), std::invalid_argument);
}

TEST(AdapterSet, SlotsFollowMode) {
    const AdapterSet par = init_adapter(AdapterMode::Parallel, 8, 2, 0.5, 1);
    const AdapterSet ser = init_adapter(AdapterMode::Serial, 8, 2, 0.5, 1);
    EXPECT_EQ(par.slots(), (std::vector<Slot>{Slot::Q, Slot::K, Slot::V, Slot::Out}));
    EXPECT_EQ(ser.slots(), (std::vector<Slot>{Slot::Serial}));
    EXPECT_EQ(par.find(Slot::Serial), nullptr);
    EXPECT_EQ(ser.find(Slot::Q), nullptr);
    EXPECT_THROW(ser.pair(Slot::Out), std::invalid_argument);
}

TEST(InitAdapter, DeltaIsZeroForEveryPair) {
    for (AdapterMode mode : {AdapterMode::Parallel, AdapterMode::Serial}) {
        const AdapterSet set = init_adapter(mode, 8, 3, default_init_std(3), 5);
        for (Slot s : set.slots()) {
            EXPECT_EQ(lora_delta(set.pair(s)), Matrix(8, 8)) << to_string(s);
        }
    }
}

TEST(InitAdapter, SerialShapeContract) {
    const AdapterSet set = init_adapter(AdapterMode::Serial, 8, 2, default_init_std(2), 0);
    const LowRankPair& p = set.pair(Slot::Serial);
    EXPECT_EQ(p.b(), Matrix(8, 2));
    EXPECT_EQ(p.a().rows(), 2u);
    EXPECT_EQ(p.a().cols(), 8u);
    EXPECT_GT(max_abs(p.a()), 0.0);
}

TEST(InitAdapter, EqualSeedsGiveEqualFactors) {
    EXPECT_EQ(init_adapter(AdapterMode::Parallel, 8, 2, 0.7, 9), init_adapter(AdapterMode::Parallel, 8, 2, 0.7, 9));
    EXPECT_NE(init_adapter(AdapterMode::Parallel, 8, 2, 0.7, 9), init_adapter(AdapterMode::Parallel, 8, 2, 0.7, 10));
}

TEST(InitAdapter, SlotsAndBlocksGetDistinctSeeds) {
    const AdapterSet set = init_adapter(AdapterMode::Parallel, 8, 2, 1.0, 3);
    std::set<std::vector<double>> seen;
    for (Slot s : set.slots()) {
        const auto a = set.pair(s).a().data();
        seen.insert({a.begin(), a.end()});
    }
    EXPECT_EQ(seen.size(), 4u);
    const AdapterSet b0 = init_adapter(AdapterMode::Serial, 8, 2, 1.0, 3, 0);
    const AdapterSet b1 = init_adapter(AdapterMode::Serial, 8, 2, 1.0, 3, 1);
    EXPECT_NE(b0, b1);
}

TEST(InitAdapter, SeedDerivationUsesDocumentedOffsets) {
    EXPECT_EQ(slot_seed(100, 0, Slot::Q), 101u);
    EXPECT_EQ(slot_seed(100, 0, Slot::Out), 104u);
    EXPECT_EQ(slot_seed(100, 2, Slot::Serial), 100u + 32u + 5u);
    const AdapterSet set = init_adapter(AdapterMode::Serial, 8, 2, 0.25, 100, 2);
    EXPECT_EQ(set.pair(Slot::Serial).a(), gaussian_matrix(2, 8, 0.25, 137));
}

TEST(InitAdapter, RejectsRankAboveModelDim) {
    EXPECT_THROW(init_adapter(AdapterMode::Serial, 4, 5, 1.0, 0), std::invalid_argument);
    EXPECT_THROW(init_adapter(AdapterMode::Serial, 4, 0, 1.0, 0), std::invalid_argument);
}

TEST(Names, RoundTrip) {
    for (Slot s : {Slot::Q, Slot::K, Slot::V, Slot::Out, Slot::Serial}) EXPECT_EQ(parse_slot(to_string(s)), s);
    for (AdapterMode m : {AdapterMode::Parallel, AdapterMode::Serial}) EXPECT_EQ(parse_mode(to_string(m)), m);
    EXPECT_THROW(parse_slot("w"), std::invalid_argument);
    EXPECT_THROW(parse_mode("dora"), std::invalid_argument);
}

TEST(LoraDelta, ZeroB) { EXPECT_EQ(lora_delta(LowRankPair(Matrix(3, 1), Matrix(1, 3, {1, 2, 3}))), Matrix(3, 3)); }

TEST(LoraDelta, HandArithmetic) {
    const LowRankPair p(Matrix::from_rows({{1}, {0}}), Matrix::from_rows({{2, 3}}));
    EXPECT_EQ(lora_delta(p), Matrix::from_rows({{2, 3}, {0, 0}}));
}

TEST(LoraDelta, RankThreeOnTenByTen) {
    const Matrix delta = lora_delta(random_pair(10, 10, 3, 4));
    EXPECT_EQ(effective_rank(svd(delta).s, 1e-8), 3u);
}

TEST(SerialTransform, ZeroBIsBitwiseIdentity) {
    const Matrix x = gaussian_matrix(6, 4, 1.0, 1);
    EXPECT_EQ(serial_transform(x, LowRankPair(Matrix(6, 2), gaussian_matrix(2, 6, 1.0, 2))), x);
}

TEST(SerialTransform, HandArithmetic) {
    const LowRankPair p(Matrix::from_rows({{1}, {0}}), Matrix::from_rows({{0, 1}}));
    EXPECT_EQ(serial_transform(Matrix::from_rows({{5}, {7}}), p), Matrix::from_rows({{12}, {7}}));
}

TEST(SerialTransform, MatchesExplicitIdentityPlusDelta) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const LowRankPair p = random_pair(9, 9, 2, s);
        const Matrix x = gaussian_matrix(9, 5, 1.0, 100 + s);
        const Matrix want = matmul(add(Matrix::identity(9), lora_delta(p)), x);
        const Matrix got = serial_transform(x, p);
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
    }
}

TEST(SerialTransform, RejectsMismatch) {
    EXPECT_THROW(serial_transform(Matrix(5, 2), random_pair(4, 4, 1, 0)), std::invalid_argument);
}

TEST(MergeParallel, Cases) {
    const Matrix w = gaussian_matrix(8, 8, 1.0, 3);
    EXPECT_EQ(merge_parallel(w, LowRankPair(Matrix(8, 2), gaussian_matrix(2, 8, 1.0, 4))), w);
    const LowRankPair p = random_pair(8, 8, 2, 5);
    EXPECT_EQ(merge_parallel(Matrix(8, 8), p), lora_delta(p));
    EXPECT_THROW(merge_parallel(Matrix(8, 7), p), std::invalid_argument);
}

TEST(MergeParallel, MergedForwardMatchesUnmerged) {
    const Matrix w = gaussian_matrix(8, 8, 1.0, 6);
    const LowRankPair p = random_pair(8, 8, 2, 7);
    const Matrix x = gaussian_matrix(8, 3, 1.0, 8);
    const Matrix live = add(matmul(w, x), matmul(p.b(), matmul(p.a(), x)));
    const Matrix merged = matmul(merge_parallel(w, p), x);
    for (std::size_t i = 0; i < live.size(); ++i) EXPECT_NEAR(merged.data()[i], live.data()[i], 1e-12);
}

TEST(MergeSerial, Cases) {
    const Matrix w = gaussian_matrix(8, 8, 1.0, 9);
    EXPECT_EQ(merge_serial(w, LowRankPair(Matrix(8, 2), gaussian_matrix(2, 8, 1.0, 10))), w);
    const LowRankPair p = random_pair(8, 8, 2, 11);
    EXPECT_LT(relative_error(merge_serial(Matrix::identity(8), p), merge_parallel(Matrix::identity(8), p)), 1e-15);
    EXPECT_THROW(merge_serial(Matrix(8, 6), p), std::invalid_argument);
}

TEST(MergeSerial, EquivalentToSerialTransformOverRandomInputs) {
    const Matrix w = gaussian_matrix(8, 8, 1.0, 12);
    const LowRankPair p = random_pair(8, 8, 2, 13);
    const Matrix merged = merge_serial(w, p);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Matrix x = gaussian_matrix(8, 1, 1.0, 1000 + s);
        const Matrix a = matmul(merged, x);
        const Matrix b = matmul(w, serial_transform(x, p));
        for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.data()[i], b.data()[i], 1e-12);
    }
}

TEST(MergeSerial, DeltaRankIsBounded) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Matrix w = gaussian_matrix(12, 12, 1.0, 50 + s);
        const LowRankPair p = random_pair(12, 12, 3, 60 + s);
        EXPECT_LE(effective_rank(svd(subtract(merge_serial(w, p), w)).s, 1e-8), 3u);
        EXPECT_LE(effective_rank(svd(lora_delta(p)).s, 1e-8), 3u);
    }
}

TEST(ParamCount, SmallExample) {
    const auto slots = square_projection_slots(8);
    EXPECT_EQ(param_count(8, 2, 1, AdapterMode::Parallel, slots), 128u);
    EXPECT_EQ(param_count(8, 2, 1, AdapterMode::Serial, slots), 32u);
}

TEST(ParamCount, RatioEqualsSlotCountForSquareSlots) {
    for (std::size_t d : {8u, 16u, 64u, 768u}) {
        for (std::size_t r : {1u, 2u, 8u}) {
            for (std::size_t blocks : {1u, 3u, 12u}) {
                const auto all = square_projection_slots(d);
                EXPECT_EQ(param_count(d, r, blocks, AdapterMode::Parallel, all),
                          4 * param_count(d, r, blocks, AdapterMode::Serial, all));
                const std::vector<SlotDims> qv = {all[0], all[2]};
                EXPECT_EQ(param_count(d, r, blocks, AdapterMode::Parallel, qv),
                          2 * param_count(d, r, blocks, AdapterMode::Serial, qv));
            }
        }
    }
}

TEST(ParamCount, RectangularSlotsUseTheirOwnDims) {
    const std::vector<SlotDims> slots = {{"fc", 32, 8}};
    EXPECT_EQ(param_count(8, 2, 3, AdapterMode::Parallel, slots), 3u * 2u * 40u);
}

TEST(ParamCount, EmptyParallelSlotsRejected) {
    EXPECT_THROW(param_count(8, 2, 1, AdapterMode::Parallel, {}), std::invalid_argument);
}

TEST(ParamCount, PublishedTotalsExhibitFourfoldRatio) {
    // Parallel and serial totals, in millions, as published.
    const double published[3][2] = {{3.84, 0.96}, {18.87, 4.72}, {19.32, 4.83}};
    for (const auto& row : published) {
        EXPECT_NEAR(row[0] / row[1] / 4.0, 1.0, 2e-3);
    }
}

}  // namespace
}  // namespace slora
