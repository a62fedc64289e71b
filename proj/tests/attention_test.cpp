// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "slora/adapter.h"
#include "slora/attention.h"
#include "slora/linalg.h"
#include "slora/tasks.h"

namespace slora {
namespace {

// Scaled dot-product attention written token by token.
Matrix loop_mha(const Matrix& x, const MhaWeights& w) {
    const std::size_t d = x.rows();
    const std::size_t n = x.cols();
    const std::size_t dh = d / w.heads;
    const Matrix q = matmul(w.wq, x);
    const Matrix k = matmul(w.wk, x);
    const Matrix v = matmul(w.wv, x);
    Matrix concat(d, n);
    for (std::size_t h = 0; h < w.heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> score(n);
            double top = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q(h * dh + c, i) * k(h * dh + c, j);
                score[j] = s / std::sqrt(static_cast<double>(dh));
                top = std::max(top, score[j]);
            }
            double z = 0.0;
            for (double& s : score) {
                s = std::exp(s - top);
                z += s;
            }
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += score[j] / z * v(h * dh + c, j);
                concat(h * dh + c, i) = acc;
            }
        }
    }
    return matmul(w.wout, concat);
}

std::vector<AdapterSet> fresh_adapters(AdapterMode mode, std::size_t d, std::size_t r, std::size_t blocks,
                                       std::uint64_t seed) {
    std::vector<AdapterSet> out;
    for (std::size_t b = 0; b < blocks; ++b) out.push_back(init_adapter(mode, d, r, default_init_std(r), seed, b));
    return out;
}

TEST(Softmax, UniformRow) {
    const Matrix p = softmax_rows(Matrix::from_rows({{0, 0}}));
    EXPECT_EQ(p(0, 0), 0.5);
    EXPECT_EQ(p(0, 1), 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    const Matrix p = softmax_rows(Matrix::from_rows({{1000, 0}}));
    EXPECT_EQ(p(0, 0), 1.0);
    EXPECT_LT(p(0, 1), 1e-300);
}

TEST(Softmax, RowsSumToOne) {
    const Matrix p = softmax_rows(gaussian_matrix(4, 4, 3.0, 2));
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_GE(p(i, j), 0.0);
            s += p(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Mha, ZeroInputGivesZeroOutput) {
    const EncoderStack stack = random_stack(8, 2, 1, 3);
    EXPECT_EQ(mha_forward(Matrix(8, 4), stack.blocks[0].weights, nullptr), Matrix(8, 4));
}

TEST(Mha, MatchesTokenLoopOracle) {
    for (std::size_t heads : {1u, 2u, 4u}) {
        const EncoderStack stack = random_stack(8, heads, 1, 10 + heads);
        const Matrix x = gaussian_matrix(8, 5, 1.0, 20 + heads);
        const Matrix got = mha_forward(x, stack.blocks[0].weights, nullptr);
        EXPECT_LT(relative_error(got, loop_mha(x, stack.blocks[0].weights)), 1e-12) << heads;
    }
}

TEST(Mha, HeadExtremesAreFiniteAndDifferent) {
    const EncoderStack one = random_stack(8, 1, 1, 4);
    MhaWeights split = one.blocks[0].weights;
    split.heads = 8;
    const Matrix x = gaussian_matrix(8, 6, 1.0, 5);
    const Matrix a = mha_forward(x, one.blocks[0].weights, nullptr);
    const Matrix b = mha_forward(x, split, nullptr);
    EXPECT_TRUE(a.same_shape(x));
    EXPECT_TRUE(b.same_shape(x));
    EXPECT_NE(a, b);
}

TEST(Mha, RejectsShapeAndHeadMismatch) {
    const EncoderStack stack = random_stack(8, 2, 1, 6);
    EXPECT_THROW(mha_forward(Matrix(6, 3), stack.blocks[0].weights, nullptr), std::invalid_argument);
    MhaWeights bad = stack.blocks[0].weights;
    bad.heads = 3;
    EXPECT_THROW(mha_forward(Matrix(8, 3), bad, nullptr), std::invalid_argument);
}

TEST(Mha, SerialModeDoesNotAdaptOutputProjection) {
    const EncoderStack stack = random_stack(8, 2, 1, 7);
    const AdapterSet ad = random_adapters(AdapterMode::Serial, 8, 2, 1, 8).front();
    const Matrix x = gaussian_matrix(8, 4, 1.0, 9);
    MhaWeights merged = stack.blocks[0].weights;
    for (Slot s : {Slot::Q, Slot::K, Slot::V}) merged.weight(s) = merge_serial(merged.weight(s), ad.pair(Slot::Serial));
    EXPECT_LT(relative_error(mha_forward(x, stack.blocks[0].weights, &ad), mha_forward(x, merged, nullptr)), 1e-12);
}

TEST(Encoder, ZeroBlocksIsIdentity) {
    const EncoderStack stack{8, 2, {}};
    const Matrix x = gaussian_matrix(8, 3, 1.0, 1);
    EXPECT_EQ(encoder_forward(x, stack), x);
}

TEST(Encoder, ZeroWeightBlockIsIdentity) {
    const Matrix z(8, 8);
    const EncoderStack stack{8, 2, {{MhaWeights{z, z, z, z, 2}, std::nullopt}}};
    const Matrix x = gaussian_matrix(8, 3, 1.0, 2);
    EXPECT_EQ(encoder_forward(x, stack), x);
}

TEST(Encoder, MatchesUnrolledComposition) {
    const EncoderStack stack = random_stack(16, 2, 2, 3);
    const Matrix x = gaussian_matrix(16, 5, 1.0, 4);
    const Matrix h1 = add(x, loop_mha(x, stack.blocks[0].weights));
    const Matrix h2 = add(h1, loop_mha(h1, stack.blocks[1].weights));
    EXPECT_LT(relative_error(encoder_forward(x, stack), h2), 1e-12);
}

TEST(Encoder, FreshAdaptersAreBitwiseNoOp) {
    for (AdapterMode mode : {AdapterMode::Parallel, AdapterMode::Serial}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const EncoderStack base = random_stack(16, 2, 2, seed);
            const EncoderStack adapted = with_adapters(base, fresh_adapters(mode, 16, 2, 2, seed));
            const Matrix x = gaussian_matrix(16, 5, 1.0, 100 + seed);
            EXPECT_EQ(encoder_forward(x, adapted), encoder_forward(x, base)) << to_string(mode) << seed;
        }
    }
}

TEST(Encoder, FoldedMatchesLiveAdapters) {
    for (AdapterMode mode : {AdapterMode::Parallel, AdapterMode::Serial}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const EncoderStack base = random_stack(16, 2, 2, seed);
            const EncoderStack live = with_adapters(base, random_adapters(mode, 16, 2, 2, seed + 50));
            const EncoderStack folded = fold_adapters(live);
            EXPECT_FALSE(folded.adapter_mode().has_value());
            const Matrix x = gaussian_matrix(16, 5, 1.0, 200 + seed);
            EXPECT_LT(relative_error(encoder_forward(x, folded), encoder_forward(x, live)), 1e-10);
        }
    }
}

TEST(Encoder, SerialFoldLeavesOutputProjection) {
    const EncoderStack live = with_adapters(random_stack(8, 2, 2, 1), random_adapters(AdapterMode::Serial, 8, 2, 2, 2));
    const EncoderStack folded = fold_adapters(live);
    for (std::size_t b = 0; b < 2; ++b) {
        EXPECT_EQ(folded.blocks[b].weights.wout, live.blocks[b].weights.wout);
        EXPECT_NE(folded.blocks[b].weights.wq, live.blocks[b].weights.wq);
    }
}

TEST(Encoder, DeterministicOutputs) {
    const EncoderStack live = with_adapters(random_stack(16, 4, 2, 9), random_adapters(AdapterMode::Parallel, 16, 3, 2, 9));
    const Matrix x = gaussian_matrix(16, 7, 1.0, 9);
    EXPECT_EQ(encoder_forward(x, live), encoder_forward(x, live));
}

TEST(Stack, RejectsMixedAdapterModes) {
    EncoderStack stack = with_adapters(random_stack(8, 2, 2, 1), fresh_adapters(AdapterMode::Serial, 8, 2, 2, 0));
    stack.blocks[1].adapter = init_adapter(AdapterMode::Parallel, 8, 2, 1.0, 0);
    EXPECT_THROW(stack.validate(), std::invalid_argument);
    stack.blocks[1].adapter.reset();
    EXPECT_THROW(stack.validate(), std::invalid_argument);
    EXPECT_THROW(with_adapters(random_stack(8, 2, 2, 1), fresh_adapters(AdapterMode::Serial, 8, 2, 1, 0)),
                 std::invalid_argument);
}

}  // namespace
}  // namespace slora
