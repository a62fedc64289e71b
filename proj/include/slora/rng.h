// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random streams.
//
// Every random quantity in the project comes from SplitMix64:
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// A uniform double in [0, 1) is (next() >> 11) * 2^-53. Normals use the
// Box-Muller transform on a pair (u1, u2) drawn in that order, with
// u1 mapped into (0, 1] as 1 - uniform:
//
//   r = sqrt(-2 ln u1);  z0 = r cos(2 pi u2);  z1 = r sin(2 pi u2)
//
// z0 is returned first and z1 is cached for the following call. Streams are
// therefore reproducible from the 64-bit seed alone in any language.

#pragma once

#include <cstdint>
#include <cstddef>
#include <optional>
#include <span>

namespace slora {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double next_unit();
    /// Uniform integer in [0, bound) by rejection; bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound);

private:
    std::uint64_t state_;
};

class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : bits_(seed) {}

    /// Standard normal variate.
    double next();

private:
    SplitMix64 bits_;
    std::optional<double> cached_;
};

/// Independent child seed for a numbered sub-stream: the first SplitMix64
/// output of state (base ^ (stream * 0xD1B54A32D192ED03)).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// In-place Fisher-Yates shuffle driven by `rng` (i from n-1 down to 1,
/// j = next_below(i + 1)).
void shuffle_indices(std::span<std::size_t> indices, SplitMix64& rng);

}  // namespace slora
