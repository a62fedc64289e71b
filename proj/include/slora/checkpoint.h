// SPDX-License-Identifier: Apache-2.0
//
// On-disk checkpoints.
//
//   stack:   block{i}.{wq|wk|wv|wout}.mtx + model.json {d_model, heads, n_blocks}
//   adapter: block{i}.{slot}.{A|B}.mtx   + adapter.json {mode, d_model, rank, n_blocks, seed, std}
//
// slot is one of q, k, v, out (parallel) or serial.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "slora/adapter.h"
#include "slora/attention.h"

namespace slora {

struct AdapterCheckpoint {
    std::vector<AdapterSet> adapters;
    std::uint64_t seed = 0;
    double std = 0.0;
};

/// Writes the stack's frozen weights; any attached adapters are not saved.
void save_stack(const std::filesystem::path& dir, const EncoderStack& stack);
EncoderStack load_stack(const std::filesystem::path& dir);

void save_adapters(const std::filesystem::path& dir, const AdapterCheckpoint& checkpoint);
AdapterCheckpoint load_adapters(const std::filesystem::path& dir);

}  // namespace slora
