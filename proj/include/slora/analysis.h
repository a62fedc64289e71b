// SPDX-License-Identifier: Apache-2.0
//
// Singular value spectra of base and adapted projections, and parameter
// count comparisons between parallel and serial adapters.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slora/adapter.h"
#include "slora/attention.h"

namespace slora {

struct SpectrumRow {
    std::size_t block;
    Slot slot;
    std::string variant;  // base, parallel or serial
    std::size_t index;
    double sigma;
};

/// For each block and slot (subset of Q, K, V): the base spectrum, plus
/// the spectrum of the merged weight for whichever adapter mode is attached.
/// SVD failures are rethrown naming the block, slot and variant.
std::vector<SpectrumRow> spectrum_rows(const EncoderStack& stack, std::span<const Slot> slots);

/// Header "block,slot,variant,index,sigma".
std::string spectrum_csv(std::span<const SpectrumRow> rows);

std::vector<SpectrumRow> spectrum_report(const EncoderStack& stack, std::span<const Slot> slots,
                                         const std::filesystem::path& out_path);

struct ModelSpec {
    std::string name;
    std::size_t d_model;
    std::size_t n_blocks;
    std::size_t rank;
    std::vector<SlotDims> slots;
};

struct ParamRow {
    std::string name;
    std::size_t parallel_count;
    std::size_t serial_count;
    double ratio;
};

/// Accepts {"models": [...]} or a bare array. Each model has name, d_model,
/// n_blocks, rank and slots; a slot is a projection name (square d_model)
/// or {"name", "d_out", "d_in"}.
std::vector<ModelSpec> parse_model_specs(const std::string& json_text);

std::vector<ParamRow> param_rows(std::span<const ModelSpec> specs);
/// Header "name,parallel_count,serial_count,ratio"; ratio with 6 decimals.
std::string param_csv(std::span<const ParamRow> rows);
std::vector<ParamRow> param_report(std::span<const ModelSpec> specs, const std::filesystem::path& out_path);

}  // namespace slora
