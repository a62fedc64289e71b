// SPDX-License-Identifier: Apache-2.0
//
// Synthetic fine-tuning tasks with known optima, and the dataset directory
// format:
//
//   dataset.json        {d_model, n_tokens, kind, n_classes}
//   inputs/{split}_{i:05}.mtx     split in {train, eval}
//   targets/{split}_{i:05}.mtx    regression only
//   labels.csv          "sample,label" rows, classification only
//   readout.mtx         n_classes x d_model head, classification only

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "slora/adapter.h"
#include "slora/attention.h"
#include "slora/encoder_graph.h"

namespace slora {

enum class TaskKind { Regression, Classification };

std::string_view to_string(TaskKind kind);

struct Split {
    std::vector<Matrix> inputs;
    std::vector<Matrix> targets;       // regression
    std::vector<std::size_t> labels;   // classification

    std::size_t size() const { return inputs.size(); }
    Supervision supervision(std::size_t i) const;
};

struct Dataset {
    TaskKind kind = TaskKind::Regression;
    std::size_t d_model = 0;
    std::size_t n_tokens = 0;
    std::size_t n_classes = 0;
    Split train;
    Split eval;
    std::optional<Matrix> readout;

    /// Shapes, label ranges and split sizes are consistent; train is nonempty.
    void validate() const;
    LossSpec loss_spec() const;
};

/// Adapter-free stack with N(0, std^2) projections; std defaults to 1/sqrt(d_model).
EncoderStack random_stack(std::size_t d_model, std::size_t heads, std::size_t n_blocks, std::uint64_t seed,
                          std::optional<double> std = std::nullopt);

/// Adapters with both factors Gaussian: B with std b_scale / sqrt(rank) and A
/// with std `a_std`, default 1/sqrt(d_model) so that A x keeps the scale of x.
std::vector<AdapterSet> random_adapters(AdapterMode mode, std::size_t d_model, std::size_t rank,
                                        std::size_t n_blocks, std::uint64_t seed, double b_scale = 1.0,
                                        std::optional<double> a_std = std::nullopt);

struct TeacherStudentConfig {
    std::size_t d_model = 16;
    std::size_t heads = 2;
    std::size_t n_blocks = 2;
    std::size_t n_tokens = 8;
    AdapterMode teacher_mode = AdapterMode::Serial;
    std::size_t teacher_rank = 2;
    std::size_t n_train = 256;
    std::size_t n_eval = 64;
    std::uint64_t seed = 0;
    /// Multiplies the teacher's B factors; 0 makes the teacher equal the base.
    double teacher_scale = 1.0;
    /// Std of the teacher's A factors; defaults to 0.5/sqrt(d_model).
    std::optional<double> teacher_a_std;
};

struct TeacherStudentTask {
    EncoderStack base;     // frozen, adapter-free: the student's starting point
    EncoderStack teacher;  // base plus the nonzero teacher adapters
    Dataset data;          // targets are teacher outputs
};

TeacherStudentTask gen_teacher_student(const TeacherStudentConfig& config);

struct ClassificationConfig {
    std::size_t d_model = 16;
    std::size_t n_tokens = 8;
    std::size_t n_classes = 2;
    std::size_t n_train = 256;
    std::size_t n_eval = 64;
    std::uint64_t seed = 0;
    /// Standard deviation of the Gaussian class centers; tokens add N(0, 1) noise.
    double center_std = 3.0;
};

/// Sample i belongs to class i % n_classes; its tokens are the class center
/// plus noise. The readout rows are the unit-normalized centers.
Dataset gen_classification(const ClassificationConfig& config);

void save_dataset(const std::filesystem::path& dir, const Dataset& data);
/// Throws IoError on a missing manifest, non-MTX1 payloads or shape
/// mismatches (naming the offending file).
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace slora
