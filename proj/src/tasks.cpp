// SPDX-License-Identifier: Apache-2.0

#include "slora/tasks.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "slora/mtx_io.h"
#include "slora/rng.h"

namespace slora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Sub-stream ids under the task seed.
constexpr std::uint64_t kStreamBase = 1;
constexpr std::uint64_t kStreamTeacher = 2;
constexpr std::uint64_t kStreamTrainInputs = 3;
constexpr std::uint64_t kStreamEvalInputs = 4;
constexpr std::uint64_t kStreamCenters = 5;

std::vector<Matrix> gaussian_inputs(std::size_t count, std::size_t d, std::size_t n, std::uint64_t seed) {
    std::vector<Matrix> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(gaussian_matrix(d, n, 1.0, derive_seed(seed, i)));
    }
    return out;
}

void check_split(const Split& s, const Dataset& d, const char* name) {
    for (std::size_t i = 0; i < s.inputs.size(); ++i) {
        if (s.inputs[i].rows() != d.d_model || s.inputs[i].cols() != d.n_tokens) {
            throw std::invalid_argument(fmt::format("{} input {} is {}, expected {}x{}", name, i,
                                                    shape_string(s.inputs[i]), d.d_model, d.n_tokens));
        }
    }
    if (d.kind == TaskKind::Regression) {
        if (s.targets.size() != s.inputs.size()) {
            throw std::invalid_argument(
                fmt::format("{}: {} inputs but {} targets", name, s.inputs.size(), s.targets.size()));
        }
        for (std::size_t i = 0; i < s.targets.size(); ++i) {
            if (!s.targets[i].same_shape(s.inputs[i])) {
                throw std::invalid_argument(fmt::format("{} target {} is {}, expected {}x{}", name, i,
                                                        shape_string(s.targets[i]), d.d_model, d.n_tokens));
            }
        }
    } else {
        if (s.labels.size() != s.inputs.size()) {
            throw std::invalid_argument(
                fmt::format("{}: {} inputs but {} labels", name, s.inputs.size(), s.labels.size()));
        }
        for (std::size_t i = 0; i < s.labels.size(); ++i) {
            if (s.labels[i] >= d.n_classes) {
                throw std::invalid_argument(
                    fmt::format("{} label {} is {}, n_classes {}", name, i, s.labels[i], d.n_classes));
            }
        }
    }
}

std::string sample_name(const char* split, std::size_t i) { return fmt::format("{}_{:05}", split, i); }

}  // namespace

std::string_view to_string(TaskKind kind) { return kind == TaskKind::Regression ? "regression" : "classification"; }

Supervision Split::supervision(std::size_t i) const {
    Supervision s;
    if (!targets.empty()) s.target = &targets.at(i);
    if (!labels.empty()) s.label = labels.at(i);
    return s;
}

void Dataset::validate() const {
    if (d_model == 0 || n_tokens == 0) {
        throw std::invalid_argument("dataset: d_model and n_tokens must be positive");
    }
    if (train.size() == 0) {
        throw std::invalid_argument("dataset: empty training split");
    }
    if (kind == TaskKind::Classification) {
        if (n_classes < 2) {
            throw std::invalid_argument("dataset: classification needs n_classes >= 2");
        }
        if (!readout || readout->rows() != n_classes || readout->cols() != d_model) {
            throw std::invalid_argument(fmt::format("dataset: readout must be {}x{}", n_classes, d_model));
        }
    }
    check_split(train, *this, "train");
    check_split(eval, *this, "eval");
}

LossSpec Dataset::loss_spec() const {
    if (kind == TaskKind::Regression) {
        return LossSpec{LossKind::Mse, std::nullopt};
    }
    return LossSpec{LossKind::CrossEntropy, readout};
}

EncoderStack random_stack(std::size_t d_model, std::size_t heads, std::size_t n_blocks, std::uint64_t seed,
                          std::optional<double> std) {
    const double sd = std.value_or(1.0 / std::sqrt(static_cast<double>(d_model)));
    EncoderStack stack{d_model, heads, {}};
    for (std::size_t b = 0; b < n_blocks; ++b) {
        auto w = [&](std::uint64_t s) { return gaussian_matrix(d_model, d_model, sd, derive_seed(seed, 4 * b + s)); };
        stack.blocks.push_back({MhaWeights{w(0), w(1), w(2), w(3), heads}, std::nullopt});
    }
    stack.validate();
    return stack;
}

std::vector<AdapterSet> random_adapters(AdapterMode mode, std::size_t d_model, std::size_t rank,
                                        std::size_t n_blocks, std::uint64_t seed, double b_scale,
                                        std::optional<double> a_std) {
    const double a_sd = a_std.value_or(1.0 / std::sqrt(static_cast<double>(d_model)));
    const double b_sd = b_scale * default_init_std(rank);
    const std::uint64_t a_seed = derive_seed(seed, 1);
    const std::uint64_t b_seed = derive_seed(seed, 2);
    std::vector<AdapterSet> out;
    for (std::size_t blk = 0; blk < n_blocks; ++blk) {
        auto make = [&](Slot s) {
            return LowRankPair(gaussian_matrix(d_model, rank, b_sd, slot_seed(b_seed, blk, s)),
                               gaussian_matrix(rank, d_model, a_sd, slot_seed(a_seed, blk, s)));
        };
        if (rank == 0 || rank > d_model) {
            throw std::invalid_argument(fmt::format("adapter rank must be in [1, {}], got {}", d_model, rank));
        }
        if (mode == AdapterMode::Serial) {
            out.push_back(AdapterSet::serial(make(Slot::Serial)));
        } else {
            out.push_back(AdapterSet::parallel({make(Slot::Q), make(Slot::K), make(Slot::V), make(Slot::Out)}));
        }
    }
    return out;
}

TeacherStudentTask gen_teacher_student(const TeacherStudentConfig& c) {
    if (c.teacher_rank == 0 || c.teacher_rank > c.d_model) {
        throw std::invalid_argument(
            fmt::format("teacher rank must be in [1, {}], got {}", c.d_model, c.teacher_rank));
    }
    TeacherStudentTask task{random_stack(c.d_model, c.heads, c.n_blocks, derive_seed(c.seed, kStreamBase)), {}, {}};
    task.teacher = with_adapters(task.base, random_adapters(c.teacher_mode, c.d_model, c.teacher_rank, c.n_blocks,
                                                            derive_seed(c.seed, kStreamTeacher), c.teacher_scale,
                                                            c.teacher_a_std.value_or(0.5 / std::sqrt(static_cast<double>(c.d_model)))));
    Dataset& d = task.data;
    d.kind = TaskKind::Regression;
    d.d_model = c.d_model;
    d.n_tokens = c.n_tokens;
    d.train.inputs = gaussian_inputs(c.n_train, c.d_model, c.n_tokens, derive_seed(c.seed, kStreamTrainInputs));
    d.eval.inputs = gaussian_inputs(c.n_eval, c.d_model, c.n_tokens, derive_seed(c.seed, kStreamEvalInputs));
    for (Split* s : {&d.train, &d.eval}) {
        for (const auto& x : s->inputs) {
            s->targets.push_back(encoder_forward(x, task.teacher));
        }
    }
    d.validate();
    return task;
}

Dataset gen_classification(const ClassificationConfig& c) {
    if (c.n_classes < 2) {
        throw std::invalid_argument(fmt::format("classification needs n_classes >= 2, got {}", c.n_classes));
    }
    const Matrix centers = gaussian_matrix(c.n_classes, c.d_model, c.center_std, derive_seed(c.seed, kStreamCenters));
    Dataset d;
    d.kind = TaskKind::Classification;
    d.d_model = c.d_model;
    d.n_tokens = c.n_tokens;
    d.n_classes = c.n_classes;
    Matrix readout = centers;
    for (std::size_t k = 0; k < c.n_classes; ++k) {
        double norm = 0.0;
        for (std::size_t j = 0; j < c.d_model; ++j) norm += centers(k, j) * centers(k, j);
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < c.d_model; ++j) readout(k, j) = norm > 0.0 ? centers(k, j) / norm : 0.0;
    }
    d.readout = std::move(readout);

    auto fill = [&](Split& s, std::size_t count, std::uint64_t stream) {
        s.inputs = gaussian_inputs(count, c.d_model, c.n_tokens, derive_seed(c.seed, stream));
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t label = i % c.n_classes;
            Matrix& x = s.inputs[i];
            for (std::size_t r = 0; r < c.d_model; ++r) {
                for (std::size_t t = 0; t < c.n_tokens; ++t) {
                    x(r, t) += centers(label, r);
                }
            }
            s.labels.push_back(label);
        }
    };
    fill(d.train, c.n_train, kStreamTrainInputs);
    fill(d.eval, c.n_eval, kStreamEvalInputs);
    d.validate();
    return d;
}

void save_dataset(const fs::path& dir, const Dataset& data) {
    data.validate();
    fs::create_directories(dir / "inputs");
    const bool regression = data.kind == TaskKind::Regression;
    if (regression) {
        fs::create_directories(dir / "targets");
    }
    std::string labels = "sample,label\n";
    for (auto [split, name] : {std::pair{&data.train, "train"}, std::pair{&data.eval, "eval"}}) {
        for (std::size_t i = 0; i < split->size(); ++i) {
            const std::string stem = sample_name(name, i);
            write_mtx(dir / "inputs" / (stem + ".mtx"), split->inputs[i]);
            if (regression) {
                write_mtx(dir / "targets" / (stem + ".mtx"), split->targets[i]);
            } else {
                labels += fmt::format("{},{}\n", stem, split->labels[i]);
            }
        }
    }
    if (!regression) {
        write_text(dir / "labels.csv", labels);
        write_mtx(dir / "readout.mtx", *data.readout);
    }
    const json manifest = {{"d_model", data.d_model},
                           {"n_tokens", data.n_tokens},
                           {"kind", std::string(to_string(data.kind))},
                           {"n_classes", data.n_classes}};
    write_text(dir / "dataset.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "dataset.json";
    if (!fs::exists(manifest_path)) {
        throw IoError(fmt::format("missing manifest {}", manifest_path.string()));
    }
    json manifest;
    Dataset d;
    try {
        manifest = json::parse(read_text(manifest_path));
        d.d_model = manifest.at("d_model").get<std::size_t>();
        d.n_tokens = manifest.at("n_tokens").get<std::size_t>();
        const auto kind = manifest.at("kind").get<std::string>();
        if (kind == "regression") {
            d.kind = TaskKind::Regression;
        } else if (kind == "classification") {
            d.kind = TaskKind::Classification;
        } else {
            throw IoError(fmt::format("{}: unknown kind '{}'", manifest_path.string(), kind));
        }
        d.n_classes = manifest.value("n_classes", std::size_t{0});
    } catch (const json::exception& e) {
        throw IoError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }

    std::vector<std::string> stems;
    if (fs::is_directory(dir / "inputs")) {
        for (const auto& entry : fs::directory_iterator(dir / "inputs")) {
            if (entry.path().extension() == ".mtx") {
                stems.push_back(entry.path().stem().string());
            }
        }
    }
    std::sort(stems.begin(), stems.end());

    std::map<std::string, std::size_t> labels;
    if (d.kind == TaskKind::Classification) {
        std::istringstream in(read_text(dir / "labels.csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) {
                throw IoError(fmt::format("{}: malformed row '{}'", (dir / "labels.csv").string(), line));
            }
            try {
                labels[line.substr(0, comma)] = std::stoul(line.substr(comma + 1));
            } catch (const std::exception&) {
                throw IoError(fmt::format("{}: malformed row '{}'", (dir / "labels.csv").string(), line));
            }
        }
        d.readout = read_mtx(dir / "readout.mtx");
        if (d.readout->rows() != d.n_classes || d.readout->cols() != d.d_model) {
            throw IoError(fmt::format("{}: shape {} expected {}x{}", (dir / "readout.mtx").string(),
                                      shape_string(*d.readout), d.n_classes, d.d_model));
        }
    }

    for (const auto& stem : stems) {
        Split* split = stem.starts_with("train_") ? &d.train : stem.starts_with("eval_") ? &d.eval : nullptr;
        if (split == nullptr) {
            throw IoError(fmt::format("{}: sample name must start with train_ or eval_", stem));
        }
        const fs::path input_path = dir / "inputs" / (stem + ".mtx");
        Matrix x = read_mtx(input_path);
        if (x.rows() != d.d_model || x.cols() != d.n_tokens) {
            throw IoError(fmt::format("{}: shape {} disagrees with manifest d_model {} n_tokens {}",
                                      input_path.string(), shape_string(x), d.d_model, d.n_tokens));
        }
        split->inputs.push_back(std::move(x));
        if (d.kind == TaskKind::Regression) {
            const fs::path target_path = dir / "targets" / (stem + ".mtx");
            Matrix t = read_mtx(target_path);
            if (!t.same_shape(split->inputs.back())) {
                throw IoError(fmt::format("{}: shape {} disagrees with manifest d_model {} n_tokens {}",
                                          target_path.string(), shape_string(t), d.d_model, d.n_tokens));
            }
            split->targets.push_back(std::move(t));
        } else {
            const auto it = labels.find(stem);
            if (it == labels.end()) {
                throw IoError(fmt::format("{}: no label for sample {}", (dir / "labels.csv").string(), stem));
            }
            split->labels.push_back(it->second);
        }
    }
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw IoError(fmt::format("{}: {}", dir.string(), e.what()));
    }
    return d;
}

}  // namespace slora
