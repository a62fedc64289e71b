// SPDX-License-Identifier: Apache-2.0

#include "slora/analysis.h"

#include <fmt/format.h>

#include "json.hpp"
#include "slora/mtx_io.h"
#include "slora/svd.h"

namespace slora {

std::vector<SpectrumRow> spectrum_rows(const EncoderStack& stack, std::span<const Slot> slots) {
    stack.validate();
    for (Slot s : slots) {
        if (s != Slot::Q && s != Slot::K && s != Slot::V) {
            throw std::invalid_argument(fmt::format("spectrum slots must be q, k or v, got '{}'", to_string(s)));
        }
    }
    std::vector<SpectrumRow> rows;
    for (std::size_t b = 0; b < stack.blocks.size(); ++b) {
        const auto& block = stack.blocks[b];
        for (Slot s : slots) {
            const Matrix& w = block.weights.weight(s);
            auto emit = [&](const std::string& variant, const Matrix& m) {
                SvdResult r = [&] {
                    try {
                        return svd(m);
                    } catch (const SvdConvergenceError& e) {
                        throw SvdConvergenceError(
                            fmt::format("block {} slot {} variant {}: {}", b, to_string(s), variant, e.what()));
                    }
                }();
                for (std::size_t i = 0; i < r.s.size(); ++i) {
                    rows.push_back({b, s, variant, i, r.s[i]});
                }
            };
            emit("base", w);
            if (block.adapter && block.adapter->mode() == AdapterMode::Parallel) {
                emit("parallel", merge_parallel(w, block.adapter->pair(s)));
            }
            if (block.adapter && block.adapter->mode() == AdapterMode::Serial) {
                emit("serial", merge_serial(w, block.adapter->pair(Slot::Serial)));
            }
        }
    }
    return rows;
}

std::string spectrum_csv(std::span<const SpectrumRow> rows) {
    std::string out = "block,slot,variant,index,sigma\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{:.17g}\n", r.block, to_string(r.slot), r.variant, r.index, r.sigma);
    }
    return out;
}

std::vector<SpectrumRow> spectrum_report(const EncoderStack& stack, std::span<const Slot> slots,
                                         const std::filesystem::path& out_path) {
    auto rows = spectrum_rows(stack, slots);
    write_text(out_path, spectrum_csv(rows));
    return rows;
}

std::vector<ModelSpec> parse_model_specs(const std::string& json_text) {
    using nlohmann::json;
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(fmt::format("model spec: {}", e.what()));
    }
    const json& models = root.is_object() && root.contains("models") ? root.at("models") : root;
    if (!models.is_array()) {
        throw std::invalid_argument("model spec: expected an array of models");
    }
    std::vector<ModelSpec> out;
    try {
        for (const auto& m : models) {
            ModelSpec spec{m.at("name").get<std::string>(), m.at("d_model").get<std::size_t>(),
                           m.at("n_blocks").get<std::size_t>(), m.at("rank").get<std::size_t>(), {}};
            for (const auto& s : m.value("slots", json::array())) {
                if (s.is_string()) {
                    spec.slots.push_back({s.get<std::string>(), spec.d_model, spec.d_model});
                } else {
                    spec.slots.push_back(
                        {s.at("name").get<std::string>(), s.at("d_out").get<std::size_t>(), s.at("d_in").get<std::size_t>()});
                }
            }
            out.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(fmt::format("model spec: {}", e.what()));
    }
    return out;
}

std::vector<ParamRow> param_rows(std::span<const ModelSpec> specs) {
    if (specs.empty()) {
        throw std::invalid_argument("param report: no model specs");
    }
    std::vector<ParamRow> rows;
    for (const auto& s : specs) {
        if (s.slots.empty()) {
            throw std::invalid_argument(fmt::format("param report: model '{}' has no adapted slots", s.name));
        }
        const std::size_t par = param_count(s.d_model, s.rank, s.n_blocks, AdapterMode::Parallel, s.slots);
        const std::size_t ser = param_count(s.d_model, s.rank, s.n_blocks, AdapterMode::Serial, s.slots);
        if (ser == 0) {
            throw std::invalid_argument(fmt::format("param report: model '{}' has zero serial parameters", s.name));
        }
        rows.push_back({s.name, par, ser, static_cast<double>(par) / static_cast<double>(ser)});
    }
    return rows;
}

std::string param_csv(std::span<const ParamRow> rows) {
    std::string out = "name,parallel_count,serial_count,ratio\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{:.6f}\n", r.name, r.parallel_count, r.serial_count, r.ratio);
    }
    return out;
}

std::vector<ParamRow> param_report(std::span<const ModelSpec> specs, const std::filesystem::path& out_path) {
    auto rows = param_rows(specs);
    write_text(out_path, param_csv(rows));
    return rows;
}

}  // namespace slora
