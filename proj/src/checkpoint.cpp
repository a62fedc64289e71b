// SPDX-License-Identifier: Apache-2.0

#include "slora/checkpoint.h"

#include <fmt/format.h>

#include "json.hpp"
#include "slora/mtx_io.h"

namespace slora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kWeightNames[] = {"wq", "wk", "wv", "wout"};

json read_manifest(const fs::path& path) {
    if (!fs::exists(path)) {
        throw IoError(fmt::format("missing manifest {}", path.string()));
    }
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw IoError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

template <typename T>
T field(const json& j, const char* key, const fs::path& source) {
    if (!j.contains(key)) {
        throw IoError(fmt::format("{}: missing field '{}'", source.string(), key));
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw IoError(fmt::format("{}: field '{}': {}", source.string(), key, e.what()));
    }
}

}  // namespace

void save_stack(const fs::path& dir, const EncoderStack& stack) {
    stack.validate();
    fs::create_directories(dir);
    for (std::size_t i = 0; i < stack.blocks.size(); ++i) {
        const auto& w = stack.blocks[i].weights;
        for (std::size_t s = 0; s < 4; ++s) {
            write_mtx(dir / fmt::format("block{}.{}.mtx", i, kWeightNames[s]), w.weight(kProjectionSlots[s]));
        }
    }
    const json manifest = {{"d_model", stack.d_model}, {"heads", stack.heads}, {"n_blocks", stack.blocks.size()}};
    write_text(dir / "model.json", manifest.dump(2) + "\n");
}

EncoderStack load_stack(const fs::path& dir) {
    const fs::path manifest_path = dir / "model.json";
    const json manifest = read_manifest(manifest_path);
    EncoderStack stack;
    stack.d_model = field<std::size_t>(manifest, "d_model", manifest_path);
    stack.heads = field<std::size_t>(manifest, "heads", manifest_path);
    const auto n_blocks = field<std::size_t>(manifest, "n_blocks", manifest_path);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        auto load = [&](std::size_t s) {
            const fs::path p = dir / fmt::format("block{}.{}.mtx", i, kWeightNames[s]);
            Matrix m = read_mtx(p);
            if (m.rows() != stack.d_model || m.cols() != stack.d_model) {
                throw IoError(fmt::format("{}: shape {} disagrees with d_model {}", p.string(), shape_string(m),
                                          stack.d_model));
            }
            return m;
        };
        stack.blocks.push_back({MhaWeights{load(0), load(1), load(2), load(3), stack.heads}, std::nullopt});
    }
    stack.validate();
    return stack;
}

void save_adapters(const fs::path& dir, const AdapterCheckpoint& checkpoint) {
    const auto& adapters = checkpoint.adapters;
    if (adapters.empty()) {
        throw std::invalid_argument("save_adapters: no adapters");
    }
    fs::create_directories(dir);
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        if (adapters[i].mode() != adapters.front().mode()) {
            throw std::invalid_argument(fmt::format("save_adapters: block {} mode differs from block 0", i));
        }
        for (Slot s : adapters[i].slots()) {
            const auto& p = adapters[i].pair(s);
            write_mtx(dir / fmt::format("block{}.{}.A.mtx", i, to_string(s)), p.a());
            write_mtx(dir / fmt::format("block{}.{}.B.mtx", i, to_string(s)), p.b());
        }
    }
    const json manifest = {{"mode", std::string(to_string(adapters.front().mode()))},
                           {"d_model", adapters.front().d_model()},
                           {"rank", adapters.front().rank()},
                           {"n_blocks", adapters.size()},
                           {"seed", checkpoint.seed},
                           {"std", checkpoint.std}};
    write_text(dir / "adapter.json", manifest.dump(2) + "\n");
}

AdapterCheckpoint load_adapters(const fs::path& dir) {
    const fs::path manifest_path = dir / "adapter.json";
    const json manifest = read_manifest(manifest_path);
    AdapterCheckpoint out;
    AdapterMode mode;
    try {
        mode = parse_mode(field<std::string>(manifest, "mode", manifest_path));
    } catch (const std::invalid_argument& e) {
        throw IoError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
    const auto d_model = field<std::size_t>(manifest, "d_model", manifest_path);
    const auto rank = field<std::size_t>(manifest, "rank", manifest_path);
    const auto n_blocks = field<std::size_t>(manifest, "n_blocks", manifest_path);
    out.seed = field<std::uint64_t>(manifest, "seed", manifest_path);
    out.std = field<double>(manifest, "std", manifest_path);

    for (std::size_t i = 0; i < n_blocks; ++i) {
        auto load_pair = [&](Slot s) {
            const fs::path pa = dir / fmt::format("block{}.{}.A.mtx", i, to_string(s));
            const fs::path pb = dir / fmt::format("block{}.{}.B.mtx", i, to_string(s));
            Matrix a = read_mtx(pa);
            Matrix b = read_mtx(pb);
            if (a.rows() != rank || a.cols() != d_model) {
                throw IoError(fmt::format("{}: shape {} expected {}x{}", pa.string(), shape_string(a), rank, d_model));
            }
            if (b.rows() != d_model || b.cols() != rank) {
                throw IoError(fmt::format("{}: shape {} expected {}x{}", pb.string(), shape_string(b), d_model, rank));
            }
            return LowRankPair(std::move(b), std::move(a));
        };
        if (mode == AdapterMode::Serial) {
            out.adapters.push_back(AdapterSet::serial(load_pair(Slot::Serial)));
        } else {
            out.adapters.push_back(AdapterSet::parallel(
                {load_pair(Slot::Q), load_pair(Slot::K), load_pair(Slot::V), load_pair(Slot::Out)}));
        }
    }
    return out;
}

}  // namespace slora
