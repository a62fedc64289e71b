// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "slora/analysis.h"
#include "slora/mtx_io.h"
#include "slora/svd.h"
#include "slora/tasks.h"
#include "slora/trainer.h"
#include "test_util.h"

namespace slora {
namespace {

constexpr Slot kQkv[] = {Slot::Q, Slot::K, Slot::V};

std::vector<double> spectrum(std::span<const SpectrumRow> rows, std::size_t block, Slot slot,
                             const std::string& variant) {
    std::vector<double> out;
    for (const auto& r : rows) {
        if (r.block == block && r.slot == slot && r.variant == variant) out.push_back(r.sigma);
    }
    return out;
}

std::vector<AdapterSet> fresh(AdapterMode mode, std::size_t d, std::size_t blocks) {
    std::vector<AdapterSet> out;
    for (std::size_t b = 0; b < blocks; ++b) out.push_back(init_adapter(mode, d, 2, 0.5, 3, b));
    return out;
}

TEST(Spectrum, BaseOnlyStack) {
    const EncoderStack stack = random_stack(8, 2, 2, 1);
    const auto rows = spectrum_rows(stack, kQkv);
    EXPECT_EQ(rows.size(), 2u * 3u * 8u);
    for (const auto& r : rows) EXPECT_EQ(r.variant, "base");
}

TEST(Spectrum, FreshAdaptersReproduceBaseSpectra) {
    for (AdapterMode mode : {AdapterMode::Parallel, AdapterMode::Serial}) {
        const EncoderStack stack = with_adapters(random_stack(8, 2, 2, 1), fresh(mode, 8, 2));
        const auto rows = spectrum_rows(stack, kQkv);
        const std::string variant(to_string(mode));
        for (std::size_t b = 0; b < 2; ++b) {
            for (Slot s : kQkv) {
                const auto base = spectrum(rows, b, s, "base");
                const auto adapted = spectrum(rows, b, s, variant);
                ASSERT_EQ(base.size(), adapted.size());
                for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], adapted[i], 1e-12);
            }
        }
    }
}

TEST(Spectrum, SmallSerialPerturbationOfIdentity) {
    const Matrix eye = Matrix::identity(8);
    const EncoderStack stack{8, 2, {{MhaWeights{eye, eye, eye, eye, 2}, std::nullopt}}};
    const LowRankPair pair(gaussian_matrix(8, 2, 0.05, 1), gaussian_matrix(2, 8, 0.05, 2));
    const double bound = svd(lora_delta(pair)).s.front();
    ASSERT_LT(bound, 0.1);
    const auto rows = spectrum_rows(with_adapters(stack, {AdapterSet::serial(pair)}), kQkv);
    for (double s : spectrum(rows, 0, Slot::Q, "serial")) {
        EXPECT_GE(s, 1.0 - bound - 1e-12);
        EXPECT_LE(s, 1.0 + bound + 1e-12);
    }
}

TEST(Spectrum, EverySpectrumIsSortedAndNonnegative) {
    const EncoderStack stack = with_adapters(random_stack(8, 2, 2, 4), random_adapters(AdapterMode::Parallel, 8, 2, 2, 5));
    const auto rows = spectrum_rows(stack, kQkv);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_GE(rows[i].sigma, 0.0);
        if (i > 0 && rows[i].index > 0) EXPECT_LE(rows[i].sigma, rows[i - 1].sigma);
    }
}

TEST(Spectrum, TrainedSerialDeltaHasRankAtMostTwo) {
    TeacherStudentConfig c;
    c.d_model = 8;
    c.n_tokens = 4;
    c.n_train = 32;
    c.n_eval = 8;
    const TeacherStudentTask t = gen_teacher_student(c);
    TrainConfig cfg;
    cfg.epochs = 10;
    const TrainHistory h = train(t.base, t.data, cfg);
    const EncoderStack trained = with_adapters(t.base, h.final_adapters);
    for (std::size_t b = 0; b < trained.blocks.size(); ++b) {
        for (Slot s : kQkv) {
            const Matrix& w = trained.blocks[b].weights.weight(s);
            const Matrix delta = subtract(merge_serial(w, trained.blocks[b].adapter->pair(Slot::Serial)), w);
            EXPECT_LE(effective_rank(svd(delta).s, 1e-8), 2u);
        }
    }
}

TEST(Spectrum, CsvSchema) {
    const EncoderStack stack = with_adapters(random_stack(4, 2, 1, 1), fresh(AdapterMode::Serial, 4, 1));
    const Slot q[] = {Slot::Q};
    const std::string csv = spectrum_csv(spectrum_rows(stack, q));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "block,slot,variant,index,sigma");
    std::getline(in, line);
    EXPECT_EQ(line.rfind("0,q,base,0,", 0), 0u) << line;
    std::size_t lines = 1;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 1u + 2u * 4u - 1u);
    EXPECT_EQ(csv.find('\r'), std::string::npos);
}

TEST(Spectrum, RejectsOutputSlot) {
    const Slot out[] = {Slot::Out};
    EXPECT_THROW(spectrum_rows(random_stack(4, 2, 1, 1), out), std::invalid_argument);
}

TEST(Spectrum, ReportWritesCsv) {
    testing::TempDir dir("spectra");
    const EncoderStack stack = random_stack(4, 2, 1, 1);
    const auto rows = spectrum_report(stack, kQkv, dir / "s.csv");
    EXPECT_EQ(read_text(dir / "s.csv"), spectrum_csv(rows));
}

TEST(Params, SquareSpecsGiveExactRatioFour) {
    const auto specs = parse_model_specs(R"({"models": [
        {"name": "tiny", "d_model": 8, "n_blocks": 1, "rank": 2, "slots": ["q", "k", "v", "out"]},
        {"name": "wide", "d_model": 1024, "n_blocks": 24, "rank": 16, "slots": ["q", "k", "v", "out"]}
    ]})");
    const auto rows = param_rows(specs);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].parallel_count, 128u);
    EXPECT_EQ(rows[0].serial_count, 32u);
    for (const auto& r : rows) EXPECT_EQ(r.ratio, 4.0);
    EXPECT_EQ(param_csv(rows), "name,parallel_count,serial_count,ratio\ntiny,128,32,4.000000\nwide,3145728,786432,4.000000\n");
}

TEST(Params, RectangularSlotObjects) {
    const auto specs = parse_model_specs(R"([{"name": "r", "d_model": 8, "n_blocks": 2, "rank": 1,
        "slots": [{"name": "up", "d_out": 32, "d_in": 8}]}])");
    ASSERT_EQ(specs.size(), 1u);
    EXPECT_EQ(specs[0].slots[0].d_out, 32u);
    EXPECT_EQ(param_rows(specs)[0].parallel_count, 2u * 40u);
}

TEST(Params, MirrorReproducesPublishedRatios) {
    const std::string text = read_text(std::filesystem::path(SLORA_SOURCE_DIR) / "configs" / "reference_models.json");
    const auto specs = parse_model_specs(text);
    const auto rows = param_rows(specs);
    const auto published = nlohmann::json::parse(text).at("models");
    ASSERT_EQ(rows.size(), published.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& p = published[i].at("published_millions");
        const double published_ratio = p.at("parallel").get<double>() / p.at("serial").get<double>();
        EXPECT_EQ(rows[i].ratio, 4.0);
        EXPECT_NEAR(rows[i].ratio / published_ratio, 1.0, 2e-3) << rows[i].name;
    }
}

TEST(Params, RejectsEmptyInputs) {
    EXPECT_THROW(param_rows({}), std::invalid_argument);
    const auto specs = parse_model_specs(R"([{"name": "none", "d_model": 8, "n_blocks": 1, "rank": 2, "slots": []}])");
    EXPECT_THROW(param_rows(specs), std::invalid_argument);
    EXPECT_THROW(parse_model_specs("{not json"), std::invalid_argument);
    EXPECT_THROW(parse_model_specs(R"([{"name": "x"}])"), std::invalid_argument);
}

}  // namespace
}  // namespace slora
