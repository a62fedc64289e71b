// SPDX-License-Identifier: Apache-2.0

#include "slora/cli.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "slora/analysis.h"
#include "slora/checkpoint.h"
#include "slora/gradcheck.h"
#include "slora/mtx_io.h"
#include "slora/rng.h"
#include "slora/tasks.h"
#include "slora/trainer.h"

namespace slora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// gradcheck fails the run above this error.
constexpr double kGradCheckGate = 1e-4;
// merge refuses to write a folded checkpoint that deviates more than this.
constexpr double kMergeTolerance = 1e-10;

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::size_t worker_count() {
    const char* env = std::getenv("SLORA_THREADS");
    if (env == nullptr || *env == '\0') {
        return 1;
    }
    try {
        const long v = std::stol(env);
        return v > 0 ? static_cast<std::size_t>(v) : 1;
    } catch (const std::exception&) {
        return 1;
    }
}

void write_run_json(const fs::path& dir, const std::string& command, json config) {
    fs::create_directories(dir);
    const json run = {{"command", command}, {"version", kVersion}, {"config", std::move(config)}};
    write_text(dir / "run.json", run.dump(2) + "\n");
}

struct TrainMode {
    AdapterMode mode;
    bool plus;
};

TrainMode parse_train_mode(const std::string& text) {
    if (text == "lora") return {AdapterMode::Parallel, false};
    if (text == "serial") return {AdapterMode::Serial, false};
    if (text == "lora+") return {AdapterMode::Parallel, true};
    if (text == "serial+") return {AdapterMode::Serial, true};
    if (text == "parallel") return {AdapterMode::Parallel, false};
    throw UsageError(fmt::format("unknown mode '{}'", text));
}

std::vector<std::size_t> parse_ranks(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(item, &used);
            if (used != item.size() || v == 0) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError(fmt::format("invalid rank '{}' in --ranks", item));
        }
    }
    if (out.empty()) {
        throw UsageError("--ranks is empty");
    }
    return out;
}

std::vector<Slot> parse_slots(const std::string& text) {
    std::vector<Slot> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            out.push_back(parse_slot(item));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    return out;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
    std::string task;
    std::size_t d_model = 16;
    std::size_t rank = 2;
    std::size_t blocks = 2;
    std::size_t heads = 2;
    std::size_t tokens = 8;
    std::size_t samples = 256;
    std::size_t eval_samples = 64;
    std::size_t classes = 2;
    double teacher_scale = 1.0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    const fs::path dir = a.out;
    json config = {{"task", a.task},       {"d_model", a.d_model}, {"rank", a.rank},
                   {"blocks", a.blocks},   {"heads", a.heads},     {"tokens", a.tokens},
                   {"samples", a.samples}, {"eval_samples", a.eval_samples}, {"seed", a.seed}};
    if (a.task == "classify") {
        ClassificationConfig c;
        c.d_model = a.d_model;
        c.n_tokens = a.tokens;
        c.n_classes = a.classes;
        c.n_train = a.samples;
        c.n_eval = a.eval_samples;
        c.seed = a.seed;
        const Dataset data = gen_classification(c);
        save_dataset(dir, data);
        save_stack(dir / "model", random_stack(a.d_model, a.heads, a.blocks, derive_seed(a.seed, 1)));
        config["classes"] = a.classes;
    } else {
        TeacherStudentConfig c;
        c.d_model = a.d_model;
        c.heads = a.heads;
        c.n_blocks = a.blocks;
        c.n_tokens = a.tokens;
        c.teacher_mode = a.task == "teacher-serial" ? AdapterMode::Serial : AdapterMode::Parallel;
        c.teacher_rank = a.rank;
        c.n_train = a.samples;
        c.n_eval = a.eval_samples;
        c.seed = a.seed;
        c.teacher_scale = a.teacher_scale;
        const TeacherStudentTask task = gen_teacher_student(c);
        save_dataset(dir, task.data);
        save_stack(dir / "model", task.base);
        save_adapters(dir / "teacher_adapter", {task.teacher.adapters(), a.seed, default_init_std(a.rank)});
        config["teacher_scale"] = a.teacher_scale;
    }
    write_run_json(dir, "gen-data", config);
    out << fmt::format("wrote {} dataset to {}\n", a.task, dir.string());
    return 0;
}

// ---- train / sweep ----------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string model;
    std::string mode = "serial";
    std::size_t rank = 2;
    double lr = 4e-3;
    std::optional<double> ab_ratio;
    std::size_t epochs = 200;
    std::size_t batch = 16;
    std::string optimizer = "adam";
    std::optional<double> init_std;
    std::uint64_t seed = 0;
    bool timing = false;
    std::string out;
    std::string ranks;
};

TrainConfig make_train_config(const TrainArgs& a, std::size_t rank, std::ostream& err) {
    const TrainMode m = parse_train_mode(a.mode);
    TrainConfig cfg;
    cfg.optimizer = a.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    cfg.base_lr = a.lr;
    cfg.plus_variant = m.plus;
    cfg.ab_ratio = a.ab_ratio;
    if (!m.plus && a.ab_ratio && *a.ab_ratio != 1.0) {
        err << fmt::format("note: --ab-ratio {} ignored for mode '{}' (ratio is 1)\n", *a.ab_ratio, a.mode);
    }
    cfg.epochs = a.epochs;
    cfg.batch = a.batch;
    cfg.seed = a.seed;
    cfg.rank = rank;
    cfg.mode = m.mode;
    cfg.init_std = a.init_std;
    cfg.threads = worker_count();
    cfg.record_time = a.timing;
    cfg.validate();
    return cfg;
}

json train_config_json(const TrainArgs& a, const TrainConfig& cfg) {
    return {{"data", a.data},
            {"model", a.model},
            {"mode", a.mode},
            {"rank", cfg.rank},
            {"lr", cfg.base_lr},
            {"ab_ratio", cfg.resolved_ab_ratio()},
            {"epochs", cfg.epochs},
            {"batch", cfg.batch},
            {"optimizer", a.optimizer},
            {"init_std", cfg.resolved_init_std()},
            {"seed", cfg.seed}};
}

struct LoadedTask {
    EncoderStack stack;
    Dataset data;
};

LoadedTask load_task(const TrainArgs& a) {
    const fs::path model_dir = a.model.empty() ? fs::path(a.data) / "model" : fs::path(a.model);
    return {load_stack(model_dir), load_dataset(a.data)};
}

TrainHistory run_training(const LoadedTask& task, const TrainConfig& cfg, const fs::path& dir) {
    const TrainHistory history = train(task.stack, task.data, cfg);
    fs::create_directories(dir);
    write_text(dir / "history.csv", history_csv(history));
    save_adapters(dir / "init_adapter", {history.initial_adapters, cfg.seed, cfg.resolved_init_std()});
    save_adapters(dir / "adapter", {history.final_adapters, cfg.seed, cfg.resolved_init_std()});
    return history;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const TrainConfig cfg = make_train_config(a, a.rank, err);
    const LoadedTask task = load_task(a);
    const fs::path dir = a.out;
    const TrainHistory history = run_training(task, cfg, dir);
    write_run_json(dir, "train", train_config_json(a, cfg));
    if (history.epochs.empty()) {
        out << "0 epochs: adapters left at initialization\n";
    } else {
        const auto& last = history.epochs.back();
        out << fmt::format("epoch {} train_loss {:.6e} eval_loss {:.6e}\n", last.epoch, last.train_loss,
                           last.eval_loss);
    }
    return 0;
}

int cmd_sweep(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const std::vector<std::size_t> ranks = parse_ranks(a.ranks);
    const LoadedTask task = load_task(a);
    const fs::path dir = a.out;
    std::string summary = "rank,trainable_params,final_train_loss,final_eval_loss\n";
    json runs = json::array();
    for (std::size_t r : ranks) {
        const TrainConfig cfg = make_train_config(a, r, err);
        const TrainHistory history = run_training(task, cfg, dir / fmt::format("rank{}", r));
        const std::size_t params = ParamLayout(history.final_adapters).scalar_count(history.final_adapters);
        const double train_loss = history.epochs.empty() ? 0.0 : history.epochs.back().train_loss;
        const double eval_loss = history.epochs.empty() ? 0.0 : history.epochs.back().eval_loss;
        summary += fmt::format("{},{},{:.17g},{:.17g}\n", r, params, train_loss, eval_loss);
        runs.push_back(train_config_json(a, cfg));
        out << fmt::format("rank {:>3}: {} params, eval_loss {:.6e}\n", r, params, eval_loss);
    }
    write_text(dir / "summary.csv", summary);
    write_run_json(dir, "sweep", {{"ranks", a.ranks}, {"runs", runs}});
    return 0;
}

// ---- gradcheck --------------------------------------------------------------

struct GradCheckArgs {
    std::string mode = "serial";
    std::size_t d_model = 16;
    std::size_t rank = 2;
    std::size_t blocks = 2;
    std::size_t heads = 2;
    std::size_t tokens = 5;
    std::size_t samples = 2;
    double eps = 1e-5;
    std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradCheckArgs& a, std::ostream& out) {
    EncoderGradCheckConfig c;
    c.mode = parse_train_mode(a.mode).mode;
    c.d_model = a.d_model;
    c.rank = a.rank;
    c.n_blocks = a.blocks;
    c.heads = a.heads;
    c.n_tokens = a.tokens;
    c.n_samples = a.samples;
    c.eps = a.eps;
    c.seed = a.seed;
    const GradCheckReport r = encoder_grad_check(c);
    out << fmt::format("max_rel_error {:.3e} over {} entries\n", r.max_rel_error, r.entries_checked);
    return r.max_rel_error > kGradCheckGate ? 1 : 0;
}

// ---- spectra / params / merge ---------------------------------------------

struct SpectraArgs {
    std::string model;
    std::string adapter;
    std::string slots = "q,k,v";
    std::string out;
};

EncoderStack load_adapted(const std::string& model, const std::string& adapter) {
    EncoderStack stack = load_stack(model);
    if (!adapter.empty()) {
        stack = with_adapters(stack, load_adapters(adapter).adapters);
    }
    return stack;
}

int cmd_spectra(const SpectraArgs& a, std::ostream& out) {
    const EncoderStack stack = load_adapted(a.model, a.adapter);
    const auto rows = spectrum_report(stack, parse_slots(a.slots), a.out);
    out << fmt::format("wrote {} singular values to {}\n", rows.size(), a.out);
    return 0;
}

struct ParamsArgs {
    std::string spec;
    std::string out;
};

int cmd_params(const ParamsArgs& a, std::ostream& out) {
    const auto specs = parse_model_specs(read_text(a.spec));
    const auto rows = param_report(specs, a.out);
    for (const auto& r : rows) {
        out << fmt::format("{:<12} parallel {:>12} serial {:>12} ratio {:.4f}\n", r.name, r.parallel_count,
                           r.serial_count, r.ratio);
    }
    return 0;
}

struct MergeArgs {
    std::string model;
    std::string adapter;
    std::string out;
    std::size_t tokens = 8;
    std::size_t checks = 8;
    std::uint64_t seed = 0;
};

int cmd_merge(const MergeArgs& a, std::ostream& out, std::ostream& err) {
    const EncoderStack adapted = load_adapted(a.model, a.adapter);
    const EncoderStack folded = fold_adapters(adapted);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.checks; ++i) {
        const Matrix x = gaussian_matrix(adapted.d_model, a.tokens, 1.0, derive_seed(a.seed, i));
        worst = std::max(worst, relative_error(encoder_forward(x, folded), encoder_forward(x, adapted)));
    }
    if (!(worst < kMergeTolerance)) {
        err << fmt::format("merge: folded forward deviates by {:.3e} (limit {:.0e}); nothing written\n", worst,
                           kMergeTolerance);
        return 1;
    }
    save_stack(a.out, folded);
    write_run_json(a.out, "merge", {{"model", a.model}, {"adapter", a.adapter}, {"checks", a.checks},
                                    {"tokens", a.tokens}, {"seed", a.seed}});
    out << fmt::format("folded checkpoint written to {} (max relative deviation {:.3e})\n", a.out, worst);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Serial and parallel low-rank adapters on a small attention encoder", "slora"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic task and its frozen base model");
    gen_cmd->add_option("--task", gen.task, "teacher-serial | teacher-parallel | classify")
        ->required()
        ->check(CLI::IsMember({"teacher-serial", "teacher-parallel", "classify"}));
    gen_cmd->add_option("--d-model", gen.d_model)->capture_default_str();
    gen_cmd->add_option("--rank", gen.rank, "teacher adapter rank")->capture_default_str();
    gen_cmd->add_option("--blocks", gen.blocks)->capture_default_str();
    gen_cmd->add_option("--heads", gen.heads)->capture_default_str();
    gen_cmd->add_option("--tokens", gen.tokens)->capture_default_str();
    gen_cmd->add_option("--samples", gen.samples, "training samples")->capture_default_str();
    gen_cmd->add_option("--eval-samples", gen.eval_samples)->capture_default_str();
    gen_cmd->add_option("--classes", gen.classes)->capture_default_str();
    gen_cmd->add_option("--teacher-scale", gen.teacher_scale)->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
    gen_cmd->add_option("--out", gen.out)->required();

    TrainArgs tr;
    auto add_train_options = [&](CLI::App* cmd) {
        cmd->add_option("--data", tr.data, "dataset directory")->required();
        cmd->add_option("--model", tr.model, "base stack directory (default DATA/model)");
        cmd->add_option("--mode", tr.mode, "lora | serial | lora+ | serial+")
            ->check(CLI::IsMember({"lora", "serial", "lora+", "serial+"}))
            ->capture_default_str();
        cmd->add_option("--lr", tr.lr)->capture_default_str();
        cmd->add_option("--ab-ratio", tr.ab_ratio, "B:A learning-rate ratio (default 20 for + modes, 1 otherwise)");
        cmd->add_option("--epochs", tr.epochs)->capture_default_str();
        cmd->add_option("--batch", tr.batch, "0 = full batch")->capture_default_str();
        cmd->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
        cmd->add_option("--init-std", tr.init_std, "A-factor init std (default 1/sqrt(rank))");
        cmd->add_option("--seed", tr.seed)->capture_default_str();
        cmd->add_flag("--timing", tr.timing, "record wall time in history.csv");
        cmd->add_option("--out", tr.out)->required();
    };
    auto* train_cmd = app.add_subcommand("train", "fine-tune adapters on a dataset");
    add_train_options(train_cmd);
    train_cmd->add_option("--rank", tr.rank)->capture_default_str();
    auto* sweep_cmd = app.add_subcommand("sweep", "train once per rank");
    add_train_options(sweep_cmd);
    sweep_cmd->add_option("--ranks", tr.ranks, "comma-separated ranks, e.g. 8,16,32,64")->required();

    GradCheckArgs gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
    gc_cmd->add_option("--mode", gc.mode, "serial | lora (parallel)")
        ->check(CLI::IsMember({"serial", "lora", "parallel", "serial+", "lora+"}))
        ->capture_default_str();
    gc_cmd->add_option("--d-model", gc.d_model)->capture_default_str();
    gc_cmd->add_option("--rank", gc.rank)->capture_default_str();
    gc_cmd->add_option("--blocks", gc.blocks)->capture_default_str();
    gc_cmd->add_option("--heads", gc.heads)->capture_default_str();
    gc_cmd->add_option("--tokens", gc.tokens)->capture_default_str();
    gc_cmd->add_option("--samples", gc.samples)->capture_default_str();
    gc_cmd->add_option("--eps", gc.eps)->capture_default_str();
    gc_cmd->add_option("--seed", gc.seed)->capture_default_str();

    SpectraArgs sp;
    auto* sp_cmd = app.add_subcommand("spectra", "singular values of base and merged projections");
    sp_cmd->add_option("--model", sp.model)->required();
    sp_cmd->add_option("--adapter", sp.adapter);
    sp_cmd->add_option("--slots", sp.slots)->capture_default_str();
    sp_cmd->add_option("--out", sp.out)->required();

    ParamsArgs pa;
    auto* pa_cmd = app.add_subcommand("params", "parallel vs serial parameter counts");
    pa_cmd->add_option("--spec", pa.spec)->required();
    pa_cmd->add_option("--out", pa.out)->required();

    MergeArgs mg;
    auto* mg_cmd = app.add_subcommand("merge", "fold adapters into the base weights");
    mg_cmd->add_option("--model", mg.model)->required();
    mg_cmd->add_option("--adapter", mg.adapter)->required();
    mg_cmd->add_option("--out", mg.out)->required();
    mg_cmd->add_option("--tokens", mg.tokens)->capture_default_str();
    mg_cmd->add_option("--checks", mg.checks)->capture_default_str();
    mg_cmd->add_option("--seed", mg.seed)->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen, out);
        if (*train_cmd) return cmd_train(tr, out, err);
        if (*sweep_cmd) return cmd_sweep(tr, out, err);
        if (*gc_cmd) return cmd_gradcheck(gc, out);
        if (*sp_cmd) return cmd_spectra(sp, out);
        if (*pa_cmd) return cmd_params(pa, out);
        if (*mg_cmd) return cmd_merge(mg, out, err);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace slora
