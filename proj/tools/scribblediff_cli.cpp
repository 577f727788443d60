// Command-line driver for the scribble-conditioned diffusion augmentation lab.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "scribblediff/checkpoint.hpp"
#include "scribblediff/config.hpp"
#include "scribblediff/parallel.hpp"
#include "scribblediff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace scribblediff;

namespace {

struct GlobalOpts {
    std::string config_path;
    int64_t seed = -1;
    std::string out;
    int jobs = 0;
};

ExperimentConfig resolve_config(const GlobalOpts& g) {
    ExperimentConfig cfg =
        g.config_path.empty() ? parse_config(nlohmann::json::object()) : load_config(g.config_path);
    if (g.seed >= 0) cfg.seed = static_cast<uint64_t>(g.seed);
    if (!g.out.empty()) cfg.out_dir = g.out;
    if (g.jobs > 0) cfg.jobs = g.jobs;
    cfg.validate();
    set_max_jobs(cfg.jobs);
    return cfg;
}

void emit_error(const std::string& command, const std::exception& e) {
    nlohmann::json j;
    j["error"] = e.what();
    j["command"] = command;
    std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scribblediff: scribble-conditioned diffusion data augmentation lab"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "experiment config (JSON)");
    app.add_option("--seed", g.seed, "override the master seed");
    app.add_option("--out", g.out, "override the output directory");
    app.add_option("--jobs", g.jobs, "worker threads (0 = hardware default)");

    auto* cmd_gen = app.add_subcommand("gen-data", "generate the train/val datasets")->fallthrough();
    auto* cmd_den = app.add_subcommand("train-denoiser", "train the conditional denoiser")->fallthrough();
    double den_split = 1.0;
    cmd_den->add_option("--split", den_split, "training-set fraction (prefix slice)");
    auto* cmd_syn = app.add_subcommand("synthesize", "synthesize the (image, lambda) bank")->fallthrough();
    double syn_split = 1.0;
    cmd_syn->add_option("--split", syn_split, "training-set fraction (prefix slice)");
    auto* cmd_seg = app.add_subcommand("train-segmentor", "train a segmentor under a scheme")->fallthrough();
    std::string seg_scheme = "none";
    double seg_split = 1.0;
    cmd_seg->add_option("--scheme", seg_scheme, "none|fixed:<l>|uniform|adaptive|synthetic_only:<l>");
    cmd_seg->add_option("--split", seg_split, "training-set fraction (prefix slice)");
    auto* cmd_eval = app.add_subcommand("evaluate", "evaluate a segmentor checkpoint (val mIoU)")->fallthrough();
    std::string eval_ckpt;
    cmd_eval->add_option("--checkpoint", eval_ckpt, "segmentor checkpoint base path")->required();
    auto* cmd_study = app.add_subcommand("study", "full study: one row per scheme x split x seed")->fallthrough();
    auto* cmd_sw = app.add_subcommand("sweep-w", "FD vs guidance scale at lambda=1")->fallthrough();
    std::vector<double> sweep_ws{0.0, 1.0, 2.0, 4.0, 8.0};
    cmd_sw->add_option("--values", sweep_ws, "guidance scales to sweep");
    auto* cmd_sl = app.add_subcommand("sweep-lambda", "FD vs encode ratio at the configured w")->fallthrough();
    std::vector<double> sweep_ls;
    cmd_sl->add_option("--values", sweep_ls, "encode ratios to sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        ExperimentConfig cfg = resolve_config(g);
        PipelineContext ctx(cfg);

        if (cmd_gen->parsed()) {
            Dataset train, val;
            ctx.ensure_data(train, val);
            std::printf("dataset ready: %zu train + %zu val scenes under %s\n", train.items.size(),
                        val.items.size(), (ctx.out / "stages").c_str());
        } else if (cmd_den->parsed()) {
            Dataset train, val;
            ctx.ensure_data(train, val);
            double loss = 0.0;
            ctx.ensure_denoiser(train, den_split, cfg.study.seeds.front(), &loss);
            std::printf("denoiser ready (split=%g, final epoch loss %.6f)\n", den_split, loss);
        } else if (cmd_syn->parsed()) {
            Dataset train, val;
            ctx.ensure_data(train, val);
            Denoiser d = ctx.ensure_denoiser(train, syn_split, cfg.study.seeds.front());
            SyntheticBank bank = ctx.ensure_bank(d, train, syn_split, cfg.study.seeds.front());
            std::printf("bank ready: %d images x %zu lambdas\n", bank.n_images,
                        bank.lambdas.size());
        } else if (cmd_seg->parsed()) {
            Dataset train, val;
            ctx.ensure_data(train, val);
            const Dataset ds = train.prefix(ctx.split_count(seg_split));
            AugmentationScheme scheme = parse_scheme(seg_scheme, cfg.lambdas, cfg.seg_train.epochs);
            SyntheticBank bank;
            const SyntheticBank* bank_ptr = nullptr;
            if (scheme.kind != SchemeKind::None) {
                Denoiser d = ctx.ensure_denoiser(train, seg_split, cfg.study.seeds.front());
                bank = ctx.ensure_bank(d, train, seg_split, cfg.study.seeds.front());
                bank_ptr = &bank;
            }
            Segmentor seg = init_segmentor(
                cfg.segmentor, stage_seed(cfg.seed, "seg.init." + seg_scheme, cfg.study.seeds.front()));
            SegTrainHistory hist =
                train_segmentor(seg, ds, bank_ptr, scheme, cfg.seg_train,
                                stage_seed(cfg.seed, "seg.train." + seg_scheme, cfg.study.seeds.front()));
            const double m = evaluate_miou(seg, val);
            fs::create_directories(ctx.out);
            save_segmentor(ctx.out / ("segmentor-" + seg_scheme), seg);
            std::printf("segmentor ready: scheme=%s val_miou=%.4f final_loss=%.4f\n",
                        seg_scheme.c_str(), m,
                        hist.epoch_loss.empty() ? 0.0 : hist.epoch_loss.back());
        } else if (cmd_eval->parsed()) {
            Dataset train, val;
            ctx.ensure_data(train, val);
            Segmentor seg = load_segmentor(eval_ckpt);
            const double m = evaluate_miou(seg, val);
            nlohmann::json j;
            j["metric"] = "val_miou";
            j["val_miou"] = m;
            j["checkpoint"] = eval_ckpt;
            j["config_hash"] = hash_hex(config_hash(cfg));
            j["seed"] = cfg.seed;
            std::cout << j.dump() << "\n";
        } else if (cmd_study->parsed()) {
            Report report = run_experiment(cfg);
            std::printf("study complete: %zu rows -> %s\n", report.rows.size(),
                        (ctx.out / "report.json").c_str());
        } else if (cmd_sw->parsed()) {
            auto points = sweep_guidance(cfg, sweep_ws);
            write_sweep_files(ctx.out, "sweep_w", "w", points);
            std::printf("sweep-w complete: %zu points -> %s\n", points.size(),
                        (ctx.out / "sweep_w.csv").c_str());
        } else if (cmd_sl->parsed()) {
            auto ls = sweep_ls.empty() ? cfg.lambdas : sweep_ls;
            auto points = sweep_lambda(cfg, ls);
            write_sweep_files(ctx.out, "sweep_lambda", "lambda", points);
            std::printf("sweep-lambda complete: %zu points -> %s\n", points.size(),
                        (ctx.out / "sweep_lambda.csv").c_str());
        }
    } catch (const std::exception& e) {
        emit_error(command, e);
        return 1;
    }
    return 0;
}
