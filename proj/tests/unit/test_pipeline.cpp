#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "scribblediff/parallel.hpp"
#include "scribblediff/pipeline.hpp"

using namespace scribblediff;

namespace {

nlohmann::json micro_config_json(const std::string& out_dir) {
    return nlohmann::json{
        {"seed", 11},
        {"out_dir", out_dir},
        {"world",
         {{"height", 8}, {"width", 8}, {"classes", 4}, {"train_scenes", 8}, {"val_scenes", 4}}},
        {"schedule", {{"timesteps", 12}, {"beta_start", 0.02}, {"beta_end", 0.3}}},
        {"denoiser",
         {{"base_width", 4}, {"temb_dim", 8}, {"levels", 2}, {"epochs", 1}, {"batch_size", 4},
          {"lr0", 0.02}, {"lr_final", 0.01}}},
        {"sampler", {{"w", 2.0}, {"steps", 3}, {"lambdas", {0.5, 1.0}}}},
        {"segmentor",
         {{"width_channels", 6}, {"epochs", 2}, {"batch_size", 4}, {"lr0", 0.05}}},
        {"study",
         {{"splits", {1.0, 0.5}},
          {"schemes", {"none", "fixed:1.0", "uniform", "adaptive"}},
          {"seeds", {1, 2}},
          {"fd_reference_scenes", 4},
          {"fd_bank_cap", 4}}}};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("micro study: row cardinality, caching, jobs-independence") {
    const auto out = std::filesystem::temp_directory_path() / "scribblediff_test_study";
    std::filesystem::remove_all(out);
    ExperimentConfig cfg = parse_config(micro_config_json(out.string()));

    Report r1 = run_experiment(cfg);
    CHECK(r1.rows.size() == 4 * 2 * 2);  // schemes x splits x seeds
    const std::string report1 = slurp(out / "report.json");
    const std::string csv1 = slurp(out / "report.csv");
    CHECK(!report1.empty());

    // rerun hits the stage cache and reproduces the report byte-for-byte
    Report r2 = run_experiment(cfg);
    CHECK(slurp(out / "report.json") == report1);
    CHECK(slurp(out / "report.csv") == csv1);
    CHECK(r2.rows.size() == r1.rows.size());

    // fresh output directory with a different worker count: identical numbers
    const auto out2 = std::filesystem::temp_directory_path() / "scribblediff_test_study_jobs";
    std::filesystem::remove_all(out2);
    ExperimentConfig cfg2 = cfg;
    cfg2.out_dir = out2.string();
    cfg2.jobs = 3;
    run_experiment(cfg2);
    nlohmann::json a = nlohmann::json::parse(report1);
    nlohmann::json b = nlohmann::json::parse(slurp(out2 / "report.json"));
    CHECK(a.at("rows") == b.at("rows"));
    set_max_jobs(0);

    std::filesystem::remove_all(out);
    std::filesystem::remove_all(out2);
}

TEST_CASE("stage hash scoping: w changes only bank and downstream") {
    const auto out = std::filesystem::temp_directory_path() / "scribblediff_test_hash";
    ExperimentConfig cfg = parse_config(micro_config_json(out.string()));
    ExperimentConfig cfg_w = cfg;
    cfg_w.guidance_w = 5.0;

    PipelineContext ctx(cfg), ctx_w(cfg_w);
    CHECK(ctx.data_hash() == ctx_w.data_hash());
    CHECK(ctx.denoiser_hash(1.0, 1) == ctx_w.denoiser_hash(1.0, 1));
    CHECK(ctx.bank_hash(1.0, 1) != ctx_w.bank_hash(1.0, 1));
    CHECK(ctx.seg_hash(1.0, 1, "uniform") != ctx_w.seg_hash(1.0, 1, "uniform"));
    CHECK(ctx.seg_hash(1.0, 1, "none") == ctx_w.seg_hash(1.0, 1, "none"));

    // split and seed scope the stages that depend on them
    CHECK(ctx.denoiser_hash(1.0, 1) != ctx.denoiser_hash(0.5, 1));
    CHECK(ctx.denoiser_hash(1.0, 1) != ctx.denoiser_hash(1.0, 2));
    std::filesystem::remove_all(out);
}

TEST_CASE("stale stage caches force recompute") {
    const auto out = std::filesystem::temp_directory_path() / "scribblediff_test_stale";
    std::filesystem::remove_all(out);
    StageCache cache{out / "stages"};
    bool hit = true;
    const auto dir = cache.ensure("data", 0xabcdef, &hit);
    CHECK(!hit);
    StageCache::mark_done(dir, "data", 0xabcdef);
    cache.ensure("data", 0xabcdef, &hit);
    CHECK(hit);

    // tamper with the recorded hash: the stage is stale and gets rebuilt
    {
        std::ofstream f(dir / "stage.json");
        f << "{\"stage\":\"data\",\"hash\":\"0000000000000000\"}\n";
    }
    cache.ensure("data", 0xabcdef, &hit);
    CHECK(!hit);
    std::filesystem::remove_all(out);
}
