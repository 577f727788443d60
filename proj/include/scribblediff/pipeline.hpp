#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scribblediff/config.hpp"
#include "scribblediff/metrics.hpp"

namespace scribblediff {

struct ReportRow {
    std::string scheme;
    double split = 1.0;
    uint64_t seed = 0;
    int n_train = 0;
    double final_train_loss = 0.0;
    double val_miou = 0.0;
    double fd_self = 0.0;  // bank at lambda=1 vs the split's own real scenes
    double fd_val = 0.0;   // bank at lambda=1 vs held-out scenes
};

struct Report {
    uint64_t config_hash = 0;
    std::vector<ReportRow> rows;
};

nlohmann::json report_to_json(const Report& r);
std::string report_to_csv(const Report& r);

// Stage cache: each stage writes its outputs plus a stage.json carrying the
// stage-scoped config hash under <out>/stages/<name>-<hash>/; on rerun a stage
// directory whose recorded hash matches is loaded instead of recomputed.
struct StageCache {
    std::filesystem::path root;
    // returns the stage directory; 'hit' reports whether outputs were reused
    std::filesystem::path ensure(const std::string& name, uint64_t hash, bool* hit) const;
    static void mark_done(const std::filesystem::path& dir, const std::string& name,
                          uint64_t hash);
};

// Cached primitives used by both the study runner and the CLI subcommands.
struct PipelineContext {
    ExperimentConfig cfg;
    std::filesystem::path out;
    StageCache cache;

    explicit PipelineContext(const ExperimentConfig& cfg);

    uint64_t data_hash() const;
    // full train + val corpora (cached on disk)
    void ensure_data(Dataset& train, Dataset& val) const;

    uint64_t denoiser_hash(double split, uint64_t row_seed) const;
    Denoiser ensure_denoiser(const Dataset& train_full, double split, uint64_t row_seed,
                             double* final_loss = nullptr) const;

    uint64_t bank_hash(double split, uint64_t row_seed) const;
    SyntheticBank ensure_bank(const Denoiser& d, const Dataset& train_full, double split,
                              uint64_t row_seed) const;

    uint64_t seg_hash(double split, uint64_t row_seed, const std::string& scheme) const;

    int split_count(double split) const;
};

// Full study: data -> denoiser training -> bank synthesis -> per-scheme
// segmentor training -> evaluation, one report row per scheme x split x seed.
Report run_experiment(const ExperimentConfig& cfg);

// FD-vs-guidance-scale table at lambda = 1.
struct SweepPoint {
    double x = 0.0;
    double fd_self = 0.0;
    double fd_val = 0.0;
};
std::vector<SweepPoint> sweep_guidance(const ExperimentConfig& cfg, const std::vector<double>& ws);
// FD-vs-encode-ratio table at the configured guidance scale.
std::vector<SweepPoint> sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& ls);

void write_sweep_files(const std::filesystem::path& out, const std::string& name,
                       const std::string& x_label, const std::vector<SweepPoint>& points);

}  // namespace scribblediff
