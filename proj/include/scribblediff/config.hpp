#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scribblediff/augment.hpp"
#include "scribblediff/denoiser.hpp"
#include "scribblediff/sampler.hpp"
#include "scribblediff/segmentor.hpp"
#include "scribblediff/shapesworld.hpp"

#include "json.hpp"

namespace scribblediff {

struct StudyConfig {
    std::vector<double> splits{1.0, 0.5, 0.25, 0.125};
    std::vector<std::string> schemes{"none", "fixed:1.0", "fixed:0.4", "uniform", "adaptive"};
    std::vector<uint64_t> seeds{1, 2, 3};
    int fd_reference_scenes = 256;  // held-out scenes used as the FD reference
    int fd_bank_cap = 256;          // max bank entries used for FD reporting
};

struct ExperimentConfig {
    uint64_t seed = 1;
    std::string out_dir = "runs/default";
    int jobs = 0;

    WorldConfig world;
    ScribbleRender cond_mode = ScribbleRender::Rgb;
    int train_scenes = 1024;
    int val_scenes = 128;

    int timesteps = 200;
    double beta_start = 5e-4;
    double beta_end = 0.1;

    DenoiserConfig denoiser;       // height/width/cond_channels filled from world
    DenoiserTrainConfig den_train;

    double guidance_w = 2.0;
    double eta = 0.0;
    int sample_steps = 50;
    std::vector<double> lambdas{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    bool uncond_keeps_class_set = true;

    SegmentorConfig segmentor;  // height/width/classes filled from world
    SegTrainConfig seg_train;

    StudyConfig study;

    void validate() const;
    NoiseSchedule make_schedule() const { return make_linear_schedule(timesteps, beta_start, beta_end); }
};

// Parsing is fail-closed: unknown keys anywhere in the document are errors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& c);

// Stable 64-bit hash of the canonical JSON form (sorted keys, shortest
// round-trip number formatting).
uint64_t json_hash(const nlohmann::json& j);
uint64_t config_hash(const ExperimentConfig& c);
std::string hash_hex(uint64_t h);

// Per-stage seed: derive_seed(master, fnv1a64(stage_name), salt). Documented
// so external tooling can reproduce any stream.
uint64_t stage_seed(uint64_t master, const std::string& stage_name, uint64_t salt = 0);

AugmentationScheme parse_scheme(const std::string& spec, const std::vector<double>& lambdas,
                                int epochs);

}  // namespace scribblediff
