#include "scribblediff/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace scribblediff {

namespace {

void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                const std::string& path) {
    if (!obj.is_object()) throw std::invalid_argument("config: " + path + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + path + it.key() + "'");
}

template <class T>
T get_or(const nlohmann::json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::validate() const {
    world.validate();
    if (train_scenes < 1 || val_scenes < 1)
        throw std::invalid_argument("config: train_scenes/val_scenes must be positive");
    if (timesteps < 1) throw std::invalid_argument("config: timesteps must be positive");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument("config: beta range invalid");
    denoiser.validate();
    segmentor.validate();
    if (lambdas.empty()) throw std::invalid_argument("config: lambdas must be nonempty");
    for (double lam : lambdas)
        if (!(lam > 0.0) || lam > 1.0)
            throw std::invalid_argument("config: lambdas must lie in (0,1]");
    if (!std::is_sorted(lambdas.begin(), lambdas.end()))
        throw std::invalid_argument("config: lambdas must be sorted ascending");
    if (sample_steps < 1) throw std::invalid_argument("config: sampler steps must be positive");
    if (study.splits.empty() || study.seeds.empty() || study.schemes.empty())
        throw std::invalid_argument("config: study lists must be nonempty");
    for (double s : study.splits)
        if (!(s > 0.0) || s > 1.0) throw std::invalid_argument("config: splits must lie in (0,1]");
    for (const std::string& s : study.schemes)
        parse_scheme(s, lambdas, std::max(1, seg_train.epochs));  // validates the spelling
}

ExperimentConfig parse_config(const nlohmann::json& j) {
    check_keys(j, {"version", "seed", "out_dir", "jobs", "world", "schedule", "denoiser",
                   "sampler", "segmentor", "study"},
               "");
    const int version = get_or(j, "version", 1);
    if (version != 1) throw std::invalid_argument("config: unsupported version");

    ExperimentConfig c;
    c.seed = get_or<uint64_t>(j, "seed", 1);
    c.out_dir = get_or<std::string>(j, "out_dir", "runs/default");
    c.jobs = get_or(j, "jobs", 0);

    if (j.contains("world")) {
        const auto& w = j.at("world");
        check_keys(w, {"height", "width", "classes", "scribble_coverage", "min_visible_fraction",
                       "train_scenes", "val_scenes", "cond_mode"},
                   "world.");
        c.world.height = get_or(w, "height", 32);
        c.world.width = get_or(w, "width", 32);
        c.world.classes = get_or(w, "classes", 4);
        c.world.scribble_coverage = get_or(w, "scribble_coverage", 0.03);
        c.world.min_visible_fraction = get_or(w, "min_visible_fraction", 0.02);
        c.train_scenes = get_or(w, "train_scenes", 1024);
        c.val_scenes = get_or(w, "val_scenes", 128);
        const std::string mode = get_or<std::string>(w, "cond_mode", "rgb");
        if (mode == "rgb")
            c.cond_mode = ScribbleRender::Rgb;
        else if (mode == "one_hot")
            c.cond_mode = ScribbleRender::OneHot;
        else
            throw std::invalid_argument("config: world.cond_mode must be rgb or one_hot");
    }

    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        check_keys(s, {"timesteps", "beta_start", "beta_end"}, "schedule.");
        c.timesteps = get_or(s, "timesteps", 200);
        c.beta_start = get_or(s, "beta_start", 5e-4);
        c.beta_end = get_or(s, "beta_end", 0.1);
    }

    if (j.contains("denoiser")) {
        const auto& d = j.at("denoiser");
        check_keys(d, {"base_width", "temb_dim", "levels", "epochs", "batch_size", "lr0",
                       "lr_final", "momentum", "dropout", "drop_class_set", "optimizer"},
                   "denoiser.");
        c.denoiser.base_width = get_or(d, "base_width", 16);
        c.denoiser.temb_dim = get_or(d, "temb_dim", 32);
        c.denoiser.levels = get_or(d, "levels", 3);
        c.den_train.epochs = get_or(d, "epochs", 12);
        c.den_train.batch_size = get_or(d, "batch_size", 16);
        c.den_train.lr0 = get_or(d, "lr0", 0.02);
        c.den_train.lr_final = get_or(d, "lr_final", 0.002);
        c.den_train.momentum = get_or(d, "momentum", 0.9);
        c.den_train.dropout_rate = get_or(d, "dropout", 0.1);
        c.den_train.drop_class_set = get_or(d, "drop_class_set", false);
        const std::string opt = get_or<std::string>(d, "optimizer", "sgd");
        if (opt == "sgd")
            c.den_train.optimizer = Optimizer::Sgd;
        else if (opt == "adam")
            c.den_train.optimizer = Optimizer::Adam;
        else
            throw std::invalid_argument("config: denoiser.optimizer must be sgd or adam");
    }

    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        check_keys(s, {"w", "eta", "steps", "lambdas", "uncond_keeps_class_set"}, "sampler.");
        c.guidance_w = get_or(s, "w", 2.0);
        c.eta = get_or(s, "eta", 0.0);
        c.sample_steps = get_or(s, "steps", 50);
        if (s.contains("lambdas")) c.lambdas = s.at("lambdas").get<std::vector<double>>();
        c.uncond_keeps_class_set = get_or(s, "uncond_keeps_class_set", true);
    }

    if (j.contains("segmentor")) {
        const auto& s = j.at("segmentor");
        check_keys(s, {"width_channels", "epochs", "batch_size", "lr0", "lr_power", "momentum",
                       "pairwise_weight"},
                   "segmentor.");
        c.segmentor.width_channels = get_or(s, "width_channels", 48);
        c.seg_train.epochs = get_or(s, "epochs", 12);
        c.seg_train.batch_size = get_or(s, "batch_size", 16);
        c.seg_train.lr0 = get_or(s, "lr0", 0.1);
        c.seg_train.lr_power = get_or(s, "lr_power", 0.9);
        c.seg_train.momentum = get_or(s, "momentum", 0.9);
        c.seg_train.pairwise_weight = get_or(s, "pairwise_weight", 0.0);
    }

    if (j.contains("study")) {
        const auto& s = j.at("study");
        check_keys(s, {"splits", "schemes", "seeds", "fd_reference_scenes", "fd_bank_cap"},
                   "study.");
        if (s.contains("splits")) c.study.splits = s.at("splits").get<std::vector<double>>();
        if (s.contains("schemes")) c.study.schemes = s.at("schemes").get<std::vector<std::string>>();
        if (s.contains("seeds")) c.study.seeds = s.at("seeds").get<std::vector<uint64_t>>();
        c.study.fd_reference_scenes = get_or(s, "fd_reference_scenes", 256);
        c.study.fd_bank_cap = get_or(s, "fd_bank_cap", 256);
    }

    // derived fields
    c.denoiser.height = c.world.height;
    c.denoiser.width = c.world.width;
    c.denoiser.image_channels = 3;
    c.denoiser.cond_channels = c.cond_mode == ScribbleRender::Rgb ? 3 : c.world.classes;
    c.denoiser.classes = c.world.classes;
    c.denoiser.max_timestep = c.timesteps;
    c.segmentor.height = c.world.height;
    c.segmentor.width = c.world.width;
    c.segmentor.in_channels = 3;
    c.segmentor.classes = c.world.classes;

    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config file missing: " + path.string());
    return parse_config(nlohmann::json::parse(f));
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["version"] = 1;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["jobs"] = c.jobs;
    j["world"] = {{"height", c.world.height},
                  {"width", c.world.width},
                  {"classes", c.world.classes},
                  {"scribble_coverage", c.world.scribble_coverage},
                  {"min_visible_fraction", c.world.min_visible_fraction},
                  {"train_scenes", c.train_scenes},
                  {"val_scenes", c.val_scenes},
                  {"cond_mode", c.cond_mode == ScribbleRender::Rgb ? "rgb" : "one_hot"}};
    j["schedule"] = {{"timesteps", c.timesteps},
                     {"beta_start", c.beta_start},
                     {"beta_end", c.beta_end}};
    j["denoiser"] = {{"base_width", c.denoiser.base_width},
                     {"temb_dim", c.denoiser.temb_dim},
                     {"levels", c.denoiser.levels},
                     {"epochs", c.den_train.epochs},
                     {"batch_size", c.den_train.batch_size},
                     {"lr0", c.den_train.lr0},
                     {"lr_final", c.den_train.lr_final},
                     {"momentum", c.den_train.momentum},
                     {"dropout", c.den_train.dropout_rate},
                     {"drop_class_set", c.den_train.drop_class_set},
                     {"optimizer", c.den_train.optimizer == Optimizer::Adam ? "adam" : "sgd"}};
    j["sampler"] = {{"w", c.guidance_w},
                    {"eta", c.eta},
                    {"steps", c.sample_steps},
                    {"lambdas", c.lambdas},
                    {"uncond_keeps_class_set", c.uncond_keeps_class_set}};
    j["segmentor"] = {{"width_channels", c.segmentor.width_channels},
                      {"epochs", c.seg_train.epochs},
                      {"batch_size", c.seg_train.batch_size},
                      {"lr0", c.seg_train.lr0},
                      {"lr_power", c.seg_train.lr_power},
                      {"momentum", c.seg_train.momentum},
                      {"pairwise_weight", c.seg_train.pairwise_weight}};
    j["study"] = {{"splits", c.study.splits},
                  {"schemes", c.study.schemes},
                  {"seeds", c.study.seeds},
                  {"fd_reference_scenes", c.study.fd_reference_scenes},
                  {"fd_bank_cap", c.study.fd_bank_cap}};
    return j;
}

uint64_t json_hash(const nlohmann::json& j) {
    const std::string dump = j.dump();
    return fnv1a64(dump.data(), dump.size());
}

uint64_t config_hash(const ExperimentConfig& c) {
    // out_dir and jobs are runtime options, not part of the experiment: two
    // runs differing only in them must produce byte-identical reports
    nlohmann::json j = config_to_json(c);
    j.erase("out_dir");
    j.erase("jobs");
    return json_hash(j);
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t stage_seed(uint64_t master, const std::string& stage_name, uint64_t salt) {
    return derive_seed(master, fnv1a64(stage_name), salt);
}

AugmentationScheme parse_scheme(const std::string& spec, const std::vector<double>& lambdas,
                                int epochs) {
    if (spec == "none") return AugmentationScheme::none();
    if (spec == "uniform") return AugmentationScheme::uniform(lambdas);
    if (spec == "adaptive") return AugmentationScheme::adaptive(lambdas, epochs);
    const std::string fixed_prefix = "fixed:";
    const std::string syn_prefix = "synthetic_only:";
    if (spec.rfind(fixed_prefix, 0) == 0)
        return AugmentationScheme::fixed(std::stod(spec.substr(fixed_prefix.size())));
    if (spec.rfind(syn_prefix, 0) == 0)
        return AugmentationScheme::synthetic_only(std::stod(spec.substr(syn_prefix.size())));
    throw std::invalid_argument("unknown augmentation scheme: '" + spec +
                                "' (expected none|fixed:<l>|uniform|adaptive)");
}

}  // namespace scribblediff
