#include "scribblediff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "scribblediff/checkpoint.hpp"
#include "scribblediff/parallel.hpp"

namespace scribblediff {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// lambda values the bank must contain: the configured set plus every fixed /
// synthetic-only scheme value
std::vector<double> bank_lambdas(const ExperimentConfig& cfg) {
    std::set<double> all(cfg.lambdas.begin(), cfg.lambdas.end());
    for (const std::string& s : cfg.study.schemes) {
        AugmentationScheme scheme = parse_scheme(s, cfg.lambdas, std::max(1, cfg.seg_train.epochs));
        if (scheme.kind == SchemeKind::Fixed || scheme.kind == SchemeKind::SyntheticOnly)
            all.insert(scheme.fixed_lambda);
    }
    return {all.begin(), all.end()};
}

double fd_between(const std::vector<Grid>& a, const std::vector<Grid>& b) {
    FeatureConfig fc;
    const FeatureMatrix fa = extract_features(a, fc);
    const FeatureMatrix fb = extract_features(b, fc);
    return frechet_distance(fit_gaussian(fa), fit_gaussian(fb));
}

std::vector<Grid> bank_slice(const SyntheticBank& bank, double lambda, int cap) {
    const int li = bank.lambda_index(lambda);
    const int n = std::min(bank.n_images, cap);
    std::vector<Grid> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(bank.at(i, li));
    return out;
}

std::vector<Grid> real_slice(const Dataset& ds, int cap) {
    const int n = std::min<int>(static_cast<int>(ds.items.size()), cap);
    std::vector<Grid> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(ds.items[i].scene.image);
    return out;
}

double report_lambda(const SyntheticBank& bank) {
    for (double l : bank.lambdas)
        if (std::abs(l - 1.0) < 1e-12) return 1.0;
    return bank.lambdas.back();
}

}  // namespace

nlohmann::json report_to_json(const Report& r) {
    nlohmann::json j;
    j["config_hash"] = hash_hex(r.config_hash);
    auto rows = nlohmann::json::array();
    for (const ReportRow& row : r.rows)
        rows.push_back({{"scheme", row.scheme},
                        {"split", row.split},
                        {"seed", row.seed},
                        {"n_train", row.n_train},
                        {"final_train_loss", row.final_train_loss},
                        {"val_miou", row.val_miou},
                        {"fd_self", row.fd_self},
                        {"fd_val", row.fd_val}});
    j["rows"] = std::move(rows);
    return j;
}

std::string report_to_csv(const Report& r) {
    std::string out = "scheme,split,seed,n_train,final_train_loss,val_miou,fd_self,fd_val\n";
    for (const ReportRow& row : r.rows) {
        out += row.scheme + "," + fmt_double(row.split) + "," + std::to_string(row.seed) + "," +
               std::to_string(row.n_train) + "," + fmt_double(row.final_train_loss) + "," +
               fmt_double(row.val_miou) + "," + fmt_double(row.fd_self) + "," +
               fmt_double(row.fd_val) + "\n";
    }
    return out;
}

fs::path StageCache::ensure(const std::string& name, uint64_t hash, bool* hit) const {
    const fs::path dir = root / (name + "-" + hash_hex(hash));
    const fs::path meta = dir / "stage.json";
    *hit = false;
    if (fs::exists(meta)) {
        std::ifstream f(meta);
        nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
        if (!j.is_discarded() && j.value("hash", "") == hash_hex(hash)) {
            *hit = true;
            return dir;
        }
        // recorded hash disagrees with the requesting config: stale cache
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    return dir;
}

void StageCache::mark_done(const fs::path& dir, const std::string& name, uint64_t hash) {
    nlohmann::json j;
    j["stage"] = name;
    j["hash"] = hash_hex(hash);
    std::ofstream f(dir / "stage.json");
    f << j.dump(2) << "\n";
    if (!f) throw std::runtime_error("stage metadata write failed: " + dir.string());
}

PipelineContext::PipelineContext(const ExperimentConfig& cfg_) : cfg(cfg_) {
    cfg.validate();
    out = cfg.out_dir;
    cache.root = out / "stages";
    set_max_jobs(cfg.jobs);
}

int PipelineContext::split_count(double split) const {
    const int n = static_cast<int>(std::llround(split * cfg.train_scenes));
    return std::max(1, std::min(n, cfg.train_scenes));
}

uint64_t PipelineContext::data_hash() const {
    nlohmann::json j = config_to_json(cfg).at("world");
    j["stage"] = "data";
    j["train_seed"] = stage_seed(cfg.seed, "data.train");
    j["val_seed"] = stage_seed(cfg.seed, "data.val");
    return json_hash(j);
}

void PipelineContext::ensure_data(Dataset& train, Dataset& val) const {
    bool hit = false;
    const fs::path dir = cache.ensure("data", data_hash(), &hit);
    if (hit) {
        train = load_dataset(dir / "train");
        val = load_dataset(dir / "val");
        return;
    }
    train = build_dataset(cfg.train_scenes, cfg.world, cfg.cond_mode,
                          stage_seed(cfg.seed, "data.train"));
    val = build_dataset(cfg.val_scenes, cfg.world, cfg.cond_mode, stage_seed(cfg.seed, "data.val"));
    save_dataset(train, dir / "train");
    save_dataset(val, dir / "val");
    StageCache::mark_done(dir, "data", data_hash());
}

uint64_t PipelineContext::denoiser_hash(double split, uint64_t row_seed) const {
    const nlohmann::json full = config_to_json(cfg);
    nlohmann::json j;
    j["stage"] = "denoiser";
    j["data"] = hash_hex(data_hash());
    j["schedule"] = full.at("schedule");
    j["denoiser"] = full.at("denoiser");
    j["n_train"] = split_count(split);
    j["row_seed"] = row_seed;
    return json_hash(j);
}

Denoiser PipelineContext::ensure_denoiser(const Dataset& train_full, double split,
                                          uint64_t row_seed, double* final_loss) const {
    const uint64_t h = denoiser_hash(split, row_seed);
    bool hit = false;
    const fs::path dir = cache.ensure("denoiser", h, &hit);
    if (hit) {
        if (final_loss) {
            std::ifstream f(dir / "train_meta.json");
            nlohmann::json j = nlohmann::json::parse(f);
            *final_loss = j.at("final_loss").get<double>();
        }
        return load_denoiser(dir / "ckpt");
    }
    const Dataset ds = train_full.prefix(split_count(split));
    Denoiser d = init_denoiser(cfg.denoiser, stage_seed(cfg.seed, "denoiser.init", row_seed));
    const NoiseSchedule s = cfg.make_schedule();
    const auto examples = ds.train_examples();
    DenoiserTrainResult res =
        train_denoiser(d, examples, s, cfg.den_train, stage_seed(cfg.seed, "denoiser.train", row_seed));
    save_denoiser(dir / "ckpt", d);
    nlohmann::json meta;
    meta["final_loss"] = res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back();
    meta["epoch_loss"] = res.epoch_loss;
    std::ofstream mf(dir / "train_meta.json");
    mf << meta.dump(2) << "\n";
    StageCache::mark_done(dir, "denoiser", h);
    if (final_loss) *final_loss = res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back();
    return d;
}

uint64_t PipelineContext::bank_hash(double split, uint64_t row_seed) const {
    const nlohmann::json full = config_to_json(cfg);
    nlohmann::json j;
    j["stage"] = "bank";
    j["denoiser"] = hash_hex(denoiser_hash(split, row_seed));
    j["sampler"] = full.at("sampler");
    j["lambdas"] = bank_lambdas(cfg);
    j["row_seed"] = row_seed;
    return json_hash(j);
}

SyntheticBank PipelineContext::ensure_bank(const Denoiser& d, const Dataset& train_full,
                                           double split, uint64_t row_seed) const {
    const uint64_t h = bank_hash(split, row_seed);
    bool hit = false;
    const fs::path dir = cache.ensure("bank", h, &hit);
    if (hit) return load_bank(dir, param_store_hash(d.params));
    const Dataset ds = train_full.prefix(split_count(split));
    SyntheticBank bank =
        synthesize_bank(d, cfg.make_schedule(), ds, bank_lambdas(cfg), cfg.guidance_w,
                        cfg.sample_steps, cfg.eta, stage_seed(cfg.seed, "bank", row_seed));
    save_bank(bank, dir);
    StageCache::mark_done(dir, "bank", h);
    return bank;
}

uint64_t PipelineContext::seg_hash(double split, uint64_t row_seed,
                                   const std::string& scheme) const {
    const nlohmann::json full = config_to_json(cfg);
    nlohmann::json j;
    j["stage"] = "seg";
    j["scheme"] = scheme;
    j["upstream"] = scheme == "none" ? hash_hex(data_hash()) : hash_hex(bank_hash(split, row_seed));
    j["segmentor"] = full.at("segmentor");
    j["n_train"] = split_count(split);
    j["row_seed"] = row_seed;
    return json_hash(j);
}

// failures surface with the failing stage named
template <class Fn>
static auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw std::runtime_error("stage '" + stage + "' failed: " + e.what());
    }
}

Report run_experiment(const ExperimentConfig& cfg) {
    PipelineContext ctx(cfg);
    fs::create_directories(ctx.out);

    Dataset train_full, val;
    run_stage("data", [&] { ctx.ensure_data(train_full, val); return 0; });

    Report report;
    report.config_hash = config_hash(cfg);

    for (double split : cfg.study.splits) {
        for (uint64_t row_seed : cfg.study.seeds) {
            double den_loss = 0.0;
            Denoiser d = run_stage("denoiser", [&] {
                return ctx.ensure_denoiser(train_full, split, row_seed, &den_loss);
            });

            bool any_bank = false;
            for (const std::string& s : cfg.study.schemes)
                if (s != "none") any_bank = true;

            SyntheticBank bank;
            double fd_self = 0.0, fd_val = 0.0;
            if (any_bank) {
                bank = run_stage("bank",
                                 [&] { return ctx.ensure_bank(d, train_full, split, row_seed); });
                const Dataset ds_split = train_full.prefix(ctx.split_count(split));
                const double lam = report_lambda(bank);
                const auto synth = bank_slice(bank, lam, cfg.study.fd_bank_cap);
                fd_self = fd_between(synth, real_slice(ds_split, cfg.study.fd_bank_cap));
                fd_val = fd_between(synth, real_slice(val, cfg.study.fd_reference_scenes));
            }

            const Dataset ds_split = train_full.prefix(ctx.split_count(split));
            for (const std::string& scheme_name : cfg.study.schemes) {
                const uint64_t h = ctx.seg_hash(split, row_seed, scheme_name);
                bool hit = false;
                const fs::path dir = ctx.cache.ensure("seg", h, &hit);
                ReportRow row;
                row.scheme = scheme_name;
                row.split = split;
                row.seed = row_seed;
                row.n_train = ctx.split_count(split);
                row.fd_self = fd_self;
                row.fd_val = fd_val;
                if (hit) {
                    std::ifstream f(dir / "result.json");
                    nlohmann::json j = nlohmann::json::parse(f);
                    row.val_miou = j.at("val_miou").get<double>();
                    row.final_train_loss = j.at("final_train_loss").get<double>();
                } else {
                    AugmentationScheme scheme =
                        parse_scheme(scheme_name, cfg.lambdas, cfg.seg_train.epochs);
                    Segmentor seg = init_segmentor(
                        cfg.segmentor, stage_seed(cfg.seed, "seg.init." + scheme_name, row_seed));
                    SegTrainHistory hist = run_stage("seg:" + scheme_name, [&] {
                        return train_segmentor(seg, ds_split,
                                               scheme.kind == SchemeKind::None ? nullptr : &bank,
                                               scheme, cfg.seg_train,
                                               stage_seed(cfg.seed, "seg.train." + scheme_name,
                                                          row_seed));
                    });
                    row.val_miou = evaluate_miou(seg, val);
                    row.final_train_loss = hist.epoch_loss.empty() ? 0.0 : hist.epoch_loss.back();
                    save_segmentor(dir / "ckpt", seg);
                    // val_miou is recorded where evaluated (final epoch here)
                    std::string csv = "epoch,train_loss,val_miou\n";
                    for (size_t e = 0; e < hist.epoch_loss.size(); ++e) {
                        csv += std::to_string(e + 1) + "," + fmt_double(hist.epoch_loss[e]) + ",";
                        if (e + 1 == hist.epoch_loss.size()) csv += fmt_double(row.val_miou);
                        csv += "\n";
                    }
                    std::ofstream hf(dir / "history.csv");
                    hf << csv;
                    nlohmann::json j;
                    j["val_miou"] = row.val_miou;
                    j["final_train_loss"] = row.final_train_loss;
                    std::ofstream rf(dir / "result.json");
                    rf << j.dump(2) << "\n";
                    StageCache::mark_done(dir, "seg", h);
                }
                report.rows.push_back(std::move(row));
            }
        }
    }

    std::ofstream jf(ctx.out / "report.json");
    jf << report_to_json(report).dump(2) << "\n";
    if (!jf) throw std::runtime_error("report write failed");
    std::ofstream cf(ctx.out / "report.csv");
    cf << report_to_csv(report);
    if (!cf) throw std::runtime_error("report write failed");
    return report;
}

std::vector<SweepPoint> sweep_guidance(const ExperimentConfig& cfg,
                                       const std::vector<double>& ws) {
    PipelineContext ctx(cfg);
    Dataset train_full, val;
    ctx.ensure_data(train_full, val);
    const uint64_t row_seed = cfg.study.seeds.front();
    Denoiser d = ctx.ensure_denoiser(train_full, 1.0, row_seed);
    const NoiseSchedule s = cfg.make_schedule();
    const Dataset ds = train_full.prefix(std::min(ctx.split_count(1.0), cfg.study.fd_bank_cap));

    std::vector<SweepPoint> points;
    for (double w : ws) {
        SyntheticBank bank = synthesize_bank(
            d, s, ds, {1.0}, w, cfg.sample_steps, cfg.eta,
            stage_seed(cfg.seed, "sweep.w", static_cast<uint64_t>(std::llround(w * 1e6))));
        const auto synth = bank_slice(bank, 1.0, cfg.study.fd_bank_cap);
        SweepPoint p;
        p.x = w;
        p.fd_self = fd_between(synth, real_slice(ds, cfg.study.fd_bank_cap));
        p.fd_val = fd_between(synth, real_slice(val, cfg.study.fd_reference_scenes));
        points.push_back(p);
    }
    return points;
}

std::vector<SweepPoint> sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& ls) {
    PipelineContext ctx(cfg);
    Dataset train_full, val;
    ctx.ensure_data(train_full, val);
    const uint64_t row_seed = cfg.study.seeds.front();
    Denoiser d = ctx.ensure_denoiser(train_full, 1.0, row_seed);
    const NoiseSchedule s = cfg.make_schedule();
    const Dataset ds = train_full.prefix(std::min(ctx.split_count(1.0), cfg.study.fd_bank_cap));

    std::vector<SweepPoint> points;
    for (double lam : ls) {
        SyntheticBank bank = synthesize_bank(
            d, s, ds, {lam}, cfg.guidance_w, cfg.sample_steps, cfg.eta,
            stage_seed(cfg.seed, "sweep.lambda", static_cast<uint64_t>(std::llround(lam * 1e9))));
        const auto synth = bank_slice(bank, lam, cfg.study.fd_bank_cap);
        SweepPoint p;
        p.x = lam;
        p.fd_self = fd_between(synth, real_slice(ds, cfg.study.fd_bank_cap));
        p.fd_val = fd_between(synth, real_slice(val, cfg.study.fd_reference_scenes));
        points.push_back(p);
    }
    return points;
}

void write_sweep_files(const fs::path& out, const std::string& name, const std::string& x_label,
                       const std::vector<SweepPoint>& points) {
    fs::create_directories(out);
    nlohmann::json j;
    j["sweep"] = name;
    auto rows = nlohmann::json::array();
    for (const SweepPoint& p : points)
        rows.push_back({{x_label, p.x}, {"fd_self", p.fd_self}, {"fd_val", p.fd_val}});
    j["rows"] = std::move(rows);
    std::ofstream jf(out / (name + ".json"));
    jf << j.dump(2) << "\n";
    std::string csv = x_label + ",fd_self,fd_val\n";
    for (const SweepPoint& p : points)
        csv += fmt_double(p.x) + "," + fmt_double(p.fd_self) + "," + fmt_double(p.fd_val) + "\n";
    std::ofstream cf(out / (name + ".csv"));
    cf << csv;
    if (!cf) throw std::runtime_error("sweep write failed");
}

}  // namespace scribblediff
