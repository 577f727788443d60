#include "scribblediff/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "scribblediff/checkpoint.hpp"
#include "scribblediff/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"

namespace scribblediff {

namespace {
const uint64_t kTagSample = fnv1a64("bank.sample");
const uint64_t kTagUniform = fnv1a64("compose.uniform");
const uint64_t kTagShuffle = fnv1a64("compose.shuffle");

uint64_t lambda_key(double lam) { return static_cast<uint64_t>(std::llround(lam * 1e9)); }
}  // namespace

int SyntheticBank::lambda_index(double lam) const {
    for (size_t i = 0; i < lambdas.size(); ++i)
        if (std::abs(lambdas[i] - lam) < 1e-12) return static_cast<int>(i);
    throw std::invalid_argument("SyntheticBank: lambda " + std::to_string(lam) + " not in bank");
}

const Grid& SyntheticBank::at(int image_id, int lambda_idx) const {
    if (image_id < 0 || image_id >= n_images)
        throw std::invalid_argument("SyntheticBank: image_id out of range");
    if (lambda_idx < 0 || lambda_idx >= static_cast<int>(lambdas.size()))
        throw std::invalid_argument("SyntheticBank: lambda index out of range");
    return entries[static_cast<size_t>(image_id) * lambdas.size() + lambda_idx];
}

void SyntheticBank::validate() const {
    if (lambdas.empty()) throw std::runtime_error("SyntheticBank: empty lambda list");
    if (!std::is_sorted(lambdas.begin(), lambdas.end()))
        throw std::runtime_error("SyntheticBank: lambdas not sorted");
    if (entries.size() != static_cast<size_t>(n_images) * lambdas.size())
        throw std::runtime_error("SyntheticBank: incomplete bank");
    for (const Grid& g : entries)
        if (g.c != channels || g.h != height || g.w != width)
            throw std::runtime_error("SyntheticBank: entry shape mismatch");
}

SyntheticBank synthesize_bank(const Denoiser& d, const NoiseSchedule& s, const Dataset& ds,
                              const std::vector<double>& lambdas, double w, int steps, double eta,
                              uint64_t seed) {
    if (lambdas.empty()) throw std::invalid_argument("synthesize_bank: empty lambda list");
    for (double lam : lambdas)
        if (!(lam > 0.0) || lam > 1.0)
            throw std::invalid_argument("synthesize_bank: lambda must be in (0,1]");
    if (ds.items.empty()) throw std::invalid_argument("synthesize_bank: empty dataset");

    SyntheticBank bank;
    bank.lambdas = lambdas;
    std::sort(bank.lambdas.begin(), bank.lambdas.end());
    bank.n_images = static_cast<int>(ds.items.size());
    bank.channels = ds.items[0].scene.image.c;
    bank.height = ds.items[0].scene.image.h;
    bank.width = ds.items[0].scene.image.w;
    bank.prov = {w, steps, eta, seed, param_store_hash(d.params)};
    const size_t L = bank.lambdas.size();
    bank.entries.resize(static_cast<size_t>(bank.n_images) * L);

    const auto total = static_cast<int64_t>(bank.entries.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_jobs())
#endif
    for (int64_t k = 0; k < total; ++k) {
        const int image_id = static_cast<int>(k / static_cast<int64_t>(L));
        const int li = static_cast<int>(k % static_cast<int64_t>(L));
        const double lam = bank.lambdas[li];
        SamplerConfig cfg;
        cfg.w = w;
        cfg.lambda = lam;
        cfg.eta = eta;
        cfg.steps = std::min<int>(steps, static_cast<int>(tau_floor(lam, s.T, 1, 1)));
        cfg.seed = derive_seed(seed, kTagSample, static_cast<uint64_t>(image_id), lambda_key(lam));
        const DatasetItem& it = ds.items[image_id];
        bank.entries[k] = sample(d, s, it.scene.image, it.cond, cfg);
    }
    bank.validate();
    return bank;
}

AugmentationScheme AugmentationScheme::none() { return {}; }

AugmentationScheme AugmentationScheme::fixed(double lambda) {
    AugmentationScheme s;
    s.kind = SchemeKind::Fixed;
    s.fixed_lambda = lambda;
    s.validate();
    return s;
}

AugmentationScheme AugmentationScheme::uniform(std::vector<double> lambdas) {
    AugmentationScheme s;
    s.kind = SchemeKind::Uniform;
    s.lambdas = std::move(lambdas);
    std::sort(s.lambdas.begin(), s.lambdas.end());
    s.validate();
    return s;
}

AugmentationScheme AugmentationScheme::adaptive(std::vector<double> lambdas, int epochs) {
    AugmentationScheme s;
    s.kind = SchemeKind::Adaptive;
    std::sort(lambdas.begin(), lambdas.end());
    s.schedule = make_adaptive_schedule(lambdas, epochs);
    s.lambdas = std::move(lambdas);
    s.validate();
    return s;
}

AugmentationScheme AugmentationScheme::synthetic_only(double lambda) {
    AugmentationScheme s;
    s.kind = SchemeKind::SyntheticOnly;
    s.fixed_lambda = lambda;
    s.validate();
    return s;
}

void AugmentationScheme::validate() const {
    switch (kind) {
        case SchemeKind::None:
            return;
        case SchemeKind::Fixed:
        case SchemeKind::SyntheticOnly:
            if (!(fixed_lambda > 0.0) || fixed_lambda > 1.0)
                throw std::invalid_argument("AugmentationScheme: lambda must be in (0,1]");
            return;
        case SchemeKind::Uniform:
            if (lambdas.empty()) throw std::invalid_argument("AugmentationScheme: empty lambda set");
            return;
        case SchemeKind::Adaptive:
            if (schedule.empty()) throw std::invalid_argument("AugmentationScheme: empty schedule");
            for (size_t i = 1; i < schedule.size(); ++i)
                if (schedule[i] < schedule[i - 1])
                    throw std::invalid_argument("AugmentationScheme: schedule must be non-decreasing");
            return;
    }
    throw std::logic_error("AugmentationScheme: bad kind");
}

std::string AugmentationScheme::name() const {
    switch (kind) {
        case SchemeKind::None:
            return "none";
        case SchemeKind::Fixed: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "fixed:%g", fixed_lambda);
            return buf;
        }
        case SchemeKind::Uniform:
            return "uniform";
        case SchemeKind::Adaptive:
            return "adaptive";
        case SchemeKind::SyntheticOnly: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "synthetic_only:%g", fixed_lambda);
            return buf;
        }
    }
    return "?";
}

std::vector<double> make_adaptive_schedule(const std::vector<double>& lambdas, int epochs) {
    if (lambdas.empty()) throw std::invalid_argument("make_adaptive_schedule: empty lambda set");
    if (!std::is_sorted(lambdas.begin(), lambdas.end()))
        throw std::invalid_argument("make_adaptive_schedule: lambdas must be sorted ascending");
    if (epochs < 1) throw std::invalid_argument("make_adaptive_schedule: epochs must be >= 1");

    const int L = static_cast<int>(lambdas.size());
    std::vector<double> schedule(epochs);
    if (epochs == 1) {
        schedule[0] = lambdas.back();
        return schedule;
    }
    if (epochs >= L) {
        const int block = epochs / L;
        for (int e = 0; e < epochs; ++e) schedule[e] = lambdas[std::min(L - 1, e / block)];
    } else {
        for (int e = 0; e < epochs; ++e) {
            const int idx = static_cast<int>(
                std::lround(static_cast<double>(e) * (L - 1) / static_cast<double>(epochs - 1)));
            schedule[e] = lambdas[idx];
        }
    }
    return schedule;
}

std::vector<EpochItem> compose_epoch(const Dataset& ds, const SyntheticBank* bank,
                                     const AugmentationScheme& scheme, int epoch, uint64_t key) {
    scheme.validate();
    const int n = static_cast<int>(ds.items.size());
    if (n == 0) throw std::invalid_argument("compose_epoch: empty dataset");

    std::vector<EpochItem> out;
    if (scheme.kind == SchemeKind::None) {
        out.reserve(n);
        for (int i = 0; i < n; ++i) out.push_back({i, &ds.items[i].scene.image, false});
        return out;
    }

    if (!bank) throw std::invalid_argument("compose_epoch: scheme requires a synthetic bank");
    if (bank->n_images != n)
        throw std::invalid_argument("compose_epoch: bank does not cover the dataset");
    if (epoch < 1) throw std::invalid_argument("compose_epoch: epoch must be >= 1");

    auto synthetic_for = [&](int i) -> const Grid* {
        switch (scheme.kind) {
            case SchemeKind::Fixed:
            case SchemeKind::SyntheticOnly:
                return &bank->at(i, bank->lambda_index(scheme.fixed_lambda));
            case SchemeKind::Adaptive: {
                if (epoch > static_cast<int>(scheme.schedule.size()))
                    throw std::invalid_argument("compose_epoch: epoch beyond adaptive schedule");
                return &bank->at(i, bank->lambda_index(scheme.schedule[epoch - 1]));
            }
            default:
                return nullptr;  // Uniform handled separately
        }
    };

    if (scheme.kind == SchemeKind::SyntheticOnly) {
        out.reserve(n);
        for (int i = 0; i < n; ++i) out.push_back({i, synthetic_for(i), true});
    } else {
        out.reserve(2 * n);
        for (int i = 0; i < n; ++i) out.push_back({i, &ds.items[i].scene.image, false});
        if (scheme.kind == SchemeKind::Uniform) {
            const uint64_t draw_epoch = scheme.redraw_each_epoch ? static_cast<uint64_t>(epoch) : 1;
            Rng draw(derive_seed(key, kTagUniform, draw_epoch));
            std::vector<int> indices(scheme.lambdas.size());
            for (size_t li = 0; li < scheme.lambdas.size(); ++li)
                indices[li] = bank->lambda_index(scheme.lambdas[li]);
            for (int i = 0; i < n; ++i) {
                const int li = indices[draw.uniform_int(0, static_cast<int64_t>(indices.size()) - 1)];
                out.push_back({i, &bank->at(i, li), true});
            }
        } else {
            for (int i = 0; i < n; ++i) out.push_back({i, synthetic_for(i), true});
        }
    }

    // deterministic interleave keyed by (key, epoch)
    Rng shuffle(derive_seed(key, kTagShuffle, static_cast<uint64_t>(epoch)));
    for (int i = static_cast<int>(out.size()) - 1; i > 0; --i)
        std::swap(out[i], out[shuffle.uniform_int(0, i)]);
    return out;
}

void save_bank(const SyntheticBank& bank, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    bank.validate();
    fs::create_directories(dir);

    nlohmann::json idx;
    idx["version"] = 1;
    idx["kind"] = "scribblediff-bank";
    idx["lambdas"] = bank.lambdas;
    idx["n_images"] = bank.n_images;
    idx["shape"] = {bank.channels, bank.height, bank.width};
    idx["provenance"] = {{"w", bank.prov.w},
                         {"steps", bank.prov.steps},
                         {"eta", bank.prov.eta},
                         {"seed", bank.prov.seed},
                         {"denoiser_hash", bank.prov.denoiser_hash}};
    // entries are stored in one blob, row-major over (image_id, lambda_idx)
    idx["entries_file"] = "entries.bin";
    idx["entry_floats"] = static_cast<size_t>(bank.channels) * bank.height * bank.width;

    std::ofstream jf(dir / "bank.json");
    jf << idx.dump(2) << "\n";
    if (!jf) throw std::runtime_error("bank manifest write failed");

    std::ofstream bf(dir / "entries.bin", std::ios::binary);
    for (const Grid& g : bank.entries)
        bf.write(reinterpret_cast<const char*>(g.v.data()),
                 static_cast<std::streamsize>(g.v.size() * 4));
    if (!bf) throw std::runtime_error("bank blob write failed");
}

SyntheticBank load_bank(const std::filesystem::path& dir, uint64_t expected_denoiser_hash) {
    std::ifstream jf(dir / "bank.json");
    if (!jf) throw std::runtime_error("bank manifest missing: " + (dir / "bank.json").string());
    nlohmann::json idx = nlohmann::json::parse(jf);
    if (idx.at("kind") != "scribblediff-bank")
        throw std::runtime_error("not a bank directory: " + dir.string());

    SyntheticBank bank;
    bank.lambdas = idx.at("lambdas").get<std::vector<double>>();
    bank.n_images = idx.at("n_images").get<int>();
    const auto shape = idx.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw std::runtime_error("bank shape must be (c,h,w)");
    bank.channels = shape[0];
    bank.height = shape[1];
    bank.width = shape[2];
    const auto& prov = idx.at("provenance");
    bank.prov.w = prov.at("w").get<double>();
    bank.prov.steps = prov.at("steps").get<int>();
    bank.prov.eta = prov.at("eta").get<double>();
    bank.prov.seed = prov.at("seed").get<uint64_t>();
    bank.prov.denoiser_hash = prov.at("denoiser_hash").get<uint64_t>();

    if (expected_denoiser_hash != 0 && bank.prov.denoiser_hash != expected_denoiser_hash)
        throw std::runtime_error("bank provenance mismatch: bank was synthesized by a different "
                                 "denoiser checkpoint");

    const size_t entry_floats = idx.at("entry_floats").get<size_t>();
    const size_t n_entries = static_cast<size_t>(bank.n_images) * bank.lambdas.size();
    std::ifstream bf(dir / idx.at("entries_file").get<std::string>(), std::ios::binary);
    if (!bf) throw std::runtime_error("bank blob missing");
    bank.entries.resize(n_entries);
    for (size_t k = 0; k < n_entries; ++k) {
        Grid g(bank.channels, bank.height, bank.width);
        bf.read(reinterpret_cast<char*>(g.v.data()),
                static_cast<std::streamsize>(entry_floats * 4));
        if (bf.gcount() != static_cast<std::streamsize>(entry_floats * 4))
            throw std::runtime_error("bank blob truncated (partial banks are rejected)");
        bank.entries[k] = std::move(g);
    }
    bank.validate();
    return bank;
}

}  // namespace scribblediff
