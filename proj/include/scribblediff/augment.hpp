#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scribblediff/denoiser.hpp"
#include "scribblediff/sampler.hpp"
#include "scribblediff/shapesworld.hpp"

namespace scribblediff {

struct BankProvenance {
    double w = 2.0;
    int steps = 50;
    double eta = 0.0;
    uint64_t seed = 0;
    uint64_t denoiser_hash = 0;
};

// Synthetic images indexed by (image id, encode ratio); complete by
// construction: every (id, lambda) pair of the source dataset is present.
struct SyntheticBank {
    std::vector<double> lambdas;  // sorted ascending
    int n_images = 0;
    int channels = 0, height = 0, width = 0;
    std::vector<Grid> entries;  // entries[image_id * lambdas.size() + lambda_idx]
    BankProvenance prov;

    int lambda_index(double lam) const;  // throws if lam is not in the bank
    const Grid& at(int image_id, int lambda_idx) const;
    void validate() const;
};

// One sample per (image, lambda), rng keyed by (seed, image_id, lambda) so the
// result is independent of scheduling. Per-entry reverse steps are capped at
// floor(lambda*T).
SyntheticBank synthesize_bank(const Denoiser& d, const NoiseSchedule& s, const Dataset& ds,
                              const std::vector<double>& lambdas, double w, int steps, double eta,
                              uint64_t seed);

enum class SchemeKind { None, Fixed, Uniform, Adaptive, SyntheticOnly };

struct AugmentationScheme {
    SchemeKind kind = SchemeKind::None;
    double fixed_lambda = 1.0;          // Fixed / SyntheticOnly
    std::vector<double> lambdas;        // Uniform / Adaptive source set
    std::vector<double> schedule;       // Adaptive per-epoch lambda
    bool redraw_each_epoch = true;      // Uniform: redraw the per-slot lambdas every epoch

    static AugmentationScheme none();
    static AugmentationScheme fixed(double lambda);
    static AugmentationScheme uniform(std::vector<double> lambdas);
    static AugmentationScheme adaptive(std::vector<double> lambdas, int epochs);
    static AugmentationScheme synthetic_only(double lambda);

    void validate() const;
    std::string name() const;
};

// Non-decreasing walk through the sorted set: equal-length epoch blocks with
// the remainder on the final value; for E < |set| a rounded linear ramp.
std::vector<double> make_adaptive_schedule(const std::vector<double>& lambdas, int epochs);

struct EpochItem {
    int label_id;       // index into the dataset (scribbles / conditions)
    const Grid* image;  // real image or bank entry
    bool synthetic;
};

// Per-epoch training list. Schemes other than None return 2n items (each label
// paired with its real image and one synthetic image) in a deterministic
// shuffled order keyed by (key, epoch); None returns the n real items.
std::vector<EpochItem> compose_epoch(const Dataset& ds, const SyntheticBank* bank,
                                     const AugmentationScheme& scheme, int epoch, uint64_t key);

void save_bank(const SyntheticBank& bank, const std::filesystem::path& dir);
// expected_denoiser_hash != 0 enforces provenance agreement
SyntheticBank load_bank(const std::filesystem::path& dir, uint64_t expected_denoiser_hash = 0);

}  // namespace scribblediff
