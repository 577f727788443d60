#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scribblediff/grid.hpp"
#include "scribblediff/segmentor.hpp"

namespace scribblediff {

struct FeatureMatrix {
    int n = 0, d = 0;
    std::vector<double> v;  // row-major n x d
    double at(int r, int c) const { return v[static_cast<size_t>(r) * d + c]; }
};

struct FeatureConfig {
    enum class Kind { PooledPixels, RandomProjection } kind = Kind::PooledPixels;
    int rp_dim = 64;       // RandomProjection output dimension
    uint64_t rp_seed = 1;  // fixed seed for the projection matrix
};

// PooledPixels: per-channel mean and variance over a 4x4 spatial grid of cells
// (D = channels*32). RandomProjection: fixed seeded linear map of the
// flattened pixels.
FeatureMatrix extract_features(std::span<const Grid> images, const FeatureConfig& cfg);

struct GaussianMoments {
    int dim = 0;
    std::vector<double> mean;  // dim
    std::vector<double> cov;   // dim x dim, symmetric
};

// Unbiased covariance (divide by n-1), symmetrized as (S + S^T)/2.
GaussianMoments fit_gaussian(const FeatureMatrix& f);

// d^2 = |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)); the trace of the
// matrix square root is computed via the symmetric similarity construction
// (Sa^(1/2) Sb Sa^(1/2))^(1/2) with eigenvalues below 1e-10 clamped to zero.
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Eigenvalues ascending; eigenvectors stored as rows of V.
void sym_eig(std::span<const double> A, int n, std::vector<double>& eigenvalues,
             std::vector<double>& V);

struct MiouResult {
    double miou = 0.0;
    std::vector<double> per_class;  // NaN for classes absent from both sets
};

// Dataset-level accumulation: global intersection/union per class; classes
// absent from both prediction and ground truth are excluded from the mean.
MiouResult miou(std::span<const LabelGrid> pred, std::span<const LabelGrid> gt, int classes);

// Train a segmentor exclusively on synthetic images (each label paired with
// its bank entry at the given lambda) and score mIoU on held-out real scenes.
double synthetic_only_eval(const Denoiser& d, const NoiseSchedule& s, const Dataset& train,
                           const Dataset& val, const SegTrainConfig& seg_cfg, double lambda,
                           double w, int steps, double eta, uint64_t seed);

}  // namespace scribblediff
