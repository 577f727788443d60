#include "scribblediff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "scribblediff/augment.hpp"
#include "scribblediff/parallel.hpp"
#include "scribblediff/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scribblediff {

namespace {
const uint64_t kTagProjection = fnv1a64("metrics.projection");
const uint64_t kTagSynOnly = fnv1a64("metrics.synthetic_only");

void pooled_row(const Grid& img, double* row) {
    const int cells = 4;
    const int ch = img.h / cells, cw = img.w / cells;
    int k = 0;
    for (int c = 0; c < img.c; ++c) {
        for (int gy = 0; gy < cells; ++gy) {
            for (int gx = 0; gx < cells; ++gx) {
                double sum = 0.0, sum_sq = 0.0;
                for (int y = gy * ch; y < (gy + 1) * ch; ++y)
                    for (int x = gx * cw; x < (gx + 1) * cw; ++x) {
                        const double v = img.at(c, y, x);
                        sum += v;
                        sum_sq += v * v;
                    }
                const double npix = static_cast<double>(ch) * cw;
                const double mean = sum / npix;
                row[k] = mean;
                row[k + cells * cells * img.c] = sum_sq / npix - mean * mean;
                ++k;
            }
        }
    }
}
}  // namespace

FeatureMatrix extract_features(std::span<const Grid> images, const FeatureConfig& cfg) {
    if (images.empty()) throw std::invalid_argument("extract_features: empty image list");
    const Grid& first = images[0];
    for (const Grid& g : images)
        if (!g.same_shape(first)) throw std::invalid_argument("extract_features: mixed shapes");

    FeatureMatrix out;
    out.n = static_cast<int>(images.size());
    if (cfg.kind == FeatureConfig::Kind::PooledPixels) {
        if (first.h % 4 != 0 || first.w % 4 != 0)
            throw std::invalid_argument("extract_features: pooled mode needs h,w divisible by 4");
        out.d = first.c * 4 * 4 * 2;
        out.v.assign(static_cast<size_t>(out.n) * out.d, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_jobs())
#endif
        for (int i = 0; i < out.n; ++i)
            pooled_row(images[i], out.v.data() + static_cast<size_t>(i) * out.d);
        return out;
    }

    // RandomProjection: rows of the projection matrix are drawn once from the
    // fixed seed; entries scaled by 1/sqrt(pixels)
    const int D = cfg.rp_dim;
    if (D < 1) throw std::invalid_argument("extract_features: rp_dim must be positive");
    const size_t npix = first.size();
    std::vector<float> proj(static_cast<size_t>(D) * npix);
    Rng rng(derive_seed(cfg.rp_seed, kTagProjection));
    const double scale = 1.0 / std::sqrt(static_cast<double>(npix));
    for (auto& x : proj) x = static_cast<float>(rng.normal() * scale);

    out.d = D;
    out.v.assign(static_cast<size_t>(out.n) * D, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_jobs())
#endif
    for (int i = 0; i < out.n; ++i) {
        const Grid& g = images[i];
        double* row = out.v.data() + static_cast<size_t>(i) * D;
        for (int r = 0; r < D; ++r) {
            const float* pr = proj.data() + static_cast<size_t>(r) * npix;
            double acc = 0.0;
            for (size_t k = 0; k < npix; ++k) acc += static_cast<double>(pr[k]) * g.v[k];
            row[r] = acc;
        }
    }
    return out;
}

GaussianMoments fit_gaussian(const FeatureMatrix& f) {
    if (f.n < 2) throw std::invalid_argument("fit_gaussian: need at least two samples");
    GaussianMoments m;
    m.dim = f.d;
    m.mean.assign(f.d, 0.0);
    for (int i = 0; i < f.n; ++i)
        for (int j = 0; j < f.d; ++j) m.mean[j] += f.at(i, j);
    for (double& x : m.mean) x /= f.n;

    m.cov.assign(static_cast<size_t>(f.d) * f.d, 0.0);
    for (int i = 0; i < f.n; ++i) {
        for (int a = 0; a < f.d; ++a) {
            const double da = f.at(i, a) - m.mean[a];
            for (int b = a; b < f.d; ++b)
                m.cov[static_cast<size_t>(a) * f.d + b] += da * (f.at(i, b) - m.mean[b]);
        }
    }
    const double inv = 1.0 / (f.n - 1);
    for (int a = 0; a < f.d; ++a)
        for (int b = a; b < f.d; ++b) {
            const double v = m.cov[static_cast<size_t>(a) * f.d + b] * inv;
            m.cov[static_cast<size_t>(a) * f.d + b] = v;
            m.cov[static_cast<size_t>(b) * f.d + a] = v;
        }
    return m;
}

void sym_eig(std::span<const double> A, int n, std::vector<double>& eigenvalues,
             std::vector<double>& V) {
    std::vector<double> a(A.begin(), A.end());
    V.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) V[static_cast<size_t>(i) * n + i] = 1.0;

    auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * n + c]; };
    auto off_diag = [&] {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
        return off;
    };
    double norm_sq = 0.0;
    for (double x : a) norm_sq += x * x;
    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (off_diag() < 1e-26 * std::max(1.0, norm_sq)) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vpk = V[static_cast<size_t>(p) * n + k];
                    const double vqk = V[static_cast<size_t>(q) * n + k];
                    V[static_cast<size_t>(p) * n + k] = c * vpk - s * vqk;
                    V[static_cast<size_t>(q) * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }

    if (off_diag() > 1e-18 * std::max(1.0, norm_sq))
        throw std::runtime_error("sym_eig: rotation sweep did not converge");

    eigenvalues.resize(n);
    for (int i = 0; i < n; ++i) eigenvalues[i] = at(i, i);
    // sort ascending, carrying eigenvector rows along
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return eigenvalues[x] < eigenvalues[y]; });
    std::vector<double> ev_sorted(n);
    std::vector<double> V_sorted(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        ev_sorted[i] = eigenvalues[order[i]];
        std::copy_n(V.begin() + static_cast<size_t>(order[i]) * n, n,
                    V_sorted.begin() + static_cast<size_t>(i) * n);
    }
    eigenvalues = std::move(ev_sorted);
    V = std::move(V_sorted);
}

namespace {

// B = V^T diag(f(eig)) V for symmetric input decomposed by sym_eig
std::vector<double> sym_function(std::span<const double> A, int n, double (*f)(double)) {
    std::vector<double> eig, V;
    sym_eig(A, n, eig, V);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        const double fk = f(eig[k] < 1e-10 ? 0.0 : eig[k]);
        if (fk == 0.0) continue;
        const double* vk = V.data() + static_cast<size_t>(k) * n;
        for (int i = 0; i < n; ++i) {
            const double w = fk * vk[i];
            for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += w * vk[j];
        }
    }
    return out;
}

std::vector<double> mat_mul(std::span<const double> A, std::span<const double> B, int n) {
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double aik = A[static_cast<size_t>(i) * n + k];
            if (aik == 0.0) continue;
            for (int j = 0; j < n; ++j)
                out[static_cast<size_t>(i) * n + j] += aik * B[static_cast<size_t>(k) * n + j];
        }
    return out;
}

}  // namespace

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
    if (a.dim != b.dim) throw std::invalid_argument("frechet_distance: dimension mismatch");
    const int n = a.dim;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (std::abs(a.cov[static_cast<size_t>(i) * n + j] -
                         a.cov[static_cast<size_t>(j) * n + i]) > 1e-9 ||
                std::abs(b.cov[static_cast<size_t>(i) * n + j] -
                         b.cov[static_cast<size_t>(j) * n + i]) > 1e-9)
                throw std::invalid_argument("frechet_distance: covariance not symmetric");
        }

    double mean_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = a.mean[i] - b.mean[i];
        mean_sq += d * d;
    }

    std::vector<double> sqrt_a = sym_function(a.cov, n, [](double x) { return std::sqrt(x); });
    std::vector<double> inner = mat_mul(sqrt_a, b.cov, n);
    inner = mat_mul(inner, sqrt_a, n);
    // symmetrize against accumulation error before the second decomposition
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (inner[static_cast<size_t>(i) * n + j] +
                                    inner[static_cast<size_t>(j) * n + i]);
            inner[static_cast<size_t>(i) * n + j] = v;
            inner[static_cast<size_t>(j) * n + i] = v;
        }
    std::vector<double> eig, V;
    sym_eig(inner, n, eig, V);
    double tr_sqrt = 0.0;
    for (double e : eig) tr_sqrt += std::sqrt(e < 1e-10 ? 0.0 : e);

    double tr = 0.0;
    for (int i = 0; i < n; ++i)
        tr += a.cov[static_cast<size_t>(i) * n + i] + b.cov[static_cast<size_t>(i) * n + i];

    const double d2 = mean_sq + tr - 2.0 * tr_sqrt;
    if (d2 < -1e-6) throw std::runtime_error("frechet_distance: strongly negative value");
    return d2 < 0.0 ? 0.0 : d2;
}

MiouResult miou(std::span<const LabelGrid> pred, std::span<const LabelGrid> gt, int classes) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("miou: prediction/ground-truth count mismatch");
    std::vector<long> inter(classes, 0), pred_n(classes, 0), gt_n(classes, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!pred[i].same_shape(gt[i])) throw std::invalid_argument("miou: shape mismatch");
        for (size_t k = 0; k < pred[i].v.size(); ++k) {
            const int p = pred[i].v[k], g = gt[i].v[k];
            if (p < 0 || p >= classes || g < 0 || g >= classes)
                throw std::invalid_argument("miou: class id out of range");
            ++pred_n[p];
            ++gt_n[g];
            if (p == g) ++inter[p];
        }
    }
    MiouResult r;
    r.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < classes; ++c) {
        const long uni = pred_n[c] + gt_n[c] - inter[c];
        if (uni == 0) continue;  // absent from both sets: excluded from the mean
        r.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni);
        sum += r.per_class[c];
        ++counted;
    }
    r.miou = counted == 0 ? 0.0 : sum / counted;
    return r;
}

double synthetic_only_eval(const Denoiser& d, const NoiseSchedule& s, const Dataset& train,
                           const Dataset& val, const SegTrainConfig& seg_cfg, double lambda,
                           double w, int steps, double eta, uint64_t seed) {
    SyntheticBank bank =
        synthesize_bank(d, s, train, {lambda}, w, steps, eta, derive_seed(seed, kTagSynOnly, 1));
    SegmentorConfig sc;
    sc.height = train.world.height;
    sc.width = train.world.width;
    sc.classes = train.world.classes;
    Segmentor seg = init_segmentor(sc, derive_seed(seed, kTagSynOnly, 2));
    train_segmentor(seg, train, &bank, AugmentationScheme::synthetic_only(lambda), seg_cfg,
                    derive_seed(seed, kTagSynOnly, 3));
    return evaluate_miou(seg, val);
}

}  // namespace scribblediff
