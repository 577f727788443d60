#include "scribblediff/segmentor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "scribblediff/metrics.hpp"
#include "scribblediff/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scribblediff {

namespace {
const uint64_t kTagInit = fnv1a64("segmentor.init");
const uint64_t kTagOrder = fnv1a64("segmentor.order");
const uint64_t kTagCompose = fnv1a64("segmentor.compose");

constexpr int kDilations[5] = {1, 1, 2, 4, 2};
}  // namespace

void SegmentorConfig::validate() const {
    if (height < 8 || width < 8) throw std::invalid_argument("SegmentorConfig: grid too small");
    if (in_channels < 1 || classes < 2 || width_channels < 1)
        throw std::invalid_argument("SegmentorConfig: bad channel counts");
}

template <class T>
SegmentorNetT<T> SegmentorNetT<T>::layout(const SegmentorConfig& cfg) {
    cfg.validate();
    SegmentorNetT net;
    net.cfg = cfg;
    auto& p = net.params;
    for (int l = 0; l < 5; ++l) {
        const int cin = l == 0 ? cfg.in_channels : cfg.width_channels;
        net.conv_w.push_back(
            p.add("conv" + std::to_string(l) + ".w", {cfg.width_channels, cin, 3, 3}));
        net.conv_b.push_back(p.add("conv" + std::to_string(l) + ".b", {cfg.width_channels}));
    }
    net.head_w = p.add("head.w", {cfg.classes, cfg.width_channels});
    net.head_b = p.add("head.b", {cfg.classes});
    return net;
}

template <class T>
SegmentorNetT<T> SegmentorNetT<T>::init(const SegmentorConfig& cfg, uint64_t seed) {
    SegmentorNetT net = layout(cfg);
    Rng rng(derive_seed(seed, kTagInit));
    for (int l = 0; l < 5; ++l) {
        const int cin = l == 0 ? cfg.in_channels : cfg.width_channels;
        nn::fill_kaiming<T>(net.params.at(net.conv_w[l]), cin * 9, 2.0, rng);
    }
    nn::fill_kaiming<T>(net.params.at(net.head_w), cfg.width_channels, 1.0, rng);
    return net;
}

template <class T>
TGrid<T> SegmentorNetT<T>::forward(const TGrid<T>& image, Tape* tape) const {
    if (image.c != cfg.in_channels || image.h != cfg.height || image.w != cfg.width)
        throw std::invalid_argument("segmentor: image shape mismatch");
    Tape local;
    Tape& tp = tape ? *tape : local;
    tp.pre.resize(5);
    tp.act.resize(6);
    tp.act[0] = image;
    for (int l = 0; l < 5; ++l) {
        nn::conv3x3_fwd<T>(tp.act[l], params.at(conv_w[l]), params.at(conv_b[l]),
                           cfg.width_channels, 1, kDilations[l], tp.pre[l]);
        tp.act[l + 1] = nn::silu_fwd(tp.pre[l]);
    }
    TGrid<T> logits;
    nn::conv1x1_fwd<T>(tp.act[5], params.at(head_w), params.at(head_b), cfg.classes, logits);
    return logits;
}

template <class T>
void SegmentorNetT<T>::backward(const Tape& tp, const TGrid<T>& glogits,
                                nn::ParamStore<T>& grads) const {
    TGrid<T> g(cfg.width_channels, cfg.height, cfg.width);
    nn::conv1x1_bwd<T>(tp.act[5], params.at(head_w), glogits, &g, grads.at(head_w),
                       grads.at(head_b));
    for (int l = 4; l >= 0; --l) {
        TGrid<T> g_pre = nn::silu_bwd(tp.pre[l], g);
        if (l > 0) {
            TGrid<T> g_in(tp.act[l].c, tp.act[l].h, tp.act[l].w);
            nn::conv3x3_bwd<T>(tp.act[l], params.at(conv_w[l]), g_pre, 1, kDilations[l], &g_in,
                               grads.at(conv_w[l]), grads.at(conv_b[l]));
            g = std::move(g_in);
        } else {
            nn::conv3x3_bwd<T>(tp.act[l], params.at(conv_w[l]), g_pre, 1, kDilations[l], nullptr,
                               grads.at(conv_w[l]), grads.at(conv_b[l]));
        }
    }
}

Segmentor init_segmentor(const SegmentorConfig& cfg, uint64_t seed) {
    return Segmentor::init(cfg, seed);
}

Grid seg_predict(const Segmentor& seg, const Grid& image) {
    return seg.forward(image, nullptr);
}

LabelGrid argmax_classes(const Grid& logits) {
    LabelGrid out(logits.h, logits.w, 0);
    for (int y = 0; y < logits.h; ++y)
        for (int x = 0; x < logits.w; ++x) {
            int best = 0;
            float best_v = logits.at(0, y, x);
            for (int c = 1; c < logits.c; ++c) {
                const float v = logits.at(c, y, x);
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            out.at(y, x) = static_cast<int16_t>(best);
        }
    return out;
}

template <class T>
double partial_ce_loss_grad(const TGrid<T>& logits, const LabelGrid& labels, TGrid<T>& glogits) {
    if (logits.h != labels.h || logits.w != labels.w)
        throw std::invalid_argument("partial_ce_loss: shape mismatch");
    glogits = TGrid<T>(logits.c, logits.h, logits.w, T(0));
    const int C = logits.c;
    long n_labeled = 0;
    for (int16_t m : labels.v)
        if (m >= 0) ++n_labeled;
    if (n_labeled == 0) throw std::invalid_argument("partial_ce_loss: no labeled pixels");

    double loss = 0.0;
    std::vector<double> prob(C);
    for (int y = 0; y < logits.h; ++y) {
        for (int x = 0; x < logits.w; ++x) {
            const int16_t m = labels.at(y, x);
            if (m < 0) continue;
            if (m >= C) throw std::invalid_argument("partial_ce_loss: label id out of range");
            double mx = -1e300;
            for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.at(c, y, x)));
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                prob[c] = std::exp(static_cast<double>(logits.at(c, y, x)) - mx);
                z += prob[c];
            }
            loss += -(std::log(prob[m] / z));
            for (int c = 0; c < C; ++c) {
                const double p = prob[c] / z;
                glogits.at(c, y, x) =
                    static_cast<T>((p - (c == m ? 1.0 : 0.0)) / static_cast<double>(n_labeled));
            }
        }
    }
    return loss / static_cast<double>(n_labeled);
}

double partial_ce_loss(const Grid& logits, const ScribbleMap& sm) {
    Grid scratch;
    return partial_ce_loss_grad<float>(logits, sm.labels, scratch);
}

template <class T>
double pairwise_smoothness_grad(const TGrid<T>& logits, const TGrid<T>& image, double weight,
                                TGrid<T>& glogits_accum) {
    if (weight <= 0.0) return 0.0;
    const int C = logits.c, H = logits.h, W = logits.w;
    const double inv_sigma2 = 1.0 / (2.0 * 0.2 * 0.2);

    // softmax probabilities per pixel
    std::vector<double> prob(static_cast<size_t>(C) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double mx = -1e300;
            for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.at(c, y, x)));
            double z = 0.0;
            for (int c = 0; c < C; ++c) {
                const double e = std::exp(static_cast<double>(logits.at(c, y, x)) - mx);
                prob[(static_cast<size_t>(c) * H + y) * W + x] = e;
                z += e;
            }
            for (int c = 0; c < C; ++c) prob[(static_cast<size_t>(c) * H + y) * W + x] /= z;
        }
    auto p_at = [&](int c, int y, int x) { return prob[(static_cast<size_t>(c) * H + y) * W + x]; };

    const long n_pairs = static_cast<long>(H) * (W - 1) + static_cast<long>(H - 1) * W;
    std::vector<double> dLdP(static_cast<size_t>(C) * H * W, 0.0);
    double loss = 0.0;
    auto handle_pair = [&](int y0, int x0, int y1, int x1) {
        double d2 = 0.0;
        for (int c = 0; c < image.c; ++c) {
            const double d = image.at(c, y0, x0) - image.at(c, y1, x1);
            d2 += d * d;
        }
        const double wij = std::exp(-d2 * inv_sigma2);
        for (int c = 0; c < C; ++c) {
            const double diff = p_at(c, y0, x0) - p_at(c, y1, x1);
            loss += wij * diff * diff;
            const double g = 2.0 * wij * diff / static_cast<double>(n_pairs);
            dLdP[(static_cast<size_t>(c) * H + y0) * W + x0] += g;
            dLdP[(static_cast<size_t>(c) * H + y1) * W + x1] -= g;
        }
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x + 1 < W; ++x) handle_pair(y, x, y, x + 1);
    for (int y = 0; y + 1 < H; ++y)
        for (int x = 0; x < W; ++x) handle_pair(y, x, y + 1, x);

    // chain through the softmax: dL/dz_k = P_k (dL/dP_k - sum_c dL/dP_c P_c)
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double dot = 0.0;
            for (int c = 0; c < C; ++c)
                dot += dLdP[(static_cast<size_t>(c) * H + y) * W + x] * p_at(c, y, x);
            for (int c = 0; c < C; ++c) {
                const double pk = p_at(c, y, x);
                const double g = pk * (dLdP[(static_cast<size_t>(c) * H + y) * W + x] - dot);
                glogits_accum.at(c, y, x) += static_cast<T>(weight * g);
            }
        }
    return weight * loss / static_cast<double>(n_pairs);
}

SegTrainHistory train_segmentor(Segmentor& seg, const Dataset& ds, const SyntheticBank* bank,
                                const AugmentationScheme& scheme, const SegTrainConfig& tc,
                                uint64_t seed, const Dataset* val) {
    if (tc.epochs < 0) throw std::invalid_argument("train_segmentor: negative epochs");
    SegTrainHistory history;
    if (tc.epochs == 0) return history;
    if (tc.batch_size < 1) throw std::invalid_argument("train_segmentor: batch_size must be >= 1");
    scheme.validate();
    if (scheme.kind == SchemeKind::Adaptive &&
        static_cast<int>(scheme.schedule.size()) < tc.epochs)
        throw std::invalid_argument("train_segmentor: adaptive schedule shorter than epochs");

    const uint64_t compose_key = derive_seed(seed, kTagCompose);
    std::vector<float> velocity(seg.params.data.size(), 0.0f);

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<EpochItem> items = compose_epoch(ds, bank, scheme, epoch, compose_key);
        const int m = static_cast<int>(items.size());

        std::vector<int> perm(m);
        std::iota(perm.begin(), perm.end(), 0);
        Rng order_rng(derive_seed(seed, kTagOrder, static_cast<uint64_t>(epoch)));
        for (int i = m - 1; i > 0; --i) std::swap(perm[i], perm[order_rng.uniform_int(0, i)]);

        const double lr =
            tc.lr0 * std::pow(1.0 - static_cast<double>(epoch - 1) / tc.epochs, tc.lr_power);
        const int steps = (m + tc.batch_size - 1) / tc.batch_size;
        double acc = 0.0;
        for (int b = 0; b < steps; ++b) {
            const int lo = b * tc.batch_size;
            const int hi = std::min(m, lo + tc.batch_size);
            const int B = hi - lo;
            std::vector<nn::ParamStore<float>> slot_grads(B);
            std::vector<double> slot_loss(B, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_jobs())
#endif
            for (int i = 0; i < B; ++i) {
                const EpochItem& it = items[perm[lo + i]];
                Segmentor::Tape tape;
                Grid logits = seg.forward(*it.image, &tape);
                Grid glogits;
                double loss = partial_ce_loss_grad<float>(
                    logits, ds.items[it.label_id].scribbles.labels, glogits);
                if (tc.pairwise_weight > 0.0)
                    loss += pairwise_smoothness_grad<float>(logits, *it.image, tc.pairwise_weight,
                                                            glogits);
                slot_grads[i] = seg.params.zeros_like();
                seg.backward(tape, glogits, slot_grads[i]);
                slot_loss[i] = loss;
            }
            const size_t P = seg.params.data.size();
            std::vector<float> g(P, 0.0f);
            for (int i = 0; i < B; ++i)
                for (size_t k = 0; k < P; ++k) g[k] += slot_grads[i].data[k];
            const float inv_b = 1.0f / static_cast<float>(B);
            const auto mom = static_cast<float>(tc.momentum);
            const auto step = static_cast<float>(lr);
            for (size_t k = 0; k < P; ++k) {
                velocity[k] = mom * velocity[k] + g[k] * inv_b;
                seg.params.data[k] -= step * velocity[k];
            }
            double batch_loss = 0.0;
            for (int i = 0; i < B; ++i) batch_loss += slot_loss[i];
            acc += batch_loss / B;
        }
        const double epoch_loss = acc / steps;
        if (!std::isfinite(epoch_loss) || !seg.params.all_finite()) {
            std::ostringstream msg;
            msg << "train_segmentor: non-finite state at epoch " << epoch
                << " (loss=" << epoch_loss << ")";
            throw std::runtime_error(msg.str());
        }
        history.epoch_loss.push_back(epoch_loss);
        if (val) history.val_miou.push_back(evaluate_miou(seg, *val));
    }
    return history;
}

double evaluate_miou(const Segmentor& seg, const Dataset& ds) {
    const int n = static_cast<int>(ds.items.size());
    if (n == 0) throw std::invalid_argument("evaluate_miou: empty dataset");
    std::vector<LabelGrid> pred(n), gt(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_jobs())
#endif
    for (int i = 0; i < n; ++i) {
        pred[i] = argmax_classes(seg.forward(ds.items[i].scene.image, nullptr));
        gt[i] = ds.items[i].scene.full_mask;
    }
    return miou(pred, gt, ds.world.classes).miou;
}

template struct SegmentorNetT<float>;
template struct SegmentorNetT<double>;
template double partial_ce_loss_grad<float>(const TGrid<float>&, const LabelGrid&, TGrid<float>&);
template double partial_ce_loss_grad<double>(const TGrid<double>&, const LabelGrid&,
                                             TGrid<double>&);
template double pairwise_smoothness_grad<float>(const TGrid<float>&, const TGrid<float>&, double,
                                                TGrid<float>&);
template double pairwise_smoothness_grad<double>(const TGrid<double>&, const TGrid<double>&,
                                                 double, TGrid<double>&);

}  // namespace scribblediff
