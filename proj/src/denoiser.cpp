#include "scribblediff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "scribblediff/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scribblediff {

namespace {

const uint64_t kTagSlot = fnv1a64("denoiser.slot");
const uint64_t kTagOrder = fnv1a64("denoiser.order");
const uint64_t kTagStep = fnv1a64("denoiser.step");
const uint64_t kTagInit = fnv1a64("denoiser.init");

template <class T>
std::vector<T> silu_vec(const std::vector<T>& x) {
    std::vector<T> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
    return out;
}

template <class T>
std::vector<T> silu_vec_bwd(const std::vector<T>& x_pre, const std::vector<T>& g) {
    std::vector<T> out(x_pre.size());
    for (size_t i = 0; i < x_pre.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x_pre[i]));
        out[i] = g[i] * s * (T(1) + x_pre[i] * (T(1) - s));
    }
    return out;
}

template <class T>
std::vector<T> channel_sums(const TGrid<T>& g) {
    std::vector<T> out(g.c);
    const size_t hw = static_cast<size_t>(g.h) * g.w;
    for (int c = 0; c < g.c; ++c) {
        const T* p = g.plane(c);
        T acc = T(0);
        for (size_t i = 0; i < hw; ++i) acc += p[i];
        out[c] = acc;
    }
    return out;
}

}  // namespace

void DenoiserConfig::validate() const {
    if (height < 4 || width < 4) throw std::invalid_argument("DenoiserConfig: grid too small");
    if (image_channels < 1 || cond_channels < 1)
        throw std::invalid_argument("DenoiserConfig: channel counts must be positive");
    if (classes < 1) throw std::invalid_argument("DenoiserConfig: classes must be positive");
    if (base_width < 1) throw std::invalid_argument("DenoiserConfig: base_width must be positive");
    if (temb_dim < 2 || temb_dim % 2 != 0)
        throw std::invalid_argument("DenoiserConfig: temb_dim must be a positive even number");
    if (levels < 1) throw std::invalid_argument("DenoiserConfig: levels must be positive");
    if (max_timestep < 1) throw std::invalid_argument("DenoiserConfig: max_timestep must be positive");
    const int factor = 1 << (levels - 1);
    if (height % factor != 0 || width % factor != 0)
        throw std::invalid_argument("DenoiserConfig: height/width must be divisible by 2^(levels-1)");
}

template <class T>
DenoiserNetT<T> DenoiserNetT<T>::layout(const DenoiserConfig& cfg) {
    cfg.validate();
    DenoiserNetT net;
    net.cfg = cfg;
    auto& p = net.params;
    const int E = cfg.temb_dim;
    const int cin = cfg.image_channels + cfg.cond_channels;
    const int L = cfg.levels;

    net.temb_w = p.add("temb.w", {E, E});
    net.temb_b = p.add("temb.b", {E});
    net.cls_w = p.add("cls.w", {E, cfg.classes});
    net.cls_b = p.add("cls.b", {E});
    net.null_emb = p.add("null_emb", {cfg.cond_channels, cfg.height, cfg.width});
    net.conv_in_w = p.add("conv_in.w", {cfg.base_width, cin, 3, 3});
    net.conv_in_b = p.add("conv_in.b", {cfg.base_width});

    auto add_block = [&](const std::string& prefix, int ch) {
        BlockIdx b;
        b.c1w = p.add(prefix + ".conv1.w", {ch, ch, 3, 3});
        b.c1b = p.add(prefix + ".conv1.b", {ch});
        b.ew = p.add(prefix + ".emb.w", {ch, E});
        b.eb = p.add(prefix + ".emb.b", {ch});
        b.c2w = p.add(prefix + ".conv2.w", {ch, ch, 3, 3});
        b.c2b = p.add(prefix + ".conv2.b", {ch});
        return b;
    };

    for (int l = 0; l < L - 1; ++l) {
        net.enc.push_back(add_block("enc" + std::to_string(l), cfg.level_width(l)));
        net.down_w.push_back(p.add("down" + std::to_string(l) + ".w",
                                   {cfg.level_width(l + 1), cfg.level_width(l), 3, 3}));
        net.down_b.push_back(p.add("down" + std::to_string(l) + ".b", {cfg.level_width(l + 1)}));
    }
    net.mid = add_block("mid", cfg.level_width(L - 1));
    for (int l = L - 2; l >= 0; --l) {
        net.up_w.push_back(p.add("up" + std::to_string(l) + ".w",
                                 {cfg.level_width(l), cfg.level_width(l + 1), 3, 3}));
        net.up_b.push_back(p.add("up" + std::to_string(l) + ".b", {cfg.level_width(l)}));
        net.dec.push_back(add_block("dec" + std::to_string(l), cfg.level_width(l)));
    }
    net.conv_out_w = p.add("conv_out.w", {cfg.image_channels, cfg.base_width, 3, 3});
    net.conv_out_b = p.add("conv_out.b", {cfg.image_channels});
    return net;
}

template <class T>
DenoiserNetT<T> DenoiserNetT<T>::init(const DenoiserConfig& cfg, uint64_t seed) {
    DenoiserNetT net = layout(cfg);
    Rng rng(derive_seed(seed, kTagInit));
    auto& p = net.params;
    const int E = cfg.temb_dim;
    const int cin = cfg.image_channels + cfg.cond_channels;

    nn::fill_kaiming<T>(p.at(net.temb_w), E, 1.0, rng);
    nn::fill_kaiming<T>(p.at(net.cls_w), cfg.classes, 1.0, rng);
    for (T& x : p.at(net.null_emb)) x = static_cast<T>(rng.normal() * 0.1);
    nn::fill_kaiming<T>(p.at(net.conv_in_w), cin * 9, 2.0, rng);

    auto fill_block = [&](const BlockIdx& b, int ch) {
        nn::fill_kaiming<T>(p.at(b.c1w), ch * 9, 2.0, rng);
        nn::fill_kaiming<T>(p.at(b.ew), E, 1.0, rng);
        nn::fill_kaiming<T>(p.at(b.c2w), ch * 9, 2.0, rng);
    };
    for (int l = 0; l < cfg.levels - 1; ++l) {
        fill_block(net.enc[l], cfg.level_width(l));
        nn::fill_kaiming<T>(p.at(net.down_w[l]), cfg.level_width(l) * 9, 2.0, rng);
    }
    fill_block(net.mid, cfg.level_width(cfg.levels - 1));
    for (size_t j = 0; j < net.up_w.size(); ++j) {
        const int l = cfg.levels - 2 - static_cast<int>(j);
        nn::fill_kaiming<T>(p.at(net.up_w[j]), cfg.level_width(l + 1) * 9, 2.0, rng);
        fill_block(net.dec[j], cfg.level_width(l));
    }
    // conv_out stays zero: untrained prediction is exactly zero noise
    return net;
}

template <class T>
TGrid<T> DenoiserNetT<T>::forward(const TGrid<T>& x_t, int t, const TGrid<T>* scribble,
                                  std::span<const T> class_set, Tape* tape) const {
    if (t < 1 || t > cfg.max_timestep)
        throw std::invalid_argument("predict_noise: t out of [1,T]");
    if (x_t.c != cfg.image_channels || x_t.h != cfg.height || x_t.w != cfg.width)
        throw std::invalid_argument("predict_noise: image shape mismatch");
    if (scribble && (scribble->c != cfg.cond_channels || scribble->h != cfg.height ||
                     scribble->w != cfg.width))
        throw std::invalid_argument("predict_noise: condition shape mismatch");
    if (!class_set.empty() && static_cast<int>(class_set.size()) != cfg.classes)
        throw std::invalid_argument("predict_noise: class_set size mismatch");
    for (const T& v : class_set)
        if (v != T(0) && v != T(1))
            throw std::invalid_argument("predict_noise: class_set entries must be 0 or 1");

    const int E = cfg.temb_dim;
    const int L = cfg.levels;
    const auto& p = params;

    Tape local;
    Tape& tp = tape ? *tape : local;
    tp.used_null_scribble = (scribble == nullptr);
    tp.class_set.assign(cfg.classes, T(0));
    if (!class_set.empty()) tp.class_set.assign(class_set.begin(), class_set.end());

    // timestep embedding + class projection
    tp.emb0.assign(E, T(0));
    nn::sinusoidal_embed<T>(t, E, tp.emb0);
    tp.mlp_pre.assign(E, T(0));
    nn::linear_fwd<T>(tp.emb0, p.at(temb_w), p.at(temb_b), E, E, tp.mlp_pre);
    tp.temb = silu_vec(tp.mlp_pre);
    {
        std::vector<T> clsproj(E, T(0));
        nn::linear_fwd<T>(tp.class_set, p.at(cls_w), p.at(cls_b), cfg.classes, E, clsproj);
        for (int i = 0; i < E; ++i) tp.temb[i] += clsproj[i];
    }

    // input: image channels + condition channels
    tp.cat_in = TGrid<T>(cfg.image_channels + cfg.cond_channels, cfg.height, cfg.width);
    std::copy(x_t.v.begin(), x_t.v.end(), tp.cat_in.v.begin());
    {
        std::span<const T> cond_src =
            scribble ? std::span<const T>(scribble->v) : p.at(null_emb);
        std::copy(cond_src.begin(), cond_src.end(),
                  tp.cat_in.v.begin() + static_cast<size_t>(cfg.image_channels) * cfg.height * cfg.width);
    }

    auto block_fwd = [&](const TGrid<T>& x, const BlockIdx& b, BlockTape& bt) {
        bt.x = x;
        nn::conv3x3_fwd<T>(x, p.at(b.c1w), p.at(b.c1b), x.c, 1, 1, bt.pre1);
        std::vector<T> proj(x.c, T(0));
        nn::linear_fwd<T>(tp.temb, p.at(b.ew), p.at(b.eb), E, x.c, proj);
        nn::add_channel_bias<T>(bt.pre1, proj);
        bt.a1 = nn::silu_fwd(bt.pre1);
        nn::conv3x3_fwd<T>(bt.a1, p.at(b.c2w), p.at(b.c2b), x.c, 1, 1, bt.pre2);
        bt.out = nn::silu_fwd(bt.pre2);
    };

    nn::conv3x3_fwd<T>(tp.cat_in, p.at(conv_in_w), p.at(conv_in_b), cfg.base_width, 1, 1, tp.pre_in);
    tp.h_in = nn::silu_fwd(tp.pre_in);

    tp.enc.resize(L - 1);
    tp.down_pre.resize(L - 1);
    tp.down_out.resize(L - 1);
    const TGrid<T>* h = &tp.h_in;
    for (int l = 0; l < L - 1; ++l) {
        block_fwd(*h, enc[l], tp.enc[l]);
        nn::conv3x3_fwd<T>(tp.enc[l].out, p.at(down_w[l]), p.at(down_b[l]), cfg.level_width(l + 1),
                           2, 1, tp.down_pre[l]);
        tp.down_out[l] = nn::silu_fwd(tp.down_pre[l]);
        h = &tp.down_out[l];
    }

    block_fwd(*h, mid, tp.mid);
    h = &tp.mid.out;

    const int n_dec = L - 1;
    tp.up_in.resize(n_dec);
    tp.up_pre.resize(n_dec);
    tp.up_out.resize(n_dec);
    tp.skip_sum.resize(n_dec);
    tp.dec.resize(n_dec);
    for (int j = 0; j < n_dec; ++j) {
        const int l = L - 2 - j;
        tp.up_in[j] = nn::upsample2_fwd(*h);
        nn::conv3x3_fwd<T>(tp.up_in[j], p.at(up_w[j]), p.at(up_b[j]), cfg.level_width(l), 1, 1,
                           tp.up_pre[j]);
        tp.up_out[j] = nn::silu_fwd(tp.up_pre[j]);
        tp.skip_sum[j] = tp.up_out[j];
        for (size_t i = 0; i < tp.skip_sum[j].v.size(); ++i)
            tp.skip_sum[j].v[i] += tp.enc[l].out.v[i];
        block_fwd(tp.skip_sum[j], dec[j], tp.dec[j]);
        h = &tp.dec[j].out;
    }

    TGrid<T> out;
    nn::conv3x3_fwd<T>(*h, p.at(conv_out_w), p.at(conv_out_b), cfg.image_channels, 1, 1, out);
    return out;
}

template <class T>
void DenoiserNetT<T>::backward(const Tape& tp, const TGrid<T>& gout,
                               nn::ParamStore<T>& grads) const {
    const int E = cfg.temb_dim;
    const int L = cfg.levels;
    const auto& p = params;
    std::vector<T> g_temb(E, T(0));

    auto block_bwd = [&](const BlockTape& bt, const BlockIdx& b, const TGrid<T>& g_out) {
        TGrid<T> g_pre2 = nn::silu_bwd(bt.pre2, g_out);
        TGrid<T> g_a1(bt.a1.c, bt.a1.h, bt.a1.w);
        nn::conv3x3_bwd<T>(bt.a1, p.at(b.c2w), g_pre2, 1, 1, &g_a1, grads.at(b.c2w),
                           grads.at(b.c2b));
        TGrid<T> g_pre1 = nn::silu_bwd(bt.pre1, g_a1);
        std::vector<T> g_proj = channel_sums(g_pre1);
        nn::linear_bwd<T>(tp.temb, p.at(b.ew), g_proj, E, bt.x.c, g_temb, grads.at(b.ew),
                          grads.at(b.eb));
        TGrid<T> g_x(bt.x.c, bt.x.h, bt.x.w);
        nn::conv3x3_bwd<T>(bt.x, p.at(b.c1w), g_pre1, 1, 1, &g_x, grads.at(b.c1w),
                           grads.at(b.c1b));
        return g_x;
    };

    // output head
    const TGrid<T>& final_h = (L > 1) ? tp.dec.back().out : tp.mid.out;
    TGrid<T> g_h(final_h.c, final_h.h, final_h.w);
    nn::conv3x3_bwd<T>(final_h, p.at(conv_out_w), gout, 1, 1, &g_h, grads.at(conv_out_w),
                       grads.at(conv_out_b));

    // decoder levels, reverse of forward order; stash skip gradients
    const int n_dec = L - 1;
    std::vector<TGrid<T>> g_skip(n_dec);
    for (int j = n_dec - 1; j >= 0; --j) {
        TGrid<T> g_sum = block_bwd(tp.dec[j], dec[j], g_h);
        g_skip[j] = g_sum;  // flows into enc[L-2-j].out
        TGrid<T> g_up_pre = nn::silu_bwd(tp.up_pre[j], g_sum);
        TGrid<T> g_ups(tp.up_in[j].c, tp.up_in[j].h, tp.up_in[j].w);
        nn::conv3x3_bwd<T>(tp.up_in[j], p.at(up_w[j]), g_up_pre, 1, 1, &g_ups, grads.at(up_w[j]),
                           grads.at(up_b[j]));
        g_h = nn::upsample2_bwd(g_ups);
    }

    g_h = block_bwd(tp.mid, mid, g_h);

    for (int l = L - 2; l >= 0; --l) {
        TGrid<T> g_down_pre = nn::silu_bwd(tp.down_pre[l], g_h);
        TGrid<T> g_enc_out(tp.enc[l].out.c, tp.enc[l].out.h, tp.enc[l].out.w);
        nn::conv3x3_bwd<T>(tp.enc[l].out, p.at(down_w[l]), g_down_pre, 2, 1, &g_enc_out,
                           grads.at(down_w[l]), grads.at(down_b[l]));
        const int j = L - 2 - l;
        for (size_t i = 0; i < g_enc_out.v.size(); ++i) g_enc_out.v[i] += g_skip[j].v[i];
        g_h = block_bwd(tp.enc[l], enc[l], g_enc_out);
    }

    TGrid<T> g_pre_in = nn::silu_bwd(tp.pre_in, g_h);
    if (tp.used_null_scribble) {
        TGrid<T> g_cat(tp.cat_in.c, tp.cat_in.h, tp.cat_in.w);
        nn::conv3x3_bwd<T>(tp.cat_in, p.at(conv_in_w), g_pre_in, 1, 1, &g_cat,
                           grads.at(conv_in_w), grads.at(conv_in_b));
        auto g_null = grads.at(null_emb);
        const size_t off = static_cast<size_t>(cfg.image_channels) * cfg.height * cfg.width;
        for (size_t i = 0; i < g_null.size(); ++i) g_null[i] += g_cat.v[off + i];
    } else {
        nn::conv3x3_bwd<T>(tp.cat_in, p.at(conv_in_w), g_pre_in, 1, 1, nullptr,
                           grads.at(conv_in_w), grads.at(conv_in_b));
    }

    // timestep-embedding head: temb = silu(mlp_pre) + (cls_w * class_set + cls_b)
    std::vector<T> g_mlp_pre = silu_vec_bwd(tp.mlp_pre, g_temb);
    nn::linear_bwd<T>(tp.emb0, p.at(temb_w), g_mlp_pre, E, E, {}, grads.at(temb_w),
                      grads.at(temb_b));
    nn::linear_bwd<T>(tp.class_set, p.at(cls_w), g_temb, cfg.classes, E, {}, grads.at(cls_w),
                      grads.at(cls_b));
}

Denoiser init_denoiser(const DenoiserConfig& cfg, uint64_t seed) {
    return Denoiser::init(cfg, seed);
}

Grid predict_noise(const Denoiser& d, const Grid& x_t, int t, const Condition& cond,
                   CondPath path) {
    switch (path) {
        case CondPath::Full:
            return d.forward(x_t, t, &cond.scribble, cond.class_set, nullptr);
        case CondPath::NullScribble:
            return d.forward(x_t, t, nullptr, cond.class_set, nullptr);
        case CondPath::NullAll:
            return d.forward(x_t, t, nullptr, {}, nullptr);
    }
    throw std::logic_error("predict_noise: bad path");
}

Grid predict_noise(const Denoiser& d, const Grid& x_t, int t, std::nullptr_t) {
    return d.forward(x_t, t, nullptr, {}, nullptr);
}

template <class T>
double denoiser_loss_and_grad(const DenoiserNetT<T>& net, const TGrid<T>& x_t, int t,
                              const TGrid<T>* scribble, std::span<const T> class_set,
                              const TGrid<T>& target_eps, nn::ParamStore<T>& grads) {
    typename DenoiserNetT<T>::Tape tape;
    TGrid<T> pred = net.forward(x_t, t, scribble, class_set, &tape);
    if (!pred.same_shape(target_eps))
        throw std::invalid_argument("denoiser_loss_and_grad: target shape mismatch");
    const double inv_dim = 1.0 / static_cast<double>(pred.v.size());
    double loss = 0.0;
    TGrid<T> gout(pred.c, pred.h, pred.w);
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double r = static_cast<double>(pred.v[i]) - static_cast<double>(target_eps.v[i]);
        loss += r * r;
        gout.v[i] = static_cast<T>(2.0 * r * inv_dim);
    }
    net.backward(tape, gout, grads);
    return loss * inv_dim;
}

double denoiser_train_step(Denoiser& d, SgdState& opt, std::span<const TrainExample> batch,
                           const NoiseSchedule& s, double dropout_rate, bool drop_class_set,
                           double lr, double momentum, uint64_t step_key, TrainStepStats* stats,
                           Optimizer optimizer) {
    if (batch.empty()) throw std::invalid_argument("denoiser_train_step: empty batch");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw std::invalid_argument("denoiser_train_step: dropout_rate must be in [0,1)");
    if (s.T != d.cfg.max_timestep)
        throw std::invalid_argument("denoiser_train_step: schedule T differs from model T");

    const int B = static_cast<int>(batch.size());
    std::vector<nn::ParamStore<float>> slot_grads(B);
    std::vector<double> slot_loss(B, 0.0);
    std::vector<uint8_t> slot_drop(B, 0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_jobs())
#endif
    for (int i = 0; i < B; ++i) {
        Rng rng(derive_seed(step_key, kTagSlot, static_cast<uint64_t>(i)));
        const TrainExample& ex = batch[i];
        const int t = static_cast<int>(rng.uniform_int(1, s.T));
        Grid eps = normal_grid(ex.image->c, ex.image->h, ex.image->w, rng);
        const bool drop = rng.uniform() < dropout_rate;
        Grid x_t = forward_diffuse(s, *ex.image, t, eps);
        const Grid* scrib = drop ? nullptr : &ex.cond->scribble;
        std::span<const float> cls =
            (drop && drop_class_set) ? std::span<const float>{} : std::span<const float>(ex.cond->class_set);
        slot_grads[i] = d.params.zeros_like();
        slot_loss[i] = denoiser_loss_and_grad(d, x_t, t, scrib, cls, eps, slot_grads[i]);
        slot_drop[i] = drop ? 1 : 0;
    }

    // fixed-order reduction: sum gradients in slot order
    const size_t P = d.params.data.size();
    if (opt.velocity.size() != P) opt.velocity.assign(P, 0.0f);
    std::vector<float> g(P, 0.0f);
    for (int i = 0; i < B; ++i) {
        const auto& sg = slot_grads[i].data;
        for (size_t k = 0; k < P; ++k) g[k] += sg[k];
    }
    const float inv_b = 1.0f / static_cast<float>(B);
    const auto step = static_cast<float>(lr);
    if (optimizer == Optimizer::Sgd) {
        const auto mom = static_cast<float>(momentum);
        for (size_t k = 0; k < P; ++k) {
            const float gk = g[k] * inv_b;
            opt.velocity[k] = mom * opt.velocity[k] + gk;
            d.params.data[k] -= step * opt.velocity[k];
        }
    } else {
        if (opt.second.size() != P) opt.second.assign(P, 0.0f);
        ++opt.step;
        const float b1 = 0.9f, b2 = 0.999f, eps_hat = 1e-8f;
        const auto bc1 = static_cast<float>(1.0 - std::pow(0.9, static_cast<double>(opt.step)));
        const auto bc2 = static_cast<float>(1.0 - std::pow(0.999, static_cast<double>(opt.step)));
        for (size_t k = 0; k < P; ++k) {
            const float gk = g[k] * inv_b;
            opt.velocity[k] = b1 * opt.velocity[k] + (1.0f - b1) * gk;
            opt.second[k] = b2 * opt.second[k] + (1.0f - b2) * gk * gk;
            const float m_hat = opt.velocity[k] / bc1;
            const float v_hat = opt.second[k] / bc2;
            d.params.data[k] -= step * m_hat / (std::sqrt(v_hat) + eps_hat);
        }
    }

    double loss = 0.0;
    int dropped = 0;
    for (int i = 0; i < B; ++i) {
        loss += slot_loss[i];
        dropped += slot_drop[i];
    }
    loss /= B;

    if (!std::isfinite(loss) || !d.params.all_finite()) {
        std::ostringstream msg;
        msg << "denoiser_train_step: non-finite state (loss=" << loss << ", step_key=" << step_key
            << ", lr=" << lr << ", batch=" << B << ")";
        throw std::runtime_error(msg.str());
    }
    if (stats) {
        stats->dropped += dropped;
        stats->batch += B;
    }
    return loss;
}

DenoiserTrainResult train_denoiser(Denoiser& d, std::span<const TrainExample> data,
                                   const NoiseSchedule& s, const DenoiserTrainConfig& tc,
                                   uint64_t seed) {
    if (tc.epochs < 0) throw std::invalid_argument("train_denoiser: negative epochs");
    if (tc.batch_size < 1) throw std::invalid_argument("train_denoiser: batch_size must be >= 1");
    DenoiserTrainResult result;
    if (tc.epochs == 0) return result;
    if (data.empty()) throw std::invalid_argument("train_denoiser: empty dataset");

    const int n = static_cast<int>(data.size());
    const int steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const int64_t total_steps = static_cast<int64_t>(tc.epochs) * steps_per_epoch;
    SgdState opt;
    int64_t k = 0;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        Rng order_rng(derive_seed(seed, kTagOrder, static_cast<uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i)
            std::swap(perm[i], perm[order_rng.uniform_int(0, i)]);

        double acc = 0.0;
        for (int b = 0; b < steps_per_epoch; ++b) {
            const int lo = b * tc.batch_size;
            const int hi = std::min(n, lo + tc.batch_size);
            std::vector<TrainExample> batch;
            batch.reserve(hi - lo);
            for (int i = lo; i < hi; ++i) batch.push_back(data[perm[i]]);
            const double frac =
                total_steps <= 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(total_steps - 1);
            const double lr = tc.lr0 + (tc.lr_final - tc.lr0) * frac;
            acc += denoiser_train_step(d, opt, batch, s, tc.dropout_rate, tc.drop_class_set, lr,
                                       tc.momentum,
                                       derive_seed(seed, kTagStep, static_cast<uint64_t>(epoch),
                                                   static_cast<uint64_t>(b)),
                                       nullptr, tc.optimizer);
            ++k;
        }
        result.epoch_loss.push_back(acc / steps_per_epoch);
    }
    return result;
}

template struct DenoiserNetT<float>;
template struct DenoiserNetT<double>;
template double denoiser_loss_and_grad<float>(const DenoiserNetT<float>&, const TGrid<float>&, int,
                                              const TGrid<float>*, std::span<const float>,
                                              const TGrid<float>&, nn::ParamStore<float>&);
template double denoiser_loss_and_grad<double>(const DenoiserNetT<double>&, const TGrid<double>&,
                                               int, const TGrid<double>*, std::span<const double>,
                                               const TGrid<double>&, nn::ParamStore<double>&);

}  // namespace scribblediff
