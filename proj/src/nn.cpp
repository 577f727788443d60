#include "scribblediff/nn.hpp"

#include <algorithm>
#include <cmath>

namespace scribblediff::nn {

namespace {

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// deterministic 4-lane dot product (fixed summation order, vectorizes)
template <class T>
T dot4(const T* a, const T* b, int n) {
    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    T tail = T(0);
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

template <class T>
T sum4(const T* a, int n) {
    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i];
        s1 += a[i + 1];
        s2 += a[i + 2];
        s3 += a[i + 3];
    }
    T tail = T(0);
    for (; i < n; ++i) tail += a[i];
    return ((s0 + s1) + (s2 + s3)) + tail;
}

// acc[ox] += w0*row[ox-d] + w1*row[ox] + w2*row[ox+d] over the valid ranges
template <class T>
void accum_row_taps(T* acc, const T* row, int w, int d, T w0, T w1, T w2) {
    const int lo = std::min(d, w);           // first ox with the left tap valid
    const int hi = std::max(lo - 1, w - 1 - d);  // last ox with the right tap valid
    for (int ox = 0; ox < lo; ++ox) acc[ox] += w1 * row[ox] + w2 * row[ox + d];
    for (int ox = lo; ox <= hi; ++ox)
        acc[ox] += w0 * row[ox - d] + w1 * row[ox] + w2 * row[ox + d];
    for (int ox = hi + 1; ox < w; ++ox) acc[ox] += w0 * row[ox - d] + w1 * row[ox];
}

}  // namespace

template <class T>
void conv3x3_fwd(const TGrid<T>& in, std::span<const T> W, std::span<const T> b, int c_out,
                 int stride, int dilation, TGrid<T>& out) {
    const int oh = (in.h - 1) / stride + 1;
    const int ow = (in.w - 1) / stride + 1;
    out = TGrid<T>(c_out, oh, ow);
    std::vector<T> acc(ow);

    if (stride == 1 && 2 * dilation <= in.w) {
        // row-accumulator fast path: one pass over the output per (co, oy)
        for (int co = 0; co < c_out; ++co) {
            T* op = out.plane(co);
            const T* wbase = W.data() + static_cast<size_t>(co) * in.c * 9;
            for (int oy = 0; oy < oh; ++oy) {
                std::fill(acc.begin(), acc.end(), b[co]);
                for (int ci = 0; ci < in.c; ++ci) {
                    const T* wk = wbase + static_cast<size_t>(ci) * 9;
                    const T* ip = in.plane(ci);
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy + (ky - 1) * dilation;
                        if (iy < 0 || iy >= in.h) continue;
                        accum_row_taps(acc.data(), ip + static_cast<size_t>(iy) * in.w, in.w,
                                       dilation, wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                    }
                }
                std::copy(acc.begin(), acc.end(), op + static_cast<size_t>(oy) * ow);
            }
        }
        return;
    }

    // generic path (stride 2)
    for (int co = 0; co < c_out; ++co) {
        T* op = out.plane(co);
        std::fill(op, op + static_cast<size_t>(oh) * ow, b[co]);
        for (int ci = 0; ci < in.c; ++ci) {
            const T* ip = in.plane(ci);
            const T* wk = W.data() + (static_cast<size_t>(co) * in.c + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const T wv = wk[ky * 3 + kx];
                    const int dy = (ky - 1) * dilation;
                    const int dx = (kx - 1) * dilation;
                    const int oy0 = dy < 0 ? ceil_div(-dy, stride) : 0;
                    const int oy1 = std::min(oh - 1, (in.h - 1 - dy) / stride);
                    const int ox0 = dx < 0 ? ceil_div(-dx, stride) : 0;
                    const int ox1 = std::min(ow - 1, (in.w - 1 - dx) / stride);
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const T* irow = ip + static_cast<size_t>(oy * stride + dy) * in.w + dx;
                        T* orow = op + static_cast<size_t>(oy) * ow;
                        for (int ox = ox0; ox <= ox1; ++ox) orow[ox] += wv * irow[ox * stride];
                    }
                }
            }
        }
    }
}

template <class T>
void conv3x3_bwd(const TGrid<T>& in, std::span<const T> W, const TGrid<T>& gout, int stride,
                 int dilation, TGrid<T>* gin, std::span<T> gW, std::span<T> gb) {
    const int oh = gout.h, ow = gout.w;
    const int c_out = gout.c;
    const size_t ohw = static_cast<size_t>(oh) * ow;

    for (int co = 0; co < c_out; ++co) gb[co] += sum4(gout.plane(co), static_cast<int>(ohw));

    if (stride == 1 && 2 * dilation <= in.w) {
        // weight gradients: per-tap dot of shifted input rows against gout rows
        for (int co = 0; co < c_out; ++co) {
            const T* gop = gout.plane(co);
            for (int ci = 0; ci < in.c; ++ci) {
                const T* ip = in.plane(ci);
                T* gwk = gW.data() + (static_cast<size_t>(co) * in.c + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = (ky - 1) * dilation;
                    const int oy0 = std::max(0, -dy);
                    const int oy1 = std::min(oh - 1, in.h - 1 - dy);
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = (kx - 1) * dilation;
                        const int ox0 = std::max(0, -dx);
                        const int ox1 = std::min(ow - 1, in.w - 1 - dx);
                        const int len = ox1 - ox0 + 1;
                        if (len <= 0) continue;
                        T acc = T(0);
                        for (int oy = oy0; oy <= oy1; ++oy)
                            acc += dot4(ip + static_cast<size_t>(oy + dy) * in.w + dx + ox0,
                                        gop + static_cast<size_t>(oy) * ow + ox0, len);
                        gwk[ky * 3 + kx] += acc;
                    }
                }
            }
        }
        if (gin) {
            // input gradient: correlation of gout with the flipped kernel,
            // built row-wise with the same accumulator pattern
            std::vector<T> acc(in.w);
            for (int ci = 0; ci < in.c; ++ci) {
                T* gip = gin->plane(ci);
                for (int iy = 0; iy < in.h; ++iy) {
                    std::fill(acc.begin(), acc.end(), T(0));
                    for (int co = 0; co < c_out; ++co) {
                        const T* wk = W.data() + (static_cast<size_t>(co) * in.c + ci) * 9;
                        const T* gop = gout.plane(co);
                        for (int ky = 0; ky < 3; ++ky) {
                            const int oy = iy - (ky - 1) * dilation;
                            if (oy < 0 || oy >= oh) continue;
                            // gin[ix] += sum_kx w[ky,kx] * gout[oy, ix - (kx-1)d]
                            accum_row_taps(acc.data(), gop + static_cast<size_t>(oy) * ow, ow,
                                           dilation, wk[ky * 3 + 2], wk[ky * 3 + 1], wk[ky * 3]);
                        }
                    }
                    T* grow = gip + static_cast<size_t>(iy) * in.w;
                    for (int ix = 0; ix < in.w; ++ix) grow[ix] += acc[ix];
                }
            }
        }
        return;
    }

    // generic path (stride 2)
    for (int co = 0; co < c_out; ++co) {
        const T* gop = gout.plane(co);
        for (int ci = 0; ci < in.c; ++ci) {
            const T* ip = in.plane(ci);
            const T* wk = W.data() + (static_cast<size_t>(co) * in.c + ci) * 9;
            T* gwk = gW.data() + (static_cast<size_t>(co) * in.c + ci) * 9;
            T* gip = gin ? gin->plane(ci) : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int dy = (ky - 1) * dilation;
                    const int dx = (kx - 1) * dilation;
                    const int oy0 = dy < 0 ? ceil_div(-dy, stride) : 0;
                    const int oy1 = std::min(oh - 1, (in.h - 1 - dy) / stride);
                    const int ox0 = dx < 0 ? ceil_div(-dx, stride) : 0;
                    const int ox1 = std::min(ow - 1, (in.w - 1 - dx) / stride);
                    const T wv = wk[ky * 3 + kx];
                    T acc_w = T(0);
                    for (int oy = oy0; oy <= oy1; ++oy) {
                        const size_t ioff = static_cast<size_t>(oy * stride + dy) * in.w + dx;
                        const T* irow = ip + ioff;
                        const T* grow = gop + static_cast<size_t>(oy) * ow;
                        for (int ox = ox0; ox <= ox1; ++ox) acc_w += irow[ox * stride] * grow[ox];
                        if (gip) {
                            T* girow = gip + ioff;
                            for (int ox = ox0; ox <= ox1; ++ox)
                                girow[ox * stride] += wv * grow[ox];
                        }
                    }
                    gwk[ky * 3 + kx] += acc_w;
                }
            }
        }
    }
}

template <class T>
void conv1x1_fwd(const TGrid<T>& in, std::span<const T> W, std::span<const T> b, int c_out,
                 TGrid<T>& out) {
    const size_t hw = static_cast<size_t>(in.h) * in.w;
    out = TGrid<T>(c_out, in.h, in.w);
    for (int co = 0; co < c_out; ++co) {
        T* op = out.plane(co);
        std::fill(op, op + hw, b[co]);
        for (int ci = 0; ci < in.c; ++ci) {
            const T wv = W[static_cast<size_t>(co) * in.c + ci];
            const T* ip = in.plane(ci);
            for (size_t i = 0; i < hw; ++i) op[i] += wv * ip[i];
        }
    }
}

template <class T>
void conv1x1_bwd(const TGrid<T>& in, std::span<const T> W, const TGrid<T>& gout, TGrid<T>* gin,
                 std::span<T> gW, std::span<T> gb) {
    const size_t hw = static_cast<size_t>(in.h) * in.w;
    for (int co = 0; co < gout.c; ++co) {
        const T* gop = gout.plane(co);
        gb[co] += sum4(gop, static_cast<int>(hw));
        for (int ci = 0; ci < in.c; ++ci) {
            gW[static_cast<size_t>(co) * in.c + ci] += dot4(in.plane(ci), gop, static_cast<int>(hw));
            if (gin) {
                const T wv = W[static_cast<size_t>(co) * in.c + ci];
                T* gip = gin->plane(ci);
                for (size_t i = 0; i < hw; ++i) gip[i] += wv * gop[i];
            }
        }
    }
}

template <class T>
TGrid<T> silu_fwd(const TGrid<T>& x) {
    TGrid<T> out(x.c, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x.v[i]));
        out.v[i] = x.v[i] * s;
    }
    return out;
}

template <class T>
TGrid<T> silu_bwd(const TGrid<T>& x_pre, const TGrid<T>& gout) {
    TGrid<T> gin(x_pre.c, x_pre.h, x_pre.w);
    for (size_t i = 0; i < x_pre.v.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x_pre.v[i]));
        gin.v[i] = gout.v[i] * s * (T(1) + x_pre.v[i] * (T(1) - s));
    }
    return gin;
}

template <class T>
TGrid<T> upsample2_fwd(const TGrid<T>& in) {
    TGrid<T> out(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c) {
        const T* ip = in.plane(c);
        T* op = out.plane(c);
        for (int y = 0; y < in.h; ++y) {
            for (int x = 0; x < in.w; ++x) {
                const T v = ip[static_cast<size_t>(y) * in.w + x];
                T* o = op + static_cast<size_t>(2 * y) * out.w + 2 * x;
                o[0] = v;
                o[1] = v;
                o[out.w] = v;
                o[out.w + 1] = v;
            }
        }
    }
    return out;
}

template <class T>
TGrid<T> upsample2_bwd(const TGrid<T>& gout) {
    TGrid<T> gin(gout.c, gout.h / 2, gout.w / 2);
    for (int c = 0; c < gout.c; ++c) {
        const T* gp = gout.plane(c);
        T* gi = gin.plane(c);
        for (int y = 0; y < gin.h; ++y) {
            for (int x = 0; x < gin.w; ++x) {
                const T* g = gp + static_cast<size_t>(2 * y) * gout.w + 2 * x;
                gi[static_cast<size_t>(y) * gin.w + x] = g[0] + g[1] + g[gout.w] + g[gout.w + 1];
            }
        }
    }
    return gin;
}

template <class T>
void linear_fwd(std::span<const T> x, std::span<const T> W, std::span<const T> b, int n_in,
                int n_out, std::span<T> y) {
    for (int o = 0; o < n_out; ++o)
        y[o] = b[o] + dot4(W.data() + static_cast<size_t>(o) * n_in, x.data(), n_in);
}

template <class T>
void linear_bwd(std::span<const T> x, std::span<const T> W, std::span<const T> gy, int n_in,
                int n_out, std::span<T> gx, std::span<T> gW, std::span<T> gb) {
    for (int o = 0; o < n_out; ++o) {
        const T g = gy[o];
        gb[o] += g;
        const T* wr = W.data() + static_cast<size_t>(o) * n_in;
        T* gwr = gW.data() + static_cast<size_t>(o) * n_in;
        for (int i = 0; i < n_in; ++i) {
            gwr[i] += g * x[i];
            if (!gx.empty()) gx[i] += g * wr[i];
        }
    }
}

template <class T>
void add_channel_bias(TGrid<T>& x, std::span<const T> bias) {
    const size_t hw = static_cast<size_t>(x.h) * x.w;
    for (int c = 0; c < x.c; ++c) {
        T* p = x.plane(c);
        const T b = bias[c];
        for (size_t i = 0; i < hw; ++i) p[i] += b;
    }
}

template <class T>
void sinusoidal_embed(int t, int dim, std::span<T> out) {
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double f = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
        out[k] = static_cast<T>(std::sin(t * f));
        out[half + k] = static_cast<T>(std::cos(t * f));
    }
    if (dim % 2) out[dim - 1] = T(0);
}

template <class T>
void fill_kaiming(std::span<T> w, int fan_in, double gain, Rng& rng) {
    const double std_dev = std::sqrt(gain / static_cast<double>(fan_in));
    for (T& x : w) x = static_cast<T>(rng.normal() * std_dev);
}

#define SCRIBBLEDIFF_INSTANTIATE(T)                                                                \
    template void conv3x3_fwd<T>(const TGrid<T>&, std::span<const T>, std::span<const T>, int,     \
                                 int, int, TGrid<T>&);                                             \
    template void conv3x3_bwd<T>(const TGrid<T>&, std::span<const T>, const TGrid<T>&, int, int,   \
                                 TGrid<T>*, std::span<T>, std::span<T>);                           \
    template void conv1x1_fwd<T>(const TGrid<T>&, std::span<const T>, std::span<const T>, int,     \
                                 TGrid<T>&);                                                       \
    template void conv1x1_bwd<T>(const TGrid<T>&, std::span<const T>, const TGrid<T>&, TGrid<T>*,  \
                                 std::span<T>, std::span<T>);                                      \
    template TGrid<T> silu_fwd<T>(const TGrid<T>&);                                                \
    template TGrid<T> silu_bwd<T>(const TGrid<T>&, const TGrid<T>&);                               \
    template TGrid<T> upsample2_fwd<T>(const TGrid<T>&);                                           \
    template TGrid<T> upsample2_bwd<T>(const TGrid<T>&);                                           \
    template void linear_fwd<T>(std::span<const T>, std::span<const T>, std::span<const T>, int,   \
                                int, std::span<T>);                                                \
    template void linear_bwd<T>(std::span<const T>, std::span<const T>, std::span<const T>, int,   \
                                int, std::span<T>, std::span<T>, std::span<T>);                    \
    template void add_channel_bias<T>(TGrid<T>&, std::span<const T>);                              \
    template void sinusoidal_embed<T>(int, int, std::span<T>);                                     \
    template void fill_kaiming<T>(std::span<T>, int, double, Rng&);

SCRIBBLEDIFF_INSTANTIATE(float)
SCRIBBLEDIFF_INSTANTIATE(double)

#undef SCRIBBLEDIFF_INSTANTIATE

}  // namespace scribblediff::nn
