#pragma once

#include <span>
#include <string>
#include <vector>

#include "scribblediff/grid.hpp"
#include "scribblediff/rng.hpp"

namespace scribblediff::nn {

struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
    size_t count = 0;
};

// Flat parameter vector plus a named-tensor layout; checkpoints serialize the
// tensors in registration order.
template <class T>
struct ParamStore {
    std::vector<TensorInfo> tensors;
    std::vector<T> data;

    int add(std::string name, std::vector<int> shape) {
        size_t count = 1;
        for (int d : shape) count *= static_cast<size_t>(d);
        TensorInfo info{std::move(name), std::move(shape), data.size(), count};
        data.resize(data.size() + count, T(0));
        tensors.push_back(std::move(info));
        return static_cast<int>(tensors.size()) - 1;
    }

    std::span<T> at(int idx) { return {data.data() + tensors[idx].offset, tensors[idx].count}; }
    std::span<const T> at(int idx) const { return {data.data() + tensors[idx].offset, tensors[idx].count}; }

    // zero-valued store with the same layout (gradient buffers)
    ParamStore zeros_like() const {
        ParamStore out;
        out.tensors = tensors;
        out.data.assign(data.size(), T(0));
        return out;
    }

    bool all_finite() const {
        for (const T& x : data)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

// 3x3 convolution, padding = dilation (same spatial size at stride 1,
// ceil(h/2) at stride 2). Weights are [c_out][c_in][3][3].
template <class T>
void conv3x3_fwd(const TGrid<T>& in, std::span<const T> W, std::span<const T> b, int c_out,
                 int stride, int dilation, TGrid<T>& out);

// Gradients w.r.t. input (optional), weights and bias; gW/gb are accumulated.
template <class T>
void conv3x3_bwd(const TGrid<T>& in, std::span<const T> W, const TGrid<T>& gout, int stride,
                 int dilation, TGrid<T>* gin, std::span<T> gW, std::span<T> gb);

template <class T>
void conv1x1_fwd(const TGrid<T>& in, std::span<const T> W, std::span<const T> b, int c_out,
                 TGrid<T>& out);

template <class T>
void conv1x1_bwd(const TGrid<T>& in, std::span<const T> W, const TGrid<T>& gout, TGrid<T>* gin,
                 std::span<T> gW, std::span<T> gb);

template <class T>
TGrid<T> silu_fwd(const TGrid<T>& x);

// gin += silu'(x_pre) * gout, written into a fresh grid
template <class T>
TGrid<T> silu_bwd(const TGrid<T>& x_pre, const TGrid<T>& gout);

template <class T>
TGrid<T> upsample2_fwd(const TGrid<T>& in);

template <class T>
TGrid<T> upsample2_bwd(const TGrid<T>& gout);

template <class T>
void linear_fwd(std::span<const T> x, std::span<const T> W, std::span<const T> b, int n_in,
                int n_out, std::span<T> y);

template <class T>
void linear_bwd(std::span<const T> x, std::span<const T> W, std::span<const T> gy, int n_in,
                int n_out, std::span<T> gx, std::span<T> gW, std::span<T> gb);

// Per-channel additive bias (timestep embedding injection).
template <class T>
void add_channel_bias(TGrid<T>& x, std::span<const T> bias);

// emb[k] = sin(t * f_k), emb[half+k] = cos(t * f_k), f_k = 10000^(-k/half)
template <class T>
void sinusoidal_embed(int t, int dim, std::span<T> out);

// Kaiming-style normal fill: N(0, gain / fan_in)
template <class T>
void fill_kaiming(std::span<T> w, int fan_in, double gain, Rng& rng);

}  // namespace scribblediff::nn
