#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace scribblediff {

// Dense channel-major (C,H,W) grid. Images, noise and condition renderings
// all use the float instantiation; the double one exists for gradient checks.
template <class T>
struct TGrid {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    TGrid() = default;
    TGrid(int c_, int h_, int w_, T fill = T(0))
        : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {
        if (c_ <= 0 || h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("TGrid: dimensions must be positive");
    }

    T& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
    T at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }

    T* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
    const T* plane(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }

    size_t size() const { return v.size(); }
    bool same_shape(const TGrid& o) const { return c == o.c && h == o.h && w == o.w; }

    template <class U>
    TGrid<U> cast() const {
        TGrid<U> out(c, h, w);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Grid = TGrid<float>;

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// H×W integer label grid; -1 marks "unlabeled" in scribble maps.
struct LabelGrid {
    int h = 0, w = 0;
    std::vector<int16_t> v;

    LabelGrid() = default;
    LabelGrid(int h_, int w_, int16_t fill = 0)
        : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("LabelGrid: dimensions must be positive");
    }

    int16_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    int16_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
    bool same_shape(const LabelGrid& o) const { return h == o.h && w == o.w; }
};

inline double mean_sq_distance(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "mean_sq_distance");
    double acc = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        const double d = static_cast<double>(a.v[i]) - b.v[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.v.size());
}

inline Grid clamp_grid(Grid g, float lo, float hi) {
    for (auto& x : g.v) x = x < lo ? lo : (x > hi ? hi : x);
    return g;
}

}  // namespace scribblediff
