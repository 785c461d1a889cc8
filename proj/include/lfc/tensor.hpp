#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lfc {

// Dense rank-4 array in NCHW layout, row-major, double precision.
// The single value carrier for images, logits, probabilities and gradients.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0);

    static Tensor4 scalar(double v);
    static Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.n, t.c, t.h, t.w); }

    std::int64_t numel() const { return static_cast<std::int64_t>(n) * c * h * w; }

    std::size_t idx(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
    }

    double& at(int in, int ic, int iy, int ix) { return data[idx(in, ic, iy, ix)]; }
    double at(int in, int ic, int iy, int ix) const { return data[idx(in, ic, iy, ix)]; }

    // Pointer to the contiguous h*w plane of (sample, channel).
    double* plane(int in, int ic) { return data.data() + idx(in, ic, 0, 0); }
    const double* plane(int in, int ic) const { return data.data() + idx(in, ic, 0, 0); }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::array<int, 4> shape() const { return {n, c, h, w}; }
    std::string shape_str() const;

    double item() const;  // requires numel() == 1
    void fill(double v);
    bool all_finite() const;
    double max_abs_diff(const Tensor4& o) const;  // requires same shape
};

// Throws ConfigError naming both shapes when they differ.
void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what);

}  // namespace lfc
