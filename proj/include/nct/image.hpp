#pragma once

#include <array>
#include <string>
#include <vector>

#include "nct/tensor.hpp"

namespace nct {

using Rgb = std::array<float, 3>;

inline float linf(const Rgb& a, const Rgb& b) {
    float d = 0;
    for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(a[c] - b[c]));
    return d;
}

// H x W x 3 raster in [0,1]; the carrier for every rendered and generated
// image. Row-major, RGB interleaved.
struct ImageGrid {
    int h = 0, w = 0;
    std::vector<float> px;

    ImageGrid() = default;
    ImageGrid(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_ * 3, 0.f) {}

    float* at(int y, int x) { return px.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const float* at(int y, int x) const { return px.data() + (static_cast<size_t>(y) * w + x) * 3; }

    Rgb get(int y, int x) const {
        const float* p = at(y, x);
        return {p[0], p[1], p[2]};
    }

    void set(int y, int x, const Rgb& c) {
        float* p = at(y, x);
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    void fill(const Rgb& c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) set(y, x, c);
    }

    bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }

    // (3,H,W) tensor with [0,1] mapped onto [lo,hi].
    Tensor to_chw(float lo = -1.f, float hi = 1.f) const;
    static ImageGrid from_chw(const Tensor& t, float lo = -1.f, float hi = 1.f);

    std::vector<uint8_t> to_bytes() const;  // round(v*255), clamped
};

// Binary PPM (P6, maxval 255), bit-exact round trip of the quantized bytes.
void write_ppm(const std::string& path, const ImageGrid& img);
ImageGrid read_ppm(const std::string& path);

// Mean over 2x2 blocks; h and w must be even.
ImageGrid downsample2x(const ImageGrid& img);

// Horizontal strip of equally sized tiles with a 1px separator.
ImageGrid contact_sheet(const std::vector<ImageGrid>& tiles, int columns);

}  // namespace nct
