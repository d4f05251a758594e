#include "nct/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "nct/common.hpp"

namespace nct {

Tensor ImageGrid::to_chw(float lo, float hi) const {
    Tensor t({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                t[(static_cast<int64_t>(c) * h + y) * w + x] =
                    lo + (hi - lo) * px[(static_cast<size_t>(y) * w + x) * 3 + c];
    return t;
}

ImageGrid ImageGrid::from_chw(const Tensor& t, float lo, float hi) {
    check_shape(t.ndim() == 3 && t.dim(0) == 3, "from_chw: expected (3,H,W), got " + shape_str(t.shape));
    ImageGrid img(t.dim(1), t.dim(2));
    int h = img.h, w = img.w;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float v = (t[(static_cast<int64_t>(c) * h + y) * w + x] - lo) / (hi - lo);
                img.px[(static_cast<size_t>(y) * w + x) * 3 + c] = std::clamp(v, 0.f, 1.f);
            }
    return img;
}

std::vector<uint8_t> ImageGrid::to_bytes() const {
    std::vector<uint8_t> out(px.size());
    for (size_t i = 0; i < px.size(); ++i) {
        float v = std::round(px[i] * 255.f);
        out[i] = static_cast<uint8_t>(std::clamp(v, 0.f, 255.f));
    }
    return out;
}

void write_ppm(const std::string& path, const ImageGrid& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "P6\n" << img.w << " " << img.h << "\n255\n";
    auto bytes = img.to_bytes();
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write: " + path);
}

ImageGrid read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
        throw IoError("not a maxval-255 P6 PPM: " + path);
    f.get();  // single whitespace after header
    ImageGrid img(h, w);
    std::vector<uint8_t> bytes(static_cast<size_t>(h) * w * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short read: " + path);
    for (size_t i = 0; i < bytes.size(); ++i) img.px[i] = static_cast<float>(bytes[i]) / 255.f;
    return img;
}

ImageGrid downsample2x(const ImageGrid& img) {
    check(img.h % 2 == 0 && img.w % 2 == 0, "downsample2x: odd extent");
    ImageGrid out(img.h / 2, img.w / 2);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x)[c] = 0.25f * (img.at(2 * y, 2 * x)[c] + img.at(2 * y, 2 * x + 1)[c] +
                                           img.at(2 * y + 1, 2 * x)[c] + img.at(2 * y + 1, 2 * x + 1)[c]);
    return out;
}

ImageGrid contact_sheet(const std::vector<ImageGrid>& tiles, int columns) {
    check(!tiles.empty() && columns > 0, "contact_sheet: no tiles");
    int th = tiles[0].h, tw = tiles[0].w;
    int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
    ImageGrid out(rows * (th + 1) - 1, columns * (tw + 1) - 1);
    out.fill({1.f, 1.f, 1.f});
    for (size_t i = 0; i < tiles.size(); ++i) {
        check(tiles[i].h == th && tiles[i].w == tw, "contact_sheet: mixed tile sizes");
        int r = static_cast<int>(i) / columns, c = static_cast<int>(i) % columns;
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                out.set(r * (th + 1) + y, c * (tw + 1) + x, tiles[i].get(y, x));
    }
    return out;
}

}  // namespace nct
