#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "slicerecon/types.hpp"

namespace fixtures {

using namespace slicerecon;

inline Mask2D block(int w, int h, int x0, int y0, int bw, int bh) {
    Mask2D m(w, h);
    for (int y = y0; y < y0 + bh; ++y)
        for (int x = x0; x < x0 + bw; ++x) m(x, y) = 1;
    return m;
}

inline Mask2D disk(int w, int h, double cx, double cy, double r) {
    Mask2D m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m(x, y) = 1;
    return m;
}

inline Image2D random_image(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    Image2D img(w, h);
    for (auto &v : img.data()) v = d(rng);
    return img;
}

// smooth blob intensity image, nonconstant everywhere
inline Image2D blob_image(int w, int h, double cx, double cy, double r, double base = 0.1) {
    Image2D img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
            img(x, y) = static_cast<float>(base + 0.8 * std::exp(-d2));
        }
    return img;
}

inline Mask2D random_mask(int w, int h, double p, std::mt19937_64 &rng) {
    std::bernoulli_distribution d(p);
    Mask2D m(w, h);
    for (auto &v : m.data()) v = d(rng) ? 1 : 0;
    return m;
}

} // namespace fixtures
