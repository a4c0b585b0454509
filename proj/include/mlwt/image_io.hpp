#ifndef MLWT_IMAGE_IO_HPP
#define MLWT_IMAGE_IO_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "mlwt/tensor.hpp"

namespace mlwt {

// Binary PGM (1 channel) / PPM (3 channels), 8-bit, maxval 255, mapped
// linearly to [0,1]. Loaded as (1,C,H,W).
template <typename T>
Tensor<T> load_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw format_error("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5" && magic != "P6")
        throw format_error("unsupported image format (want binary PGM/PPM): " + path);
    const std::size_t channels = magic == "P6" ? 3 : 1;
    auto next_int = [&is, &path] {
        // skip whitespace and '#' comment lines in the header
        for (;;) {
            const int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v;
        if (!(is >> v)) throw format_error("bad image header: " + path);
        return v;
    };
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw format_error("only maxval 255 supported: " + path);
    is.get();  // single whitespace after header
    std::vector<unsigned char> raw(std::size_t(w) * h * channels);
    is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (!is) throw format_error("truncated image: " + path);
    Tensor<T> t({1, channels, std::size_t(h), std::size_t(w)});
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                t.at(0, c, y, x) = T(raw[(std::size_t(y) * w + x) * channels + c]) / T(255);
    return t;
}

template <typename T>
void save_image(const std::string& path, const Tensor<T>& t) {
    if (t.b() != 1 || (t.c() != 1 && t.c() != 3))
        throw std::invalid_argument("save_image: need (1,1,H,W) or (1,3,H,W)");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    const std::size_t C = t.c(), H = t.h(), W = t.w();
    os << (C == 3 ? "P6" : "P5") << "\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> raw(W * H * C);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                const double v = std::clamp(double(t.at(0, c, y, x)), 0.0, 1.0);
                raw[(y * W + x) * C + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    os.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
}

// min-max normalized grayscale dump of one channel (subband inspection)
template <typename T>
void save_channel_normalized(const std::string& path, const Tensor<T>& t,
                             std::size_t channel) {
    const std::size_t H = t.h(), W = t.w();
    Tensor<T> img({1, 1, H, W});
    T lo = t.at(0, channel, 0, 0), hi = lo;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            lo = std::min(lo, t.at(0, channel, y, x));
            hi = std::max(hi, t.at(0, channel, y, x));
        }
    const T range = hi - lo;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            img.at(0, 0, y, x) =
                range > T(0) ? (t.at(0, channel, y, x) - lo) / range : T(0);
    save_image(path, img);
}

}  // namespace mlwt

#endif
