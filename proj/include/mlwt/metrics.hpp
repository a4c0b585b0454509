#ifndef MLWT_METRICS_HPP
#define MLWT_METRICS_HPP

#include <cmath>
#include <limits>

#include "mlwt/tensor.hpp"

namespace mlwt {

// PSNR in dB; +inf when MSE is exactly zero.
template <typename T>
double psnr_metric(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
    if (!x.same_shape(y)) throw std::invalid_argument("psnr_metric: shape mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = double(x.data[i]) - double(y.data[i]);
        mse += d * d;
    }
    mse /= double(x.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {
inline const std::vector<double>& ssim_window() {
    // 11-tap Gaussian, sigma 1.5, normalized
    static const std::vector<double> w = [] {
        std::vector<double> v(11);
        double s = 0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5;
            v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            s += v[i];
        }
        for (auto& x : v) x /= s;
        return v;
    }();
    return w;
}
}  // namespace detail

// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// computed on the valid interior and averaged over batch and channels.
template <typename T>
double ssim_metric(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
    if (!x.same_shape(y)) throw std::invalid_argument("ssim_metric: shape mismatch");
    const auto& win = detail::ssim_window();
    const int R = 5;
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const std::size_t B = x.b(), C = x.c(), H = x.h(), W = x.w();
    if (long(H) < 11 || long(W) < 11)
        throw std::invalid_argument("ssim_metric: image smaller than the window");
    double total = 0;
    std::size_t count = 0;
    std::vector<double> mx(W), my(W), mxx(W), myy(W), mxy(W);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t yy = R; yy + R < H; ++yy) {
                // horizontal pass cached per output row
                for (std::size_t xx = 0; xx < W; ++xx)
                    mx[xx] = my[xx] = mxx[xx] = myy[xx] = mxy[xx] = 0;
                for (int dy = -R; dy <= R; ++dy) {
                    const double wv = win[dy + R];
                    for (std::size_t xx = 0; xx < W; ++xx) {
                        const double a = double(x.at(b, c, yy + dy, xx));
                        const double bb = double(y.at(b, c, yy + dy, xx));
                        mx[xx] += wv * a;
                        my[xx] += wv * bb;
                        mxx[xx] += wv * a * a;
                        myy[xx] += wv * bb * bb;
                        mxy[xx] += wv * a * bb;
                    }
                }
                for (std::size_t xx = R; xx + R < W; ++xx) {
                    double ux = 0, uy = 0, sxx = 0, syy = 0, sxy = 0;
                    for (int dx = -R; dx <= R; ++dx) {
                        const double wv = win[dx + R];
                        ux += wv * mx[xx + dx];
                        uy += wv * my[xx + dx];
                        sxx += wv * mxx[xx + dx];
                        syy += wv * myy[xx + dx];
                        sxy += wv * mxy[xx + dx];
                    }
                    sxx -= ux * ux;
                    syy -= uy * uy;
                    sxy -= ux * uy;
                    const double num = (2 * ux * uy + c1) * (2 * sxy + c2);
                    const double den = (ux * ux + uy * uy + c1) * (sxx + syy + c2);
                    total += num / den;
                    ++count;
                }
            }
    return total / double(count);
}

}  // namespace mlwt

#endif
