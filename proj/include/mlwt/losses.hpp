#ifndef MLWT_LOSSES_HPP
#define MLWT_LOSSES_HPP

#include <vector>

#include "mlwt/tape.hpp"
#include "mlwt/wavelet.hpp"

namespace mlwt {

inline constexpr double kPsnrLossEps = 1e-8;

// 10*log10(MSE + eps): smooth, bounded below at -80, equals -PSNR away from
// the clamp. Minimized when x == y.
template <typename T>
typename Tape<T>::Id psnr_loss(Tape<T>& t, typename Tape<T>::Id x,
                               typename Tape<T>::Id y) {
    auto d = t.sub(x, y);
    auto mse = t.mean_all(t.mul(d, d));
    return t.scale(t.log10_(t.add_scalar(mse, T(kPsnrLossEps))), T(10));
}

// y_1 = y, y_{k+1} = 2x2 average pool of y_k (fine -> coarse).
template <typename T>
std::vector<Tensor<T>> make_target_pyramid(const Tensor<T>& y, std::size_t levels) {
    const std::size_t div = std::size_t(1) << (levels - 1);
    if (y.h() % div != 0 || y.w() % div != 0)
        throw std::invalid_argument("target pyramid: dims not divisible by 2^(K-1)");
    std::vector<Tensor<T>> out;
    out.push_back(y);
    Tape<T> t;
    auto cur = t.leaf(y);
    for (std::size_t k = 1; k < levels; ++k) {
        cur = t.avgpool2(cur);
        out.push_back(t.value(cur));
    }
    return out;
}

// sum_k w_k * psnr_loss(x_k, y_k), w_k = 1/k, scale 1 = full resolution
template <typename T>
typename Tape<T>::Id multi_scale_loss(Tape<T>& t,
                                      const std::vector<typename Tape<T>::Id>& outputs,
                                      const std::vector<typename Tape<T>::Id>& targets) {
    if (outputs.size() != targets.size() || outputs.empty())
        throw std::invalid_argument("multi_scale_loss: list length mismatch");
    typename Tape<T>::Id total = -1;
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        auto term = t.scale(psnr_loss(t, outputs[k], targets[k]), T(1) / T(k + 1));
        total = (k == 0) ? term : t.add(total, term);
    }
    return total;
}

// sum_m (P[m] - 2*delta[m = N-1])^2 + sum_m Q[m]^2 with
// P = a0*s0 + a1*s1 (perfect reconstruction target) and
// Q = a0(-z)s0 + a1(-z)s1 (aliasing cancellation target).
template <typename T>
typename Tape<T>::Id wavelet_loss(Tape<T>& t, typename Tape<T>::Id a0,
                                  typename Tape<T>::Id a1, typename Tape<T>::Id s0,
                                  typename Tape<T>::Id s1) {
    const std::size_t n = t.value(a0).numel();
    auto p = t.add(t.poly_product(a0, s0), t.poly_product(a1, s1));
    Tensor<T> target({2 * n - 1});
    target.data[n - 1] = T(2);
    auto d = t.sub(p, t.leaf(std::move(target)));
    auto q = t.add(t.poly_product(t.alternate_sign(a0), s0),
                   t.poly_product(t.alternate_sign(a1), s1));
    return t.add(t.sum_all(t.mul(d, d)), t.sum_all(t.mul(q, q)));
}

template <typename T>
T wavelet_loss(const FilterBank<T>& bank) {
    bank.validate();
    Tape<T> t;
    const std::size_t n = bank.length();
    auto a0 = t.leaf(Tensor<T>({n}, bank.a0));
    auto a1 = t.leaf(Tensor<T>({n}, bank.a1));
    auto s0 = t.leaf(Tensor<T>({n}, bank.s0));
    auto s1 = t.leaf(Tensor<T>({n}, bank.s1));
    return t.value(wavelet_loss(t, a0, a1, s0, s1)).data[0];
}

// L_total = L_wavelet (summed over banks) + L_multi, unweighted
template <typename T>
typename Tape<T>::Id total_loss(Tape<T>& t,
                                const std::vector<typename Tape<T>::Id>& outputs,
                                const std::vector<typename Tape<T>::Id>& targets,
                                const std::vector<std::array<typename Tape<T>::Id, 4>>& banks,
                                T wavelet_weight = T(1)) {
    auto total = multi_scale_loss(t, outputs, targets);
    for (const auto& b : banks) {
        auto wl = wavelet_loss(t, b[0], b[1], b[2], b[3]);
        total = t.add(total, wavelet_weight == T(1) ? wl : t.scale(wl, wavelet_weight));
    }
    return total;
}

}  // namespace mlwt

#endif
