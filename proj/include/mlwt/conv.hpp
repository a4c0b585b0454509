#ifndef MLWT_CONV_HPP
#define MLWT_CONV_HPP

#include <cblas.h>
#if defined(__x86_64__)
#include <cpuid.h>
#endif

#include <cstdlib>

#include <stdexcept>

#include "mlwt/tensor.hpp"

namespace mlwt {

enum class PadMode { Zero, Circular };

// Spatial padding, identical on H and W. `lo` is leading-side, `hi` trailing.
struct Pad2D {
    PadMode mode = PadMode::Zero;
    int lo = 0;
    int hi = 0;
    static Pad2D zero(int p) { return {PadMode::Zero, p, p}; }
    static Pad2D circular(int p) { return {PadMode::Circular, p, p}; }
    // leading-side circular pad used by the wavelet transforms
    static Pad2D circular_lead(int p) { return {PadMode::Circular, p, 0}; }
    int total() const { return lo + hi; }
};

namespace detail {

extern "C" void openblas_set_num_threads(int);

#if defined(__x86_64__)
// DYNAMIC_ARCH OpenBLAS can misdetect virtualized CPUs and fall back to its
// slowest kernels. Steer it before its own initializer runs (priority 101,
// raw cpuid rather than __builtin_cpu_supports, whose support table is itself
// filled in by a later constructor). Effective when OpenBLAS is linked
// statically; harmless otherwise.
__attribute__((constructor(101))) inline void steer_openblas_core() {
    unsigned a = 0, b = 0, c = 0, d = 0;
    if (__get_cpuid_count(7, 0, &a, &b, &c, &d) && (b & (1u << 5)))  // AVX2
        setenv("OPENBLAS_CORETYPE", "HASWELL", /*overwrite=*/0);
}
#endif

inline void blas_single_thread() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}

// C(MxN) += alpha * A(MxK) * B(KxN), all row-major, optionally transposing A.
inline void gemm(bool trans_a, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
    blas_single_thread();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, CblasNoTrans,
                m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(bool trans_a, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
    blas_single_thread();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, CblasNoTrans,
                m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, const Pad2D& p) {
    if (p.lo == 0 && p.hi == 0) return x;
    const std::size_t B = x.b(), C = x.c(), H = x.h(), W = x.w();
    const std::size_t Hp = H + p.total(), Wp = W + p.total();
    Tensor<T> out({B, C, Hp, Wp});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < Hp; ++y) {
                const long sy = long(y) - p.lo;
                if (p.mode == PadMode::Zero && (sy < 0 || sy >= long(H))) continue;
                const std::size_t ysrc =
                    p.mode == PadMode::Zero ? std::size_t(sy)
                                            : std::size_t(((sy % long(H)) + long(H)) % long(H));
                const T* src = &x.at(b, c, ysrc, 0);
                T* dst = &out.at(b, c, y, 0);
                for (std::size_t xx = 0; xx < Wp; ++xx) {
                    const long sx = long(xx) - p.lo;
                    if (p.mode == PadMode::Zero && (sx < 0 || sx >= long(W))) continue;
                    const std::size_t xsrc =
                        p.mode == PadMode::Zero
                            ? std::size_t(sx)
                            : std::size_t(((sx % long(W)) + long(W)) % long(W));
                    dst[xx] = src[xsrc];
                }
            }
    return out;
}

// Adjoint of pad2d: fold the padded gradient back onto the unpadded grid.
template <typename T>
Tensor<T> pad2d_adjoint(const Tensor<T>& gp, const Pad2D& p, std::size_t H, std::size_t W) {
    if (p.lo == 0 && p.hi == 0) return gp;
    const std::size_t B = gp.b(), C = gp.c(), Hp = gp.h(), Wp = gp.w();
    Tensor<T> out({B, C, H, W});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < Hp; ++y) {
                const long sy = long(y) - p.lo;
                if (p.mode == PadMode::Zero && (sy < 0 || sy >= long(H))) continue;
                const std::size_t ydst =
                    p.mode == PadMode::Zero ? std::size_t(sy)
                                            : std::size_t(((sy % long(H)) + long(H)) % long(H));
                const T* src = &gp.at(b, c, y, 0);
                for (std::size_t xx = 0; xx < Wp; ++xx) {
                    const long sx = long(xx) - p.lo;
                    if (p.mode == PadMode::Zero && (sx < 0 || sx >= long(W))) continue;
                    const std::size_t xdst =
                        p.mode == PadMode::Zero
                            ? std::size_t(sx)
                            : std::size_t(((sx % long(W)) + long(W)) % long(W));
                    out.at(b, c, ydst, xdst) += src[xx];
                }
            }
    return out;
}

// Scatters a column-major patch matrix (IC*KH*KW rows, Ho*Wo columns) for
// one batch element; the inverse fold is col2im_add.
template <typename T>
void im2col(const Tensor<T>& xp, std::size_t b, std::size_t KH, std::size_t KW,
            int stride, std::size_t Ho, std::size_t Wo, T* col) {
    const std::size_t IC = xp.c();
    T* dst = col;
    for (std::size_t ic = 0; ic < IC; ++ic)
        for (std::size_t ky = 0; ky < KH; ++ky)
            for (std::size_t kx = 0; kx < KW; ++kx)
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const T* src = &xp.at(b, ic, oy * std::size_t(stride) + ky, kx);
                    for (std::size_t ox = 0; ox < Wo; ++ox)
                        *dst++ = src[ox * std::size_t(stride)];
                }
}

template <typename T>
void col2im_add(const T* col, Tensor<T>& gx, std::size_t b, std::size_t KH,
                std::size_t KW, int stride, std::size_t Ho, std::size_t Wo) {
    const std::size_t IC = gx.c();
    const T* src = col;
    for (std::size_t ic = 0; ic < IC; ++ic)
        for (std::size_t ky = 0; ky < KH; ++ky)
            for (std::size_t kx = 0; kx < KW; ++kx)
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    T* dst = &gx.at(b, ic, oy * std::size_t(stride) + ky, kx);
                    for (std::size_t ox = 0; ox < Wo; ++ox)
                        dst[ox * std::size_t(stride)] += *src++;
                }
}

inline constexpr std::size_t kMaxFastTaps = 64;

// Per-channel (ICG == 1) convolution planes with compile-time kernel size and
// stride so the tap loops fully unroll and the ox loop vectorizes. `dir` picks
// forward (0), input gradient (1), or kernel gradient (2).
template <typename T, int KH, int KW, int S, int dir>
void dw_plane(const T* x, const T* g, T* out, const T* w, T* gw, std::size_t Ho,
              std::size_t Wo, std::size_t Wp) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        const T* base = x + oy * std::size_t(S) * Wp;
        if constexpr (dir == 0) {
            T* orow = out + oy * Wo;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const T* px = base + ox * std::size_t(S);
                T acc = 0;
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx)
                        acc += w[ky * KW + kx] * px[std::size_t(ky) * Wp + kx];
                orow[ox] = acc;
            }
        } else if constexpr (dir == 1) {
            const T* grow = g + oy * Wo;
            T* gbase = out + oy * std::size_t(S) * Wp;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const T gv = grow[ox];
                T* px = gbase + ox * std::size_t(S);
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx)
                        px[std::size_t(ky) * Wp + kx] += w[ky * KW + kx] * gv;
            }
        } else {
            const T* grow = g + oy * Wo;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const T gv = grow[ox];
                const T* px = base + ox * std::size_t(S);
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx)
                        gw[ky * KW + kx] += gv * px[std::size_t(ky) * Wp + kx];
            }
        }
    }
}

inline bool dw_supported(std::size_t KH, std::size_t KW, int stride) {
    return (KH == 3 && KW == 3 && stride == 1) ||
           (KH == KW && (KH == 2 || KH == 4 || KH == 6 || KH == 8) && stride == 2);
}

// Dispatches the supported kernel/stride combinations to specialized instances.
template <typename T, int dir>
void dw_dispatch(std::size_t KH, std::size_t KW, int stride, const T* x, const T* g,
                 T* out, const T* w, T* gw, std::size_t Ho, std::size_t Wo,
                 std::size_t Wp) {
    if (KH == 3 && stride == 1)
        dw_plane<T, 3, 3, 1, dir>(x, g, out, w, gw, Ho, Wo, Wp);
    else if (KH == 2)
        dw_plane<T, 2, 2, 2, dir>(x, g, out, w, gw, Ho, Wo, Wp);
    else if (KH == 4)
        dw_plane<T, 4, 4, 2, dir>(x, g, out, w, gw, Ho, Wo, Wp);
    else if (KH == 6)
        dw_plane<T, 6, 6, 2, dir>(x, g, out, w, gw, Ho, Wo, Wp);
    else
        dw_plane<T, 8, 8, 2, dir>(x, g, out, w, gw, Ho, Wo, Wp);
}

// Cross-correlation of a padded input with kernel (OC, IC/groups, kh, kw).
template <typename T>
Tensor<T> conv2d_raw(const Tensor<T>& xp, const Tensor<T>& k, const T* bias,
                     int stride, int groups) {
    const std::size_t B = xp.b(), IC = xp.c(), Hp = xp.h(), Wp = xp.w();
    const std::size_t OC = k.shape[0], ICG = k.shape[1], KH = k.shape[2], KW = k.shape[3];
    if (IC % groups != 0 || OC % groups != 0)
        throw std::invalid_argument("conv2d: channels not divisible by groups");
    if (ICG != IC / groups)
        throw std::invalid_argument("conv2d: kernel in-channel dim mismatch");
    if ((Hp - KH) % stride != 0 || (Wp - KW) % stride != 0)
        throw std::invalid_argument("conv2d: padded size minus kernel not divisible by stride");
    const std::size_t Ho = (Hp - KH) / stride + 1, Wo = (Wp - KW) / stride + 1;
    Tensor<T> out({B, OC, Ho, Wo});

    if (KH == 1 && KW == 1 && stride == 1 && groups == 1) {
        // pointwise convolution is a plain matrix product per batch element
        const std::size_t HW = Ho * Wo;
        for (std::size_t b = 0; b < B; ++b)
            gemm(false, int(OC), int(HW), int(IC), T(1), k.data.data(), int(IC),
                 &xp.at(b, 0, 0, 0), int(HW), T(0), &out.at(b, 0, 0, 0), int(HW));
    } else if (ICG == 1 && dw_supported(KH, KW, stride)) {
        // depthwise / per-channel grouped with a specialized plane kernel
        const std::size_t OCG = OC / groups;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < OC; ++oc) {
                const std::size_t ic = oc / OCG;
                dw_dispatch<T, 0>(KH, KW, stride, &xp.at(b, ic, 0, 0), nullptr,
                                  &out.at(b, oc, 0, 0), &k.at(oc, 0, 0, 0), nullptr,
                                  Ho, Wo, Wp);
            }
    } else if (groups == 1) {
        // dense spatial conv: im2col then one GEMM per batch element
        const std::size_t K = IC * KH * KW, HW = Ho * Wo;
        std::vector<T> col(K * HW);
        for (std::size_t b = 0; b < B; ++b) {
            im2col(xp, b, KH, KW, stride, Ho, Wo, col.data());
            gemm(false, int(OC), int(HW), int(K), T(1), k.data.data(), int(K),
                 col.data(), int(HW), T(0), &out.at(b, 0, 0, 0), int(HW));
        }
    } else {
        const std::size_t OCG = OC / groups;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t g = 0; g < std::size_t(groups); ++g)
                for (std::size_t o = 0; o < OCG; ++o) {
                    const std::size_t oc = g * OCG + o;
                    for (std::size_t i = 0; i < ICG; ++i) {
                        const std::size_t ic = g * ICG + i;
                        for (std::size_t ky = 0; ky < KH; ++ky)
                            for (std::size_t kx = 0; kx < KW; ++kx) {
                                const T w = k.at(oc, i, ky, kx);
                                if (w == T(0)) continue;
                                for (std::size_t oy = 0; oy < Ho; ++oy) {
                                    const T* row = &xp.at(b, ic, oy * stride + ky, kx);
                                    T* orow = &out.at(b, oc, oy, 0);
                                    for (std::size_t ox = 0; ox < Wo; ++ox)
                                        orow[ox] += w * row[ox * stride];
                                }
                            }
                    }
                }
    }
    if (bias)
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < OC; ++oc) {
                T* p = &out.at(b, oc, 0, 0);
                for (std::size_t i = 0; i < Ho * Wo; ++i) p[i] += bias[oc];
            }
    return out;
}

// Adjoint of conv2d_raw with respect to its (padded) input.
template <typename T>
Tensor<T> conv2d_input_grad_raw(const Tensor<T>& gy, const Tensor<T>& k, int stride,
                                int groups, std::size_t Hp, std::size_t Wp) {
    const std::size_t B = gy.b(), OC = gy.c(), Ho = gy.h(), Wo = gy.w();
    const std::size_t ICG = k.shape[1], KH = k.shape[2], KW = k.shape[3];
    const std::size_t IC = ICG * groups, OCG = OC / groups;
    Tensor<T> gx({B, IC, Hp, Wp});

    if (KH == 1 && KW == 1 && stride == 1 && groups == 1) {
        const std::size_t HW = Ho * Wo;
        for (std::size_t b = 0; b < B; ++b)
            gemm(true, int(IC), int(HW), int(OC), T(1), k.data.data(), int(IC),
                 &gy.at(b, 0, 0, 0), int(HW), T(0), &gx.at(b, 0, 0, 0), int(HW));
        return gx;
    }
    if (ICG == 1 && dw_supported(KH, KW, stride)) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < OC; ++oc) {
                const std::size_t ic = oc / OCG;
                dw_dispatch<T, 1>(KH, KW, stride, nullptr, &gy.at(b, oc, 0, 0),
                                  &gx.at(b, ic, 0, 0), &k.at(oc, 0, 0, 0), nullptr,
                                  Ho, Wo, Wp);
            }
        return gx;
    }
    if (groups == 1) {
        const std::size_t K = IC * KH * KW, HW = Ho * Wo;
        std::vector<T> col(K * HW);
        for (std::size_t b = 0; b < B; ++b) {
            gemm(true, int(K), int(HW), int(OC), T(1), k.data.data(), int(K),
                 &gy.at(b, 0, 0, 0), int(HW), T(0), col.data(), int(HW));
            col2im_add(col.data(), gx, b, KH, KW, stride, Ho, Wo);
        }
        return gx;
    }
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t g = 0; g < std::size_t(groups); ++g)
            for (std::size_t o = 0; o < OCG; ++o) {
                const std::size_t oc = g * OCG + o;
                for (std::size_t i = 0; i < ICG; ++i) {
                    const std::size_t ic = g * ICG + i;
                    for (std::size_t ky = 0; ky < KH; ++ky)
                        for (std::size_t kx = 0; kx < KW; ++kx) {
                            const T w = k.at(oc, i, ky, kx);
                            if (w == T(0)) continue;
                            for (std::size_t oy = 0; oy < Ho; ++oy) {
                                const T* grow = &gy.at(b, oc, oy, 0);
                                T* xrow = &gx.at(b, ic, oy * stride + ky, kx);
                                for (std::size_t ox = 0; ox < Wo; ++ox)
                                    xrow[ox * stride] += w * grow[ox];
                            }
                        }
                }
            }
    return gx;
}

// Gradient of conv2d_raw with respect to the kernel.
template <typename T>
Tensor<T> conv2d_kernel_grad_raw(const Tensor<T>& xp, const Tensor<T>& gy,
                                 const std::vector<std::size_t>& kshape, int stride,
                                 int groups) {
    const std::size_t B = xp.b();
    const std::size_t OC = kshape[0], ICG = kshape[1], KH = kshape[2], KW = kshape[3];
    const std::size_t Ho = gy.h(), Wo = gy.w(), OCG = OC / groups;
    const std::size_t IC = ICG * groups;
    Tensor<T> gk({OC, ICG, KH, KW});

    if (KH == 1 && KW == 1 && stride == 1 && groups == 1) {
        const std::size_t HW = Ho * Wo;
        for (std::size_t b = 0; b < B; ++b) {
            // gk[oc, ic] += gy_b (OC x HW) * xp_b^T (HW x IC) -- via gemm on
            // the transposed product to keep row-major layouts simple.
            blas_single_thread();
            if constexpr (std::is_same_v<T, float>)
                cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(OC), int(IC),
                            int(HW), 1.0f, &gy.at(b, 0, 0, 0), int(HW),
                            &xp.at(b, 0, 0, 0), int(HW), 1.0f, gk.data.data(), int(IC));
            else
                cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(OC), int(IC),
                            int(HW), 1.0, &gy.at(b, 0, 0, 0), int(HW),
                            &xp.at(b, 0, 0, 0), int(HW), 1.0, gk.data.data(), int(IC));
        }
        return gk;
    }
    const std::size_t Wp = xp.w();
    if (ICG == 1 && dw_supported(KH, KW, stride)) {
        for (std::size_t oc = 0; oc < OC; ++oc) {
            const std::size_t ic = oc / OCG;
            T* gw = &gk.at(oc, 0, 0, 0);
            for (std::size_t b = 0; b < B; ++b)
                dw_dispatch<T, 2>(KH, KW, stride, &xp.at(b, ic, 0, 0),
                                  &gy.at(b, oc, 0, 0), nullptr, nullptr, gw, Ho, Wo,
                                  Wp);
        }
        return gk;
    }
    if (groups == 1) {
        const std::size_t K = IC * KH * KW, HW = Ho * Wo;
        std::vector<T> col(K * HW);
        for (std::size_t b = 0; b < B; ++b) {
            im2col(xp, b, KH, KW, stride, Ho, Wo, col.data());
            blas_single_thread();
            // gk(OC x K) += gy_b(OC x HW) * col^T(HW x K)
            if constexpr (std::is_same_v<T, float>)
                cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(OC), int(K),
                            int(HW), 1.0f, &gy.at(b, 0, 0, 0), int(HW), col.data(),
                            int(HW), 1.0f, gk.data.data(), int(K));
            else
                cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(OC), int(K),
                            int(HW), 1.0, &gy.at(b, 0, 0, 0), int(HW), col.data(),
                            int(HW), 1.0, gk.data.data(), int(K));
        }
        return gk;
    }
    for (std::size_t g = 0; g < std::size_t(groups); ++g)
        for (std::size_t o = 0; o < OCG; ++o) {
            const std::size_t oc = g * OCG + o;
            for (std::size_t i = 0; i < ICG; ++i) {
                const std::size_t ic = g * ICG + i;
                for (std::size_t ky = 0; ky < KH; ++ky)
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        T acc = 0;
                        for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t oy = 0; oy < Ho; ++oy) {
                                const T* grow = &gy.at(b, oc, oy, 0);
                                const T* xrow = &xp.at(b, ic, oy * stride + ky, kx);
                                for (std::size_t ox = 0; ox < Wo; ++ox)
                                    acc += grow[ox] * xrow[ox * stride];
                            }
                        gk.at(oc, i, ky, kx) = acc;
                    }
            }
        }
    return gk;
}

}  // namespace detail
}  // namespace mlwt

#endif
