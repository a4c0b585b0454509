#ifndef MLWT_WAVELET_HPP
#define MLWT_WAVELET_HPP

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mlwt/tape.hpp"
#include "mlwt/tensor.hpp"

namespace mlwt {

// Analysis (a0 low, a1 high) and synthesis (s0, s1) filters, common even
// length N. These are the learnable parameters the wavelet loss constrains.
template <typename T>
struct FilterBank {
    std::vector<T> a0, a1, s0, s1;
    bool learnable = false;

    std::size_t length() const { return a0.size(); }

    void validate() const {
        const std::size_t n = a0.size();
        if (n < 2 || n % 2 != 0)
            throw std::invalid_argument("filter bank: length must be even and >= 2");
        if (a1.size() != n || s0.size() != n || s1.size() != n)
            throw std::invalid_argument("filter bank: filters must share one length");
    }
};

template <typename T = double>
FilterBank<T> haar() {
    const T r = T(1) / std::sqrt(T(2));
    return {{r, r}, {r, -r}, {r, r}, {-r, r}, false};
}

// Daubechies-2 (four taps), synthesis = time-reversed analysis.
template <typename T = double>
FilterBank<T> db2() {
    const T s3 = std::sqrt(T(3));
    const T d = T(4) * std::sqrt(T(2));
    const T h0 = (1 + s3) / d, h1 = (3 + s3) / d, h2 = (3 - s3) / d, h3 = (1 - s3) / d;
    FilterBank<T> b;
    b.a0 = {h0, h1, h2, h3};
    b.a1 = {h3, -h2, h1, -h0};
    b.s0 = {h3, h2, h1, h0};
    b.s1 = {-h0, h1, -h2, h3};
    return b;
}

template <typename T>
FilterBank<T> bank_cast(const FilterBank<double>& b) {
    FilterBank<T> o;
    auto cv = [](const std::vector<double>& v) {
        return std::vector<T>(v.begin(), v.end());
    };
    o.a0 = cv(b.a0);
    o.a1 = cv(b.a1);
    o.s0 = cv(b.s0);
    o.s1 = cv(b.s1);
    o.learnable = b.learnable;
    return o;
}

// Haar filters zero-extended to length n; still a perfect-reconstruction bank.
template <typename T = double>
FilterBank<T> haar_padded(std::size_t n) {
    FilterBank<T> h = haar<T>();
    FilterBank<T> b;
    auto pad_lead = [n](const std::vector<T>& v) {
        std::vector<T> o(v);
        o.resize(n, T(0));
        return o;
    };
    auto pad_trail = [n](const std::vector<T>& v) {
        std::vector<T> o(n - v.size(), T(0));
        o.insert(o.end(), v.begin(), v.end());
        return o;
    };
    // keep synthesis = reverse(analysis) after the extension
    b.a0 = pad_lead(h.a0);
    b.a1 = pad_lead(h.a1);
    b.s0 = pad_trail(h.s0);
    b.s1 = pad_trail(h.s1);
    return b;
}

// ---- filter bank text format ----
// line 1: N, then lines "a0:", "a1:", "s0:", "s1:" with N values each.

template <typename T>
void save_bank(const std::string& path, const FilterBank<T>& b) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << b.length() << "\n";
    auto line = [&os](const char* tag, const std::vector<T>& v) {
        os << tag;
        char buf[64];
        for (T x : v) {
            std::snprintf(buf, sizeof(buf), " %.17g", double(x));
            os << buf;
        }
        os << "\n";
    };
    line("a0:", b.a0);
    line("a1:", b.a1);
    line("s0:", b.s0);
    line("s1:", b.s1);
}

template <typename T>
FilterBank<T> load_bank(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw format_error("cannot open bank file: " + path);
    std::size_t n = 0;
    is >> n;
    if (!is || n < 2 || n % 2 != 0) throw format_error("bad filter length in " + path);
    FilterBank<T> b;
    auto read = [&](const char* tag, std::vector<T>& v) {
        std::string t;
        is >> t;
        if (t != tag) throw format_error("expected '" + std::string(tag) + "' in " + path);
        v.resize(n);
        for (auto& x : v) {
            double d;
            if (!(is >> d)) throw format_error("truncated bank file: " + path);
            x = T(d);
        }
    };
    read("a0:", b.a0);
    read("a1:", b.a1);
    read("s0:", b.s0);
    read("s1:", b.s1);
    return b;
}

// ---- 2D kernels ----

enum class KernelDirection { Analysis, Synthesis };

// The four NxN subband kernels and their stacked form, derived from a bank.
template <typename T>
struct WaveletKernel2D {
    std::vector<std::vector<T>> f_ll, f_lh, f_hl, f_hh;
    Tensor<T> stacked;  // (4,1,N,N), order LL,LH,HL,HH
    KernelDirection direction = KernelDirection::Analysis;
};

namespace detail {
template <typename T>
std::vector<std::vector<T>> outer_vv(const std::vector<T>& u, const std::vector<T>& v) {
    std::vector<std::vector<T>> m(u.size(), std::vector<T>(v.size()));
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) m[i][j] = u[i] * v[j];
    return m;
}
}  // namespace detail

template <typename T>
WaveletKernel2D<T> build_kernel(const std::vector<T>& lo, const std::vector<T>& hi,
                                KernelDirection dir) {
    WaveletKernel2D<T> k;
    k.direction = dir;
    k.f_ll = detail::outer_vv(lo, lo);
    k.f_lh = detail::outer_vv(lo, hi);
    k.f_hl = detail::outer_vv(hi, lo);
    k.f_hh = detail::outer_vv(hi, hi);
    const std::size_t n = lo.size();
    k.stacked = Tensor<T>({4, 1, n, n});
    const std::vector<std::vector<T>>* parts[4] = {&k.f_ll, &k.f_lh, &k.f_hl, &k.f_hh};
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                k.stacked.data[(p * n + i) * n + j] = (*parts[p])[i][j];
    return k;
}

template <typename T>
WaveletKernel2D<T> build_analysis_kernel(const FilterBank<T>& b) {
    b.validate();
    return build_kernel(b.a0, b.a1, KernelDirection::Analysis);
}

template <typename T>
WaveletKernel2D<T> build_synthesis_kernel(const FilterBank<T>& b) {
    b.validate();
    return build_kernel(b.s0, b.s1, KernelDirection::Synthesis);
}

// plain full linear convolution of coefficient vectors
template <typename T>
std::vector<T> poly_product(const std::vector<T>& u, const std::vector<T>& v) {
    if (u.empty() || v.empty())
        throw std::invalid_argument("poly_product: empty operand");
    std::vector<T> w(u.size() + v.size() - 1, T(0));
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) w[i + j] += u[i] * v[j];
    return w;
}

// ---- 1D transform (also the separability oracle for dwt2) ----

template <typename T>
struct SubbandSignal1D {
    std::vector<T> approx, detail;
};

// Stride-2 correlation with circular extension; leading pad N-2.
template <typename T>
SubbandSignal1D<T> dwt1(const std::vector<T>& x, const FilterBank<T>& bank) {
    bank.validate();
    const std::size_t L = x.size(), N = bank.length();
    if (L % 2 != 0) throw std::invalid_argument("dwt1: odd signal length");
    const long lead = long(N) - 2;
    SubbandSignal1D<T> out;
    out.approx.resize(L / 2);
    out.detail.resize(L / 2);
    for (std::size_t p = 0; p < L / 2; ++p) {
        T c = 0, d = 0;
        for (std::size_t k = 0; k < N; ++k) {
            const long idx = long(2 * p + k) - lead;
            const std::size_t j = std::size_t(((idx % long(L)) + long(L)) % long(L));
            c += bank.a0[k] * x[j];
            d += bank.a1[k] * x[j];
        }
        out.approx[p] = c;
        out.detail[p] = d;
    }
    return out;
}

// ---- 2D transforms on the tape ----

// Differentiable analysis kernel: outer products stacked LL,LH,HL,HH and
// tiled per input channel (grouped-conv layout, output channel = c*4 + b).
template <typename T>
typename Tape<T>::Id analysis_kernel_on_tape(Tape<T>& t, typename Tape<T>::Id a0,
                                             typename Tape<T>::Id a1,
                                             std::size_t channels) {
    auto k4 = t.stack_out({t.outer(a0, a0), t.outer(a0, a1), t.outer(a1, a0),
                           t.outer(a1, a1)});
    return channels == 1 ? k4 : t.tile_out(k4, channels);
}

template <typename T>
typename Tape<T>::Id dwt2(Tape<T>& t, typename Tape<T>::Id x, typename Tape<T>::Id a0,
                          typename Tape<T>::Id a1) {
    if (t.value(x).h() % 2 != 0 || t.value(x).w() % 2 != 0)
        throw std::invalid_argument("dwt2: odd spatial dims");
    const std::size_t C = t.value(x).c();
    const int n = int(t.value(a0).numel());
    auto k = analysis_kernel_on_tape(t, a0, a1, C);
    return t.conv2d(x, k, std::nullopt, 2, int(C), Pad2D::circular_lead(n - 2));
}

// Inverse: transposed (adjoint) convolution with the time-reversed synthesis
// filters, which undoes dwt2's stride/padding alignment exactly.
template <typename T>
typename Tape<T>::Id idwt2(Tape<T>& t, typename Tape<T>::Id y, typename Tape<T>::Id s0,
                           typename Tape<T>::Id s1) {
    if (t.value(y).c() % 4 != 0)
        throw std::invalid_argument("idwt2: channel count not divisible by 4");
    const std::size_t C = t.value(y).c() / 4;
    const std::size_t H = t.value(y).h(), W = t.value(y).w();
    const int n = int(t.value(s0).numel());
    auto r0 = t.reverse1d(s0);
    auto r1 = t.reverse1d(s1);
    auto k = analysis_kernel_on_tape(t, r0, r1, C);
    return t.conv2d_transpose(y, k, 2, int(C), Pad2D::circular_lead(n - 2), H * 2,
                              W * 2);
}

// ---- plain (non-recording) wrappers ----

template <typename T>
Tensor<T> dwt2(const Tensor<T>& x, const FilterBank<T>& bank) {
    bank.validate();
    Tape<T> t;
    auto xi = t.leaf(x);
    auto a0 = t.leaf(Tensor<T>({bank.length()}, bank.a0));
    auto a1 = t.leaf(Tensor<T>({bank.length()}, bank.a1));
    return t.value(dwt2(t, xi, a0, a1));
}

template <typename T>
Tensor<T> idwt2(const Tensor<T>& y, const FilterBank<T>& bank) {
    bank.validate();
    Tape<T> t;
    auto yi = t.leaf(y);
    auto s0 = t.leaf(Tensor<T>({bank.length()}, bank.s0));
    auto s1 = t.leaf(Tensor<T>({bank.length()}, bank.s1));
    return t.value(idwt2(t, yi, s0, s1));
}

}  // namespace mlwt

#endif
