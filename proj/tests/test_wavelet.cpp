#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "mlwt/gradcheck.hpp"
#include "mlwt/losses.hpp"
#include "mlwt/rng.hpp"
#include "mlwt/wavelet.hpp"

using namespace mlwt;

namespace {

Tensor<double> random_image(std::vector<std::size_t> shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-1, 1);
    return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double norm2(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("analysis kernel outer products") {
    FilterBank<double> b{{1, 0}, {0, 1}, {1, 0}, {0, 1}, false};
    auto k = build_analysis_kernel(b);
    REQUIRE(k.f_ll == std::vector<std::vector<double>>{{1, 0}, {0, 0}});
    REQUIRE(k.f_lh == std::vector<std::vector<double>>{{0, 1}, {0, 0}});
    REQUIRE(k.f_hl == std::vector<std::vector<double>>{{0, 0}, {1, 0}});
    REQUIRE(k.f_hh == std::vector<std::vector<double>>{{0, 0}, {0, 1}});

    // swapping a0 and a1 swaps LL with HH and LH with HL
    FilterBank<double> sw{b.a1, b.a0, b.s0, b.s1, false};
    auto ks = build_analysis_kernel(sw);
    REQUIRE(ks.f_ll == k.f_hh);
    REQUIRE(ks.f_lh == k.f_hl);
}

TEST_CASE("Haar LL kernel is 0.5 everywhere") {
    auto k = build_analysis_kernel(haar<double>());
    for (const auto& row : k.f_ll)
        for (double v : row) REQUIRE(v == Catch::Approx(0.5));
    auto ks = build_synthesis_kernel(haar<double>());
    for (const auto& row : ks.f_ll)
        for (double v : row) REQUIRE(v == Catch::Approx(0.5));
}

TEST_CASE("dwt1 hand values with Haar") {
    const auto bank = haar<double>();
    const double r2 = std::sqrt(2.0);
    auto flat = dwt1<double>({1, 1, 1, 1}, bank);
    REQUIRE(flat.approx[0] == Catch::Approx(r2));
    REQUIRE(flat.approx[1] == Catch::Approx(r2));
    REQUIRE(flat.detail[0] == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(flat.detail[1] == Catch::Approx(0.0).margin(1e-15));

    auto alt = dwt1<double>({1, -1, 1, -1}, bank);
    REQUIRE(alt.approx[0] == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(alt.detail[0] == Catch::Approx(r2));
    REQUIRE(alt.detail[1] == Catch::Approx(r2));

    REQUIRE_THROWS_AS(dwt1<double>({1, 2, 3}, bank), std::invalid_argument);
}

TEST_CASE("dwt1 linearity") {
    Rng rng(1);
    const auto bank = db2<double>();
    std::vector<double> x(16), y(16), z(16);
    for (std::size_t i = 0; i < 16; ++i) {
        x[i] = rng.uniform(-1, 1);
        y[i] = rng.uniform(-1, 1);
        z[i] = 2.5 * x[i] - 0.75 * y[i];
    }
    auto dx = dwt1(x, bank), dy = dwt1(y, bank), dz = dwt1(z, bank);
    for (std::size_t i = 0; i < 8; ++i) {
        REQUIRE(dz.approx[i] == Catch::Approx(2.5 * dx.approx[i] - 0.75 * dy.approx[i]));
        REQUIRE(dz.detail[i] == Catch::Approx(2.5 * dx.detail[i] - 0.75 * dy.detail[i]));
    }
}

TEST_CASE("dwt2 of a constant image") {
    const auto bank = haar<double>();
    Tensor<double> x = Tensor<double>::full({1, 1, 8, 8}, 0.7);
    Tensor<double> y = dwt2(x, bank);
    REQUIRE(y.shape == std::vector<std::size_t>{1, 4, 4, 4});
    for (std::size_t yy = 0; yy < 4; ++yy)
        for (std::size_t xx = 0; xx < 4; ++xx) {
            REQUIRE(y.at(0, 0, yy, xx) == Catch::Approx(1.4));  // LL = 2v
            REQUIRE(y.at(0, 1, yy, xx) == Catch::Approx(0.0).margin(1e-14));
            REQUIRE(y.at(0, 2, yy, xx) == Catch::Approx(0.0).margin(1e-14));
            REQUIRE(y.at(0, 3, yy, xx) == Catch::Approx(0.0).margin(1e-14));
        }
}

TEST_CASE("directional selectivity under Haar") {
    const auto bank = haar<double>();
    Tensor<double> stripes({1, 1, 8, 8});
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            stripes.at(0, 0, y, x) = (x % 2 == 0) ? 1.0 : -1.0;  // varies along W only
    Tensor<double> w = dwt2(stripes, bank);
    double lh = 0, hl = 0;
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            lh += std::abs(w.at(0, 1, y, x));
            hl += std::abs(w.at(0, 2, y, x));
        }
    REQUIRE(lh > 1.0);                                // LH carries the energy
    REQUIRE(hl == Catch::Approx(0.0).margin(1e-14));  // HL silent

    // transpose: varies along H only -> LH silent
    Tensor<double> rows({1, 1, 8, 8});
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            rows.at(0, 0, y, x) = (y % 2 == 0) ? 1.0 : -1.0;
    Tensor<double> w2 = dwt2(rows, bank);
    double lh2 = 0;
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) lh2 += std::abs(w2.at(0, 1, y, x));
    REQUIRE(lh2 == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("dwt2 equals nested dwt1 over rows then columns") {
    Rng rng(9);
    for (const auto& bank : {haar<double>(), db2<double>()}) {
        Tensor<double> x = random_image({1, 1, 8, 8}, rng);
        Tensor<double> y = dwt2(x, bank);

        // oracle: 1D transform of every row, then of every column
        const std::size_t H = 8, W = 8;
        std::vector<std::vector<double>> lo(H), hi(H);
        for (std::size_t r = 0; r < H; ++r) {
            std::vector<double> row(W);
            for (std::size_t c = 0; c < W; ++c) row[c] = x.at(0, 0, r, c);
            auto sb = dwt1(row, bank);
            lo[r] = sb.approx;
            hi[r] = sb.detail;
        }
        for (std::size_t c = 0; c < W / 2; ++c) {
            std::vector<double> col_lo(H), col_hi(H);
            for (std::size_t r = 0; r < H; ++r) {
                col_lo[r] = lo[r][c];
                col_hi[r] = hi[r][c];
            }
            auto sl = dwt1(col_lo, bank);  // approx -> LL, detail -> HL
            auto sh = dwt1(col_hi, bank);  // approx -> LH, detail -> HH
            for (std::size_t r = 0; r < H / 2; ++r) {
                REQUIRE(std::abs(y.at(0, 0, r, c) - sl.approx[r]) < 1e-12);
                REQUIRE(std::abs(y.at(0, 1, r, c) - sh.approx[r]) < 1e-12);
                REQUIRE(std::abs(y.at(0, 2, r, c) - sl.detail[r]) < 1e-12);
                REQUIRE(std::abs(y.at(0, 3, r, c) - sh.detail[r]) < 1e-12);
            }
        }
    }
}

TEST_CASE("perfect reconstruction round-trips") {
    Rng rng(17);
    for (const auto& bank : {haar<double>(), db2<double>(), haar_padded<double>(4)}) {
        Tensor<double> x = random_image({2, 3, 16, 16}, rng);
        Tensor<double> rec = idwt2(dwt2(x, bank), bank);
        REQUIRE(max_abs_diff(rec, x) < 1e-12);
    }
    // f32 path
    Rng rng2(18);
    FilterBank<float> hb = bank_cast<float>(haar<double>());
    Tensor<float> xf({2, 3, 16, 16});
    for (auto& v : xf.data) v = float(rng2.uniform(0, 1));
    Tensor<float> recf = idwt2(dwt2(xf, hb), hb);
    float m = 0;
    for (std::size_t i = 0; i < xf.numel(); ++i)
        m = std::max(m, std::abs(recf.data[i] - xf.data[i]));
    REQUIRE(m < 1e-6f);
}

TEST_CASE("zero wavelet tensor reconstructs to zero") {
    Tensor<double> z({1, 4, 4, 4});
    Tensor<double> img = idwt2(z, haar<double>());
    for (double v : img.data) REQUIRE(v == 0.0);
    REQUIRE_THROWS_AS(idwt2(Tensor<double>({1, 3, 4, 4}), haar<double>()),
                      std::invalid_argument);
}

TEST_CASE("any low-loss bank reconstructs") {
    // perturb Haar, project back by a few steps of the loss itself being
    // tiny; here: rotate the pair by mixing, which keeps the loss at zero
    FilterBank<double> b = haar_padded<double>(4);
    REQUIRE(wavelet_loss(b) < 1e-10);
    Rng rng(21);
    Tensor<double> x = random_image({1, 2, 16, 16}, rng);
    REQUIRE(max_abs_diff(idwt2(dwt2(x, b), b), x) < 1e-5);
}

TEST_CASE("energy ratio constant for orthogonal banks") {
    Rng rng(25);
    const auto bank = db2<double>();
    double first = 0;
    for (int trial = 0; trial < 4; ++trial) {
        Tensor<double> x = random_image({1, 1, 16, 16}, rng);
        Tensor<double> y = dwt2(x, bank);
        const double ratio = norm2(y.data) / norm2(x.data);
        if (trial == 0) first = ratio;
        REQUIRE(ratio == Catch::Approx(first).epsilon(1e-10));
    }
}

TEST_CASE("poly_product") {
    REQUIRE(poly_product<double>({1, 1}, {1, 1}) == std::vector<double>{1, 2, 1});
    REQUIRE(poly_product<double>({1}, {3, -2, 5}) == std::vector<double>{3, -2, 5});
    const auto h = haar<double>();
    auto p = poly_product(h.a0, h.s0);
    auto q = poly_product(h.a1, h.s1);
    for (std::size_t i = 0; i < 3; ++i) p[i] += q[i];
    REQUIRE(p[0] == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(p[1] == Catch::Approx(2.0));
    REQUIRE(p[2] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("classical fixtures satisfy both conditions") {
    REQUIRE(wavelet_loss(haar<double>()) < 1e-10);
    REQUIRE(wavelet_loss(db2<double>()) < 1e-10);
    REQUIRE(wavelet_loss(haar_padded<double>(6)) < 1e-10);
}

TEST_CASE("gradient flows through the bank") {
    Rng rng(33);
    Tensor<double> a0({4}), a1({4}), s0({4}), s1({4});
    for (auto* v : {&a0, &a1, &s0, &s1})
        for (auto& x : v->data) x = rng.uniform(-1, 1);
    auto f = [](Tape<double>& t, const std::vector<int>& p) {
        return wavelet_loss(t, p[0], p[1], p[2], p[3]);
    };
    REQUIRE(grad_check(f, {a0, a1, s0, s1}, 1e-6, 4) < 1e-6);

    // d(wavelet_loss)/da0 is nonzero away from the optimum
    Tape<double> t;
    auto ia0 = t.leaf(a0, true);
    auto ia1 = t.leaf(a1, true);
    auto is0 = t.leaf(s0, true);
    auto is1 = t.leaf(s1, true);
    t.backward(wavelet_loss(t, ia0, ia1, is0, is1));
    double g = 0;
    for (double v : t.grad(ia0).data) g += std::abs(v);
    REQUIRE(g > 0);
}

TEST_CASE("dwt2 is differentiable w.r.t. image and filters") {
    Rng rng(35);
    Tensor<double> x = random_image({1, 2, 8, 8}, rng);
    Tensor<double> a0({4}), a1({4});
    for (auto* v : {&a0, &a1})
        for (auto& q : v->data) q = rng.uniform(-1, 1);
    auto f = [](Tape<double>& t, const std::vector<int>& p) {
        auto y = dwt2(t, p[0], p[1], p[2]);
        return t.sum_all(t.mul(y, y));
    };
    REQUIRE(grad_check(f, {x, a0, a1}, 1e-5, 10) < 1e-4);
}

TEST_CASE("bank text format round-trip") {
    auto b = db2<double>();
    const std::string path = std::filesystem::temp_directory_path() / "mlwt_bank.txt";
    save_bank(path, b);
    auto r = load_bank<double>(path);
    REQUIRE(r.a0 == b.a0);
    REQUIRE(r.a1 == b.a1);
    REQUIRE(r.s0 == b.s0);
    REQUIRE(r.s1 == b.s1);
    std::filesystem::remove(path);
}
