#ifndef MLWT_TAPE_HPP
#define MLWT_TAPE_HPP

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mlwt/conv.hpp"
#include "mlwt/tensor.hpp"

namespace mlwt {

// Reverse-mode autodiff over the closed op set the artifact needs.
// Every op records a node; backward() walks the record once, in reverse.
// Tensors are immutable once emitted; node ids index into the tape.
template <typename T>
class Tape {
public:
    using Id = int;

    Id leaf(Tensor<T> v, bool requires_grad = false, std::string name = "leaf") {
        return emit(std::move(v), {}, nullptr, requires_grad, std::move(name));
    }

    const Tensor<T>& value(Id id) const { return nodes_[id].value; }

    // Gradient of the last backward() pass w.r.t. node `id` (zeros if the
    // node was never reached).
    const Tensor<T>& grad(Id id) {
        Node& n = nodes_[id];
        if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    void backward(Id loss) {
        if (consumed_)
            throw std::logic_error("tape: backward called twice without re-recording");
        if (nodes_[loss].value.numel() != 1)
            throw std::invalid_argument("tape: backward requires a scalar loss");
        consumed_ = true;
        accum(loss, Tensor<T>::scalar(T(1)));
        for (Id id = Id(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.back && n.needs_grad && n.grad.numel() != 0) n.back(*this);
        }
    }

    // ---- elementwise ----

    Id add(Id a, Id b) {
        require_same(a, b, "add");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
        return emit(std::move(out), {a, b},
                    [a, b](Tape& t) {
                        t.accum(a, t.out_grad());
                        t.accum(b, t.out_grad());
                    },
                    any_grad({a, b}), "add");
    }

    Id sub(Id a, Id b) {
        require_same(a, b, "sub");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
        return emit(std::move(out), {a, b},
                    [a, b](Tape& t) {
                        t.accum(a, t.out_grad());
                        Tensor<T> g = t.out_grad();
                        for (auto& v : g.data) v = -v;
                        t.accum(b, std::move(g));
                    },
                    any_grad({a, b}), "sub");
    }

    Id mul(Id a, Id b) {
        require_same(a, b, "mul");
        Tensor<T> out = value(a);
        const Tensor<T>& vb = value(b);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
        return emit(std::move(out), {a, b},
                    [a, b](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        Tensor<T> ga = g, gb = g;
                        const Tensor<T>&va = t.value(a), &vb2 = t.value(b);
                        for (std::size_t i = 0; i < g.numel(); ++i) {
                            ga.data[i] *= vb2.data[i];
                            gb.data[i] *= va.data[i];
                        }
                        t.accum(a, std::move(ga));
                        t.accum(b, std::move(gb));
                    },
                    any_grad({a, b}), "mul");
    }

    Id scale(Id a, T s) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v *= s;
        return emit(std::move(out), {a},
                    [a, s](Tape& t) {
                        Tensor<T> g = t.out_grad();
                        for (auto& v : g.data) v *= s;
                        t.accum(a, std::move(g));
                    },
                    any_grad({a}), "scale");
    }

    Id add_scalar(Id a, T s) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v += s;
        return emit(std::move(out), {a},
                    [a](Tape& t) { t.accum(a, t.out_grad()); }, any_grad({a}),
                    "add_scalar");
    }

    Id sum_all(Id a) {
        T s = 0;
        for (auto v : value(a).data) s += v;
        return emit(Tensor<T>::scalar(s), {a},
                    [a](Tape& t) {
                        const T g = t.out_grad().data[0];
                        t.accum(a, Tensor<T>::full(t.value(a).shape, g));
                    },
                    any_grad({a}), "sum_all");
    }

    Id mean_all(Id a) { return scale(sum_all(a), T(1) / T(value(a).numel())); }

    // elementwise log10; callers guarantee positive inputs
    Id log10_(Id a) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v = std::log10(v);
        return emit(std::move(out), {a},
                    [a](Tape& t) {
                        Tensor<T> g = t.out_grad();
                        const Tensor<T>& va = t.value(a);
                        const T c = T(1) / std::log(T(10));
                        for (std::size_t i = 0; i < g.numel(); ++i)
                            g.data[i] *= c / va.data[i];
                        t.accum(a, std::move(g));
                    },
                    any_grad({a}), "log10");
    }

    // ---- convolution ----

    Id conv2d(Id x, Id k, std::optional<Id> bias, int stride, int groups, Pad2D pad) {
        const Tensor<T>& vx = value(x);
        Tensor<T> xp = detail::pad2d(vx, pad);
        const T* bptr = bias ? value(*bias).data.data() : nullptr;
        Tensor<T> out = detail::conv2d_raw(xp, value(k), bptr, stride, groups);
        std::vector<Id> ins = {x, k};
        if (bias) ins.push_back(*bias);
        const std::size_t H = vx.h(), W = vx.w();
        const std::size_t Hp = xp.h(), Wp = xp.w();
        return emit(std::move(out), ins,
                    [x, k, bias, stride, groups, pad, H, W, Hp, Wp](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        if (t.needs(x)) {
                            Tensor<T> gxp = detail::conv2d_input_grad_raw(
                                g, t.value(k), stride, groups, Hp, Wp);
                            t.accum(x, detail::pad2d_adjoint(gxp, pad, H, W));
                        }
                        if (t.needs(k)) {
                            Tensor<T> xp2 = detail::pad2d(t.value(x), pad);
                            t.accum(k, detail::conv2d_kernel_grad_raw(
                                           xp2, g, t.value(k).shape, stride, groups));
                        }
                        if (bias && t.needs(*bias)) {
                            Tensor<T> gb(t.value(*bias).shape);
                            for (std::size_t b = 0; b < g.b(); ++b)
                                for (std::size_t oc = 0; oc < g.c(); ++oc) {
                                    T acc = 0;
                                    const T* p = &g.at(b, oc, 0, 0);
                                    for (std::size_t i = 0; i < g.h() * g.w(); ++i)
                                        acc += p[i];
                                    gb.data[oc] += acc;
                                }
                            t.accum(*bias, std::move(gb));
                        }
                    },
                    any_grad(ins), "conv2d");
    }

    // Exact adjoint of conv2d(., k, stride, groups, pad) for the same kernel.
    Id conv2d_transpose(Id y, Id k, int stride, int groups, Pad2D pad,
                        std::size_t H_out, std::size_t W_out) {
        const Tensor<T>& vy = value(y);
        const std::size_t Hp = H_out + pad.total(), Wp = W_out + pad.total();
        Tensor<T> gxp =
            detail::conv2d_input_grad_raw(vy, value(k), stride, groups, Hp, Wp);
        Tensor<T> out = detail::pad2d_adjoint(gxp, pad, H_out, W_out);
        return emit(std::move(out), {y, k},
                    [y, k, stride, groups, pad](Tape& t) {
                        // <conv(x,k), y> = <x, convT(y,k)>: grad_y is a forward
                        // conv of the output gradient, grad_k mirrors conv2d's
                        // kernel gradient with roles swapped.
                        Tensor<T> gp = detail::pad2d(t.out_grad(), pad);
                        if (t.needs(y))
                            t.accum(y, detail::conv2d_raw(gp, t.value(k),
                                                          static_cast<const T*>(nullptr),
                                                          stride, groups));
                        if (t.needs(k))
                            t.accum(k, detail::conv2d_kernel_grad_raw(
                                           gp, t.value(y), t.value(k).shape, stride,
                                           groups));
                    },
                    any_grad({y, k}), "conv2d_transpose");
    }

    // ---- resampling ----

    Id avgpool2(Id a) {
        const Tensor<T>& v = value(a);
        if (v.h() % 2 != 0 || v.w() % 2 != 0)
            throw std::invalid_argument("avgpool2: odd spatial dims");
        Tensor<T> out({v.b(), v.c(), v.h() / 2, v.w() / 2});
        for (std::size_t b = 0; b < v.b(); ++b)
            for (std::size_t c = 0; c < v.c(); ++c)
                for (std::size_t y = 0; y < out.h(); ++y)
                    for (std::size_t x = 0; x < out.w(); ++x)
                        out.at(b, c, y, x) =
                            (v.at(b, c, 2 * y, 2 * x) + v.at(b, c, 2 * y, 2 * x + 1) +
                             v.at(b, c, 2 * y + 1, 2 * x) +
                             v.at(b, c, 2 * y + 1, 2 * x + 1)) /
                            T(4);
        return emit(std::move(out), {a},
                    [a](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        Tensor<T> gx(t.value(a).shape);
                        for (std::size_t b = 0; b < g.b(); ++b)
                            for (std::size_t c = 0; c < g.c(); ++c)
                                for (std::size_t y = 0; y < g.h(); ++y)
                                    for (std::size_t x = 0; x < g.w(); ++x) {
                                        const T q = g.at(b, c, y, x) / T(4);
                                        gx.at(b, c, 2 * y, 2 * x) = q;
                                        gx.at(b, c, 2 * y, 2 * x + 1) = q;
                                        gx.at(b, c, 2 * y + 1, 2 * x) = q;
                                        gx.at(b, c, 2 * y + 1, 2 * x + 1) = q;
                                    }
                        t.accum(a, std::move(gx));
                    },
                    any_grad({a}), "avgpool2");
    }

    Id upsample2(Id a) {
        const Tensor<T>& v = value(a);
        Tensor<T> out({v.b(), v.c(), v.h() * 2, v.w() * 2});
        for (std::size_t b = 0; b < v.b(); ++b)
            for (std::size_t c = 0; c < v.c(); ++c)
                for (std::size_t y = 0; y < out.h(); ++y)
                    for (std::size_t x = 0; x < out.w(); ++x)
                        out.at(b, c, y, x) = v.at(b, c, y / 2, x / 2);
        return emit(std::move(out), {a},
                    [a](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        Tensor<T> gx(t.value(a).shape);
                        for (std::size_t b = 0; b < g.b(); ++b)
                            for (std::size_t c = 0; c < g.c(); ++c)
                                for (std::size_t y = 0; y < g.h(); ++y)
                                    for (std::size_t x = 0; x < g.w(); ++x)
                                        gx.at(b, c, y / 2, x / 2) += g.at(b, c, y, x);
                        t.accum(a, std::move(gx));
                    },
                    any_grad({a}), "upsample2");
    }

    // ---- normalization / gating ----

    // Per spatial position: normalize across channels (eps 1e-6), then affine.
    Id layernorm_ch(Id x, Id gain, Id bias) {
        const Tensor<T>& v = value(x);
        const std::size_t B = v.b(), C = v.c(), H = v.h(), W = v.w();
        const T eps = T(1e-6);
        Tensor<T> out(v.shape);
        const Tensor<T>&g = value(gain), &bi = value(bias);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    T mu = 0;
                    for (std::size_t c = 0; c < C; ++c) mu += v.at(b, c, y, xx);
                    mu /= T(C);
                    T var = 0;
                    for (std::size_t c = 0; c < C; ++c) {
                        const T d = v.at(b, c, y, xx) - mu;
                        var += d * d;
                    }
                    var /= T(C);
                    const T inv = T(1) / std::sqrt(var + eps);
                    for (std::size_t c = 0; c < C; ++c)
                        out.at(b, c, y, xx) =
                            (v.at(b, c, y, xx) - mu) * inv * g.data[c] + bi.data[c];
                }
        return emit(std::move(out), {x, gain, bias},
                    [x, gain, bias, eps](Tape& t) {
                        const Tensor<T>& go = t.out_grad();
                        const Tensor<T>& v = t.value(x);
                        const Tensor<T>& g = t.value(gain);
                        const std::size_t B = v.b(), C = v.c(), H = v.h(), W = v.w();
                        Tensor<T> gx(v.shape), gg({C}), gb({C});
                        for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t y = 0; y < H; ++y)
                                for (std::size_t xx = 0; xx < W; ++xx) {
                                    T mu = 0;
                                    for (std::size_t c = 0; c < C; ++c)
                                        mu += v.at(b, c, y, xx);
                                    mu /= T(C);
                                    T var = 0;
                                    for (std::size_t c = 0; c < C; ++c) {
                                        const T d = v.at(b, c, y, xx) - mu;
                                        var += d * d;
                                    }
                                    var /= T(C);
                                    const T inv = T(1) / std::sqrt(var + eps);
                                    T m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat*xhat)
                                    for (std::size_t c = 0; c < C; ++c) {
                                        const T xhat = (v.at(b, c, y, xx) - mu) * inv;
                                        const T dxhat = go.at(b, c, y, xx) * g.data[c];
                                        gg.data[c] += go.at(b, c, y, xx) * xhat;
                                        gb.data[c] += go.at(b, c, y, xx);
                                        m1 += dxhat;
                                        m2 += dxhat * xhat;
                                    }
                                    m1 /= T(C);
                                    m2 /= T(C);
                                    for (std::size_t c = 0; c < C; ++c) {
                                        const T xhat = (v.at(b, c, y, xx) - mu) * inv;
                                        const T dxhat = go.at(b, c, y, xx) * g.data[c];
                                        gx.at(b, c, y, xx) =
                                            inv * (dxhat - m1 - xhat * m2);
                                    }
                                }
                        t.accum(x, std::move(gx));
                        t.accum(gain, std::move(gg));
                        t.accum(bias, std::move(gb));
                    },
                    any_grad({x, gain, bias}), "layernorm_ch");
    }

    // Elementwise product of the two channel halves (activation-free gate).
    Id simple_gate(Id a) {
        const Tensor<T>& v = value(a);
        if (v.c() % 2 != 0)
            throw std::invalid_argument("simple_gate: odd channel count");
        const std::size_t C2 = v.c() / 2, HW = v.h() * v.w();
        Tensor<T> out({v.b(), C2, v.h(), v.w()});
        for (std::size_t b = 0; b < v.b(); ++b)
            for (std::size_t c = 0; c < C2; ++c) {
                const T* p = &v.at(b, c, 0, 0);
                const T* q = &v.at(b, c + C2, 0, 0);
                T* o = &out.at(b, c, 0, 0);
                for (std::size_t i = 0; i < HW; ++i) o[i] = p[i] * q[i];
            }
        return emit(std::move(out), {a},
                    [a](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        const Tensor<T>& v = t.value(a);
                        const std::size_t C2 = v.c() / 2, HW = v.h() * v.w();
                        Tensor<T> gx(v.shape);
                        for (std::size_t b = 0; b < v.b(); ++b)
                            for (std::size_t c = 0; c < C2; ++c) {
                                const T* p = &v.at(b, c, 0, 0);
                                const T* q = &v.at(b, c + C2, 0, 0);
                                const T* gr = &g.at(b, c, 0, 0);
                                T* g1 = &gx.at(b, c, 0, 0);
                                T* g2 = &gx.at(b, c + C2, 0, 0);
                                for (std::size_t i = 0; i < HW; ++i) {
                                    g1[i] = gr[i] * q[i];
                                    g2[i] = gr[i] * p[i];
                                }
                            }
                        t.accum(a, std::move(gx));
                    },
                    any_grad({a}), "simple_gate");
    }

    // ---- 1D helpers for filter-bank construction ----

    // outer product of two rank-1 vectors as a (1,1,N,M) kernel slice
    Id outer(Id u, Id v) {
        const Tensor<T>&vu = value(u), &vv = value(v);
        const std::size_t N = vu.numel(), M = vv.numel();
        Tensor<T> out({1, 1, N, M});
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < M; ++j)
                out.data[i * M + j] = vu.data[i] * vv.data[j];
        return emit(std::move(out), {u, v},
                    [u, v](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        const Tensor<T>&vu = t.value(u), &vv = t.value(v);
                        const std::size_t N = vu.numel(), M = vv.numel();
                        Tensor<T> gu({N}), gv({M});
                        for (std::size_t i = 0; i < N; ++i)
                            for (std::size_t j = 0; j < M; ++j) {
                                gu.data[i] += g.data[i * M + j] * vv.data[j];
                                gv.data[j] += g.data[i * M + j] * vu.data[i];
                            }
                        t.accum(u, std::move(gu));
                        t.accum(v, std::move(gv));
                    },
                    any_grad({u, v}), "outer");
    }

    // stack (1,1,kh,kw) slices along the output-channel axis
    Id stack_out(const std::vector<Id>& parts) {
        const Tensor<T>& first = value(parts[0]);
        const std::size_t per = first.numel();
        Tensor<T> out({parts.size(), first.shape[1], first.shape[2], first.shape[3]});
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const Tensor<T>& v = value(parts[p]);
            if (v.numel() != per)
                throw std::invalid_argument("stack_out: mismatched slice shapes");
            std::copy(v.data.begin(), v.data.end(), out.data.begin() + p * per);
        }
        auto ins = parts;
        return emit(std::move(out), ins,
                    [ins, per](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        for (std::size_t p = 0; p < ins.size(); ++p) {
                            Tensor<T> gp(t.value(ins[p]).shape);
                            std::copy(g.data.begin() + p * per,
                                      g.data.begin() + (p + 1) * per, gp.data.begin());
                            t.accum(ins[p], std::move(gp));
                        }
                    },
                    any_grad(ins), "stack_out");
    }

    // repeat a (K,ICG,kh,kw) kernel block `times` times along output channels
    Id tile_out(Id k, std::size_t times) {
        const Tensor<T>& v = value(k);
        Tensor<T> out({v.shape[0] * times, v.shape[1], v.shape[2], v.shape[3]});
        for (std::size_t r = 0; r < times; ++r)
            std::copy(v.data.begin(), v.data.end(), out.data.begin() + r * v.numel());
        return emit(std::move(out), {k},
                    [k, times](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        Tensor<T> gk(t.value(k).shape);
                        const std::size_t per = gk.numel();
                        for (std::size_t r = 0; r < times; ++r)
                            for (std::size_t i = 0; i < per; ++i)
                                gk.data[i] += g.data[r * per + i];
                        t.accum(k, std::move(gk));
                    },
                    any_grad({k}), "tile_out");
    }

    Id reverse1d(Id a) {
        Tensor<T> out = value(a);
        std::reverse(out.data.begin(), out.data.end());
        return emit(std::move(out), {a},
                    [a](Tape& t) {
                        Tensor<T> g = t.out_grad();
                        std::reverse(g.data.begin(), g.data.end());
                        t.accum(a, std::move(g));
                    },
                    any_grad({a}), "reverse1d");
    }

    // v[n] * (-1)^n -- the z -> -z substitution on filter coefficients
    Id alternate_sign(Id a) {
        Tensor<T> out = value(a);
        for (std::size_t i = 1; i < out.numel(); i += 2) out.data[i] = -out.data[i];
        return emit(std::move(out), {a},
                    [a](Tape& t) {
                        Tensor<T> g = t.out_grad();
                        for (std::size_t i = 1; i < g.numel(); i += 2)
                            g.data[i] = -g.data[i];
                        t.accum(a, std::move(g));
                    },
                    any_grad({a}), "alternate_sign");
    }

    // full linear convolution of two rank-1 vectors (z-transform product)
    Id poly_product(Id u, Id v) {
        const Tensor<T>&vu = value(u), &vv = value(v);
        const std::size_t N = vu.numel(), M = vv.numel();
        Tensor<T> out({N + M - 1});
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < M; ++j)
                out.data[i + j] += vu.data[i] * vv.data[j];
        return emit(std::move(out), {u, v},
                    [u, v](Tape& t) {
                        const Tensor<T>& g = t.out_grad();
                        const Tensor<T>&vu = t.value(u), &vv = t.value(v);
                        const std::size_t N = vu.numel(), M = vv.numel();
                        Tensor<T> gu({N}), gv({M});
                        for (std::size_t i = 0; i < N; ++i)
                            for (std::size_t j = 0; j < M; ++j) {
                                gu.data[i] += g.data[i + j] * vv.data[j];
                                gv.data[j] += g.data[i + j] * vu.data[i];
                            }
                        t.accum(u, std::move(gu));
                        t.accum(v, std::move(gv));
                    },
                    any_grad({u, v}), "poly_product");
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    void accum(Id id, Tensor<T> g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.numel() == 0) {
            n.grad = std::move(g);
        } else {
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                n.grad.data[i] += g.data[i];
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        std::string name;
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes_;
    bool consumed_ = false;
    Id current_ = -1;  // node whose backward closure is running

    bool needs(Id id) const { return nodes_[id].needs_grad; }
    bool any_grad(const std::vector<Id>& ids) const {
        for (Id i : ids)
            if (nodes_[i].needs_grad) return true;
        return false;
    }

    const Tensor<T>& out_grad() const { return nodes_[current_].grad; }

    void require_same(Id a, Id b, const char* op) const {
        if (!value(a).same_shape(value(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    Id emit(Tensor<T> v, std::vector<Id> inputs, std::function<void(Tape&)> back,
            bool needs_grad, std::string name) {
        for (const T x : v.data)
            if (!std::isfinite(double(x)))
                throw std::runtime_error("non-finite value produced by op '" + name +
                                         "'");
        (void)inputs;
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        n.name = std::move(name);
        if (needs_grad && back) {
            const Id self = Id(nodes_.size());
            n.back = [self, fn = std::move(back)](Tape& t) {
                const Id prev = t.current_;
                t.current_ = self;
                fn(t);
                t.current_ = prev;
            };
        }
        nodes_.push_back(std::move(n));
        return Id(nodes_.size()) - 1;
    }
};

}  // namespace mlwt

#endif
