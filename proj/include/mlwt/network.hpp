#ifndef MLWT_NETWORK_HPP
#define MLWT_NETWORK_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mlwt/losses.hpp"
#include "mlwt/rng.hpp"
#include "mlwt/tape.hpp"
#include "mlwt/wavelet.hpp"

namespace mlwt {

struct NetworkConfig {
    int base_width = 16;
    int scales = 3;            // S >= 2
    int blocks_per_stage = 1;  // encoder SEBs per scale
    int r = 2;                 // LWN depthwise expansion factor
    int filter_len = 4;        // wavelet filter length N
    bool train_mode = true;

    int width(int s) const { return base_width << (s - 1); }

    void validate() const {
        if (base_width < 2 || base_width % 2 != 0)
            throw std::invalid_argument("config: base_width must be even and >= 2");
        if (scales < 2) throw std::invalid_argument("config: scales must be >= 2");
        if (blocks_per_stage < 1 || r < 1)
            throw std::invalid_argument("config: block count and r must be positive");
        if (filter_len < 2 || filter_len % 2 != 0)
            throw std::invalid_argument("config: filter_len must be even and >= 2");
    }
};

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
};

// Coarse-to-fine SIMO restoration network: SEB encoder, WFB fusion, WHB
// decoder with per-scale heads, residual against the (downsampled) input.
template <typename T>
class MlwNet {
public:
    using Id = typename Tape<T>::Id;

    struct ConvRef {
        int w = -1, b = -1;
        int stride = 1, groups = 1;
        Pad2D pad{};
    };
    struct LnRef {
        int gain = -1, bias = -1;
    };
    struct LwnRef {
        std::array<int, 4> bank{};  // a0, a1, s0, s1
        ConvRef pw1, dw, pw2;
        std::string name;
    };
    struct BlockRef {
        LnRef ln;
        ConvRef pw_in;
        bool has_lwn = false;
        LwnRef lwn;
        ConvRef dw;  // SEB only
        ConvRef pw_out;
    };

    NetworkConfig cfg;
    std::vector<Param<T>> params;
    std::vector<std::array<int, 4>> bank_params;  // one entry per LWN

    ConvRef embed;
    std::vector<std::vector<BlockRef>> enc_stages;  // [s-1][blk]
    std::vector<ConvRef> enc_down;                  // after stage s (s = 1..S-1)
    ConvRef fusion_align;                           // E_{S-1} -> scale S join
    std::vector<BlockRef> fusion;                   // WFB, index s-2 for s = 2..S
    std::vector<ConvRef> fusion_up;                 // F_{s+1} -> F_s join, index s-2
    std::vector<BlockRef> decoder;                  // WHB, index s-1 for s = 1..S
    std::vector<ConvRef> dec_up;                    // D_{s+1} -> D_s join, index s-1
    ConvRef fusion_to_scale1;                       // F_2 -> D_1 join
    std::vector<ConvRef> heads;                     // index s-1

    MlwNet(NetworkConfig c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        Rng rng(seed);
        const int S = cfg.scales;
        embed = make_conv(rng, "embed", 3, cfg.width(1), 3, 1, 1, Pad2D::zero(1), false);
        enc_stages.resize(S);
        for (int s = 1; s <= S; ++s) {
            for (int b = 0; b < cfg.blocks_per_stage; ++b)
                enc_stages[s - 1].push_back(make_block(
                    rng, "enc" + std::to_string(s) + ".blk" + std::to_string(b),
                    cfg.width(s), false));
            if (s < S)
                enc_down.push_back(make_conv(rng, "down" + std::to_string(s),
                                             cfg.width(s), cfg.width(s + 1), 1, 1, 1,
                                             Pad2D{}, false));
        }
        fusion_align = make_conv(rng, "fusion_align", cfg.width(S - 1), cfg.width(S),
                                 1, 1, 1, Pad2D{}, false);
        for (int s = 2; s <= S; ++s) {
            fusion.push_back(make_block(rng, "fus" + std::to_string(s), cfg.width(s), true));
            if (s < S)
                fusion_up.push_back(make_conv(rng, "fus_up" + std::to_string(s),
                                              cfg.width(s + 1), cfg.width(s), 1, 1, 1,
                                              Pad2D{}, false));
        }
        for (int s = 1; s <= S; ++s) {
            decoder.push_back(make_block(rng, "dec" + std::to_string(s), cfg.width(s), true));
            if (s < S)
                dec_up.push_back(make_conv(rng, "dec_up" + std::to_string(s),
                                           cfg.width(s + 1), cfg.width(s), 1, 1, 1,
                                           Pad2D{}, false));
        }
        fusion_to_scale1 = make_conv(rng, "fus_to1", cfg.width(2), cfg.width(1), 1, 1,
                                     1, Pad2D{}, false);
        for (int s = 1; s <= S; ++s)
            heads.push_back(make_conv(rng, "head" + std::to_string(s), cfg.width(s), 3,
                                      3, 1, 1, Pad2D::zero(1), true));
    }

    std::vector<Id> bind(Tape<T>& t, bool requires_grad) const {
        std::vector<Id> ids;
        ids.reserve(params.size());
        for (const auto& p : params) ids.push_back(t.leaf(p.value, requires_grad, p.name));
        return ids;
    }

    // ---- block forwards ----

    Id lwn_forward(Tape<T>& t, const std::vector<Id>& P, const LwnRef& l, Id x) const {
        auto w = dwt2(t, x, P[l.bank[0]], P[l.bank[1]]);
        w = conv(t, P, l.pw1, w);
        w = conv(t, P, l.dw, w);
        w = conv(t, P, l.pw2, w);
        return idwt2(t, w, P[l.bank[2]], P[l.bank[3]]);
    }

    Id block_forward(Tape<T>& t, const std::vector<Id>& P, const BlockRef& blk, Id x) const {
        auto u = t.layernorm_ch(x, P[blk.ln.gain], P[blk.ln.bias]);
        u = conv(t, P, blk.pw_in, u);
        u = blk.has_lwn ? lwn_forward(t, P, blk.lwn, u) : conv(t, P, blk.dw, u);
        u = t.simple_gate(u);
        u = conv(t, P, blk.pw_out, u);
        return t.add(x, u);
    }

    Id seb_forward(Tape<T>& t, const std::vector<Id>& P, const BlockRef& b, Id x) const {
        return block_forward(t, P, b, x);
    }
    Id wfb_forward(Tape<T>& t, const std::vector<Id>& P, const BlockRef& b, Id x) const {
        return block_forward(t, P, b, x);
    }
    // WHB body is a WFB; the per-scale head is applied by the caller.
    Id whb_forward(Tape<T>& t, const std::vector<Id>& P, const BlockRef& b, Id x) const {
        return block_forward(t, P, b, x);
    }

    // Returns restored images per scale (fine -> coarse); inference mode
    // produces only the full-resolution image.
    std::vector<Id> forward(Tape<T>& t, const std::vector<Id>& P, Id x,
                            bool train_mode) const {
        const Tensor<T>& vx = t.value(x);
        const int S = cfg.scales;
        const std::size_t div = std::size_t(1) << S;
        if (vx.h() % div != 0 || vx.w() % div != 0)
            throw std::invalid_argument("forward: H, W must be divisible by 2^S");

        // encoder
        std::vector<Id> E(S + 1, -1);
        Id cur = conv(t, P, embed, x);
        for (int s = 1; s <= S; ++s) {
            if (s > 1) cur = conv(t, P, enc_down[s - 2], t.avgpool2(cur));
            for (const auto& blk : enc_stages[s - 1]) cur = seb_forward(t, P, blk, cur);
            E[s] = cur;
        }

        // fusion, coarse to fine (down to scale 2)
        std::vector<Id> F(S + 1, -1);
        F[S] = wfb_forward(t, P, fusion[S - 2],
                           t.add(E[S], conv(t, P, fusion_align, t.avgpool2(E[S - 1]))));
        for (int s = S - 1; s >= 2; --s)
            F[s] = wfb_forward(t, P, fusion[s - 2],
                               t.add(conv(t, P, fusion_up[s - 2], t.upsample2(F[s + 1])),
                                     E[s]));

        // decoder, coarse to fine
        std::vector<Id> D(S + 1, -1);
        D[S] = whb_forward(t, P, decoder[S - 1], E[S]);
        for (int s = S - 1; s >= 2; --s)
            D[s] = whb_forward(t, P, decoder[s - 1],
                               t.add(conv(t, P, dec_up[s - 1], t.upsample2(D[s + 1])),
                                     F[s]));
        D[1] = whb_forward(
            t, P, decoder[0],
            t.add(t.add(conv(t, P, dec_up[0], t.upsample2(D[2])),
                        conv(t, P, fusion_to_scale1, t.upsample2(F[2]))),
                  E[1]));

        // per-scale heads, residual against the downsampled input
        std::vector<Id> out;
        Id res = x;
        for (int s = 1; s <= S; ++s) {
            if (s > 1) {
                if (!train_mode) break;
                res = t.avgpool2(res);
            }
            out.push_back(t.add(conv(t, P, heads[s - 1], D[s]), res));
        }
        return out;
    }

    // convenience: non-recording inference on a plain tensor
    Tensor<T> restore(const Tensor<T>& x) const {
        Tape<T> t;
        auto P = bind(t, false);
        auto xs = forward(t, P, t.leaf(x), false);
        return t.value(xs[0]);
    }

    // crafted inner weights that make an LWN the identity map (given a
    // perfect-reconstruction bank): identity channel embedding around a
    // centered depthwise delta
    void set_lwn_identity(LwnRef& l) {
        Tensor<T>& w1 = params[l.pw1.w].value;
        std::fill(w1.data.begin(), w1.data.end(), T(0));
        const std::size_t c4 = w1.shape[1];
        for (std::size_t i = 0; i < c4; ++i) w1.at(i, i, 0, 0) = T(1);
        Tensor<T>& dw = params[l.dw.w].value;
        std::fill(dw.data.begin(), dw.data.end(), T(0));
        for (std::size_t i = 0; i < dw.shape[0]; ++i) dw.at(i, 0, 1, 1) = T(1);
        Tensor<T>& w2 = params[l.pw2.w].value;
        std::fill(w2.data.begin(), w2.data.end(), T(0));
        for (std::size_t i = 0; i < c4; ++i) w2.at(i, i, 0, 0) = T(1);
        std::fill(params[l.pw1.b].value.data.begin(), params[l.pw1.b].value.data.end(), T(0));
        std::fill(params[l.dw.b].value.data.begin(), params[l.dw.b].value.data.end(), T(0));
        std::fill(params[l.pw2.b].value.data.begin(), params[l.pw2.b].value.data.end(), T(0));
    }

    // ---- analytic MAC counting (multiplies only, batch 1) ----

    struct MacBreakdown {
        std::uint64_t embed = 0, encoder = 0, fusion = 0, decoder = 0, heads = 0;
        std::uint64_t total() const { return embed + encoder + fusion + decoder + heads; }
    };

    static MacBreakdown count_macs(const NetworkConfig& cfg, int H, int W) {
        cfg.validate();
        const int S = cfg.scales;
        auto conv_macs = [](std::uint64_t oc, std::uint64_t icpg, std::uint64_t k,
                            std::uint64_t area) { return oc * icpg * k * k * area; };
        auto area = [&](int s) {
            return std::uint64_t(H >> (s - 1)) * std::uint64_t(W >> (s - 1));
        };
        const std::uint64_t N = cfg.filter_len, r = cfg.r;
        // SEB on C channels over `a` pixels
        auto seb = [&](std::uint64_t C, std::uint64_t a) {
            return conv_macs(2 * C, C, 1, a) + conv_macs(2 * C, 1, 3, a) +
                   conv_macs(C, C, 1, a);
        };
        // WFB/WHB on C channels: pointwise gate pair around an LWN on 2C
        auto wavelet_block = [&](std::uint64_t C, std::uint64_t a) {
            const std::uint64_t cw = 2 * C;       // LWN width
            const std::uint64_t sub = 4 * cw;     // wavelet-domain channels
            const std::uint64_t a4 = a / 4;       // half resolution
            std::uint64_t m = conv_macs(2 * C, C, 1, a);        // pw_in
            m += conv_macs(sub, 1, N, a4);                      // dwt2
            m += conv_macs(sub * r, sub, 1, a4);                // pw1
            m += conv_macs(sub * r, 1, 3, a4);                  // depthwise
            m += conv_macs(sub, sub * r, 1, a4);                // pw2
            m += conv_macs(sub, 1, N, a4);                      // idwt2 (transposed)
            m += conv_macs(C, C, 1, a);                         // pw_out
            return m;
        };

        MacBreakdown mb;
        mb.embed = conv_macs(cfg.width(1), 3, 3, area(1));
        for (int s = 1; s <= S; ++s) {
            mb.encoder += std::uint64_t(cfg.blocks_per_stage) * seb(cfg.width(s), area(s));
            if (s < S) mb.encoder += conv_macs(cfg.width(s + 1), cfg.width(s), 1, area(s + 1));
        }
        mb.fusion += conv_macs(cfg.width(S), cfg.width(S - 1), 1, area(S));  // align
        for (int s = 2; s <= S; ++s) {
            mb.fusion += wavelet_block(cfg.width(s), area(s));
            if (s < S) mb.fusion += conv_macs(cfg.width(s), cfg.width(s + 1), 1, area(s));
        }
        for (int s = 1; s <= S; ++s) {
            mb.decoder += wavelet_block(cfg.width(s), area(s));
            if (s < S) mb.decoder += conv_macs(cfg.width(s), cfg.width(s + 1), 1, area(s));
        }
        mb.decoder += conv_macs(cfg.width(1), cfg.width(2), 1, area(1));  // F_2 join
        const int head_count = cfg.train_mode ? S : 1;
        for (int s = 1; s <= head_count; ++s)
            mb.heads += conv_macs(3, cfg.width(s), 3, area(s));
        return mb;
    }

    // ---- checkpoint I/O ----
    // Directory of binary tensors plus a manifest; filter banks are stored
    // in the filter-bank text format.

    void save_checkpoint(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        {
            std::ofstream cfgf(dir + "/config.txt");
            cfgf << "base_width=" << cfg.base_width << "\nscales=" << cfg.scales
                 << "\nblocks_per_stage=" << cfg.blocks_per_stage << "\nr=" << cfg.r
                 << "\nfilter_len=" << cfg.filter_len << "\n";
        }
        std::vector<bool> in_bank(params.size(), false);
        std::ofstream man(dir + "/manifest.txt");
        for (const auto& bp : bank_params)
            for (int i : bp) in_bank[i] = true;
        for (const auto& l : all_lwns()) {
            FilterBank<T> b;
            b.a0 = params[l->bank[0]].value.data;
            b.a1 = params[l->bank[1]].value.data;
            b.s0 = params[l->bank[2]].value.data;
            b.s1 = params[l->bank[3]].value.data;
            save_bank(dir + "/" + l->name + ".bank.txt", b);
            man << "bank " << l->name << "\n";
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (in_bank[i]) continue;
            save_tensor(dir + "/" + params[i].name + ".mlwt", params[i].value);
            man << "tensor " << params[i].name;
            for (auto d : params[i].value.shape) man << " " << d;
            man << "\n";
        }
    }

    static MlwNet load_checkpoint(const std::string& dir) {
        NetworkConfig cfg;
        std::ifstream cfgf(dir + "/config.txt");
        if (!cfgf) throw format_error("checkpoint missing config.txt: " + dir);
        std::string line;
        while (std::getline(cfgf, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string k = line.substr(0, eq);
            const int v = std::stoi(line.substr(eq + 1));
            if (k == "base_width") cfg.base_width = v;
            else if (k == "scales") cfg.scales = v;
            else if (k == "blocks_per_stage") cfg.blocks_per_stage = v;
            else if (k == "r") cfg.r = v;
            else if (k == "filter_len") cfg.filter_len = v;
        }
        MlwNet net(cfg, 0);
        std::vector<bool> in_bank(net.params.size(), false);
        for (const auto& bp : net.bank_params)
            for (int i : bp) in_bank[i] = true;
        for (auto* l : net.all_lwns()) {
            FilterBank<T> b = load_bank<T>(dir + "/" + l->name + ".bank.txt");
            net.params[l->bank[0]].value.data = b.a0;
            net.params[l->bank[1]].value.data = b.a1;
            net.params[l->bank[2]].value.data = b.s0;
            net.params[l->bank[3]].value.data = b.s1;
        }
        for (std::size_t i = 0; i < net.params.size(); ++i) {
            if (in_bank[i]) continue;
            Tensor<T> t = load_tensor<T>(dir + "/" + net.params[i].name + ".mlwt");
            if (t.shape != net.params[i].value.shape)
                throw format_error("checkpoint shape mismatch for " + net.params[i].name);
            net.params[i].value = std::move(t);
        }
        return net;
    }

    std::vector<const LwnRef*> all_lwns() const {
        std::vector<const LwnRef*> out;
        for (const auto& b : fusion) out.push_back(&b.lwn);
        for (const auto& b : decoder) out.push_back(&b.lwn);
        return out;
    }
    std::vector<LwnRef*> all_lwns() {
        std::vector<LwnRef*> out;
        for (auto& b : fusion) out.push_back(&b.lwn);
        for (auto& b : decoder) out.push_back(&b.lwn);
        return out;
    }

    // sum of the self-supervision loss over every bank in the network
    T total_bank_loss() const {
        T sum = 0;
        for (const auto& bp : bank_params) {
            FilterBank<T> b;
            b.a0 = params[bp[0]].value.data;
            b.a1 = params[bp[1]].value.data;
            b.s0 = params[bp[2]].value.data;
            b.s1 = params[bp[3]].value.data;
            sum += wavelet_loss(b);
        }
        return sum;
    }

private:
    Id conv(Tape<T>& t, const std::vector<Id>& P, const ConvRef& c, Id x) const {
        return t.conv2d(x, P[c.w], c.b >= 0 ? std::optional<Id>(P[c.b]) : std::nullopt,
                        c.stride, c.groups, c.pad);
    }

    int push_param(std::string name, Tensor<T> v) {
        params.push_back({std::move(name), std::move(v)});
        return int(params.size()) - 1;
    }

    ConvRef make_conv(Rng& rng, const std::string& name, int ic, int oc, int k,
                      int stride, int groups, Pad2D pad, bool zero_init) {
        const int icpg = ic / groups;
        Tensor<T> w({std::size_t(oc), std::size_t(icpg), std::size_t(k), std::size_t(k)});
        if (!zero_init) {
            const double bound = 1.0 / std::sqrt(double(icpg * k * k));
            for (auto& v : w.data) v = T(rng.uniform(-bound, bound));
        }
        ConvRef c;
        c.w = push_param(name + ".w", std::move(w));
        c.b = push_param(name + ".b", Tensor<T>({std::size_t(oc)}));
        c.stride = stride;
        c.groups = groups;
        c.pad = pad;
        return c;
    }

    BlockRef make_block(Rng& rng, const std::string& name, int width, bool with_lwn) {
        BlockRef b;
        b.has_lwn = with_lwn;
        b.ln.gain = push_param(name + ".ln.g", Tensor<T>::full({std::size_t(width)}, T(1)));
        b.ln.bias = push_param(name + ".ln.b", Tensor<T>({std::size_t(width)}));
        b.pw_in = make_conv(rng, name + ".pw_in", width, 2 * width, 1, 1, 1, Pad2D{}, false);
        if (with_lwn) {
            b.lwn = make_lwn(rng, name + ".lwn", 2 * width);
        } else {
            b.dw = make_conv(rng, name + ".dw", 2 * width, 2 * width, 3, 1, 2 * width,
                             Pad2D::zero(1), false);
        }
        // zero-initialized output projection makes every block an identity at init
        b.pw_out = make_conv(rng, name + ".pw_out", width, width, 1, 1, 1, Pad2D{}, true);
        return b;
    }

    LwnRef make_lwn(Rng& rng, const std::string& name, int channels) {
        LwnRef l;
        l.name = name;
        FilterBank<T> init = haar_padded<T>(std::size_t(cfg.filter_len));
        const std::size_t n = std::size_t(cfg.filter_len);
        l.bank[0] = push_param(name + ".a0", Tensor<T>({n}, init.a0));
        l.bank[1] = push_param(name + ".a1", Tensor<T>({n}, init.a1));
        l.bank[2] = push_param(name + ".s0", Tensor<T>({n}, init.s0));
        l.bank[3] = push_param(name + ".s1", Tensor<T>({n}, init.s1));
        bank_params.push_back(l.bank);
        const int sub = 4 * channels;
        l.pw1 = make_conv(rng, name + ".pw1", sub, sub * cfg.r, 1, 1, 1, Pad2D{}, false);
        l.dw = make_conv(rng, name + ".dw", sub * cfg.r, sub * cfg.r, 3, 1, sub * cfg.r,
                         Pad2D::zero(1), false);
        l.pw2 = make_conv(rng, name + ".pw2", sub * cfg.r, sub, 1, 1, 1, Pad2D{}, false);
        return l;
    }
};

}  // namespace mlwt

#endif
