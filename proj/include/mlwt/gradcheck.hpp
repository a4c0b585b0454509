#ifndef MLWT_GRADCHECK_HPP
#define MLWT_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "mlwt/rng.hpp"
#include "mlwt/tape.hpp"

namespace mlwt {

// Scalar function of a parameter list, rebuilt on a fresh tape per call.
using GradCheckFn =
    std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>;

// Compares reverse-mode gradients against central finite differences on up
// to `samples_per_param` coordinates of each parameter. Returns the max
// relative error. 64-bit only.
inline double grad_check(const GradCheckFn& f, std::vector<Tensor<double>> params,
                         double eps = 1e-5, std::size_t samples_per_param = 8,
                         std::uint64_t seed = 0) {
    auto eval = [&](const std::vector<Tensor<double>>& p) {
        Tape<double> t;
        std::vector<Tape<double>::Id> ids;
        ids.reserve(p.size());
        for (const auto& v : p) ids.push_back(t.leaf(v, false));
        return t.value(f(t, ids)).data[0];
    };

    // analytic gradients
    Tape<double> t;
    std::vector<Tape<double>::Id> ids;
    for (const auto& v : params) ids.push_back(t.leaf(v, true));
    t.backward(f(t, ids));

    Rng rng(seed);
    double max_rel = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const Tensor<double>& g = t.grad(ids[pi]);
        const std::size_t n = params[pi].numel();
        std::vector<std::size_t> coords;
        if (n <= samples_per_param) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (std::size_t i = 0; i < samples_per_param; ++i)
                coords.push_back(rng.below(n));
        }
        for (std::size_t c : coords) {
            const double orig = params[pi].data[c];
            params[pi].data[c] = orig + eps;
            const double fp = eval(params);
            params[pi].data[c] = orig - eps;
            const double fm = eval(params);
            params[pi].data[c] = orig;
            const double fd = (fp - fm) / (2 * eps);
            const double ad = g.data[c];
            const double denom = std::max(std::abs(fd), std::abs(ad));
            if (denom < 1e-7) continue;  // both effectively zero
            max_rel = std::max(max_rel, std::abs(fd - ad) / denom);
        }
    }
    return max_rel;
}

}  // namespace mlwt

#endif
