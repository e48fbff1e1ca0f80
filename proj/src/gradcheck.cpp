#include "tstcc/gradcheck.hpp"

#include <cmath>
#include <numeric>

#include "tstcc/rng.hpp"
#include "tstcc/util.hpp"

namespace tstcc {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
    double v = f().item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: f returned a non-finite value");
    return v;
}

double run_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double eps,
                 const std::vector<std::vector<std::size_t>>& coords) {
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    Tensor loss = f();
    if (!std::isfinite(loss.item()))
        throw NumericError("finite_diff_check: f returned a non-finite value");
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params)
        analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));

    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        std::vector<double>& buf = p.mutable_data();
        for (std::size_t j : coords[i]) {
            const double orig = buf[j];
            buf[j] = orig + eps;
            const double fp = eval_scalar(f);
            buf[j] = orig - eps;
            const double fm = eval_scalar(f);
            buf[j] = orig;
            const double central = (fp - fm) / (2.0 * eps);
            const double rel = std::abs(analytic[i][j] - central) / (std::abs(central) + 1e-12);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace

double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps) {
    if (eps <= 0.0) throw ValueError("finite_diff_check: eps must be positive");
    std::vector<std::vector<std::size_t>> coords(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        coords[i].resize(params[i].numel());
        std::iota(coords[i].begin(), coords[i].end(), std::size_t{0});
    }
    return run_check(f, params, eps, coords);
}

double finite_diff_check_sampled(const std::function<Tensor()>& f,
                                 const std::vector<Tensor>& params, double eps,
                                 std::size_t max_coords_per_param, std::uint64_t seed) {
    if (eps <= 0.0) throw ValueError("finite_diff_check: eps must be positive");
    if (max_coords_per_param == 0) throw ValueError("finite_diff_check: need at least one coord");
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> coords(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t n = params[i].numel();
        if (n <= max_coords_per_param) {
            coords[i].resize(n);
            std::iota(coords[i].begin(), coords[i].end(), std::size_t{0});
        } else {
            Rng sub = rng.split(i + 1);
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), std::size_t{0});
            sub.shuffle(all);
            coords[i].assign(all.begin(), all.begin() + max_coords_per_param);
        }
    }
    return run_check(f, params, eps, coords);
}

}  // namespace tstcc
