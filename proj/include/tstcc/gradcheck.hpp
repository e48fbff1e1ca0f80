#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tstcc/tensor.hpp"

namespace tstcc {

// Rebuilds f() with each parameter coordinate nudged ±eps and returns the max
// over coordinates of |analytic − central| / (|central| + 1e-12).  f must be a
// deterministic scalar function of the given parameter tensors.
double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps);

// Same, probing at most max_coords_per_param seeded-random coordinates of each
// parameter; for models where the exhaustive sweep is too slow.
double finite_diff_check_sampled(const std::function<Tensor()>& f,
                                 const std::vector<Tensor>& params, double eps,
                                 std::size_t max_coords_per_param, std::uint64_t seed);

}  // namespace tstcc
