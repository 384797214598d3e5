#pragma once

// Central finite-difference oracle used by the gradient-check tests. It only
// perturbs data and re-evaluates a forward closure; it never touches the
// reverse-mode machinery it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "structlm/tensor.hpp"

namespace structlm::testing {

inline std::vector<real> central_differences(Tensor& param, const std::function<real()>& loss, real step = 1e-5) {
    std::vector<real> out(param.size());
    auto data = param.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const real saved = data[i];
        data[i] = saved + step;
        const real up = loss();
        data[i] = saved - step;
        const real down = loss();
        data[i] = saved;
        out[i] = (up - down) / (2 * step);
    }
    return out;
}

// Max relative error over elements whose finite difference exceeds `floor`.
inline real max_relative_error(std::span<const real> analytic, std::span<const real> numeric, real floor = 1e-8) {
    real worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (std::abs(numeric[i]) <= floor) continue;
        const real denom = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace structlm::testing
