#include "structlm/adam.hpp"

#include <cmath>
#include <string>

namespace structlm {

AdamState AdamState::for_params(std::span<const Tensor> params) {
    AdamState state;
    state.first_moment.reserve(params.size());
    state.second_moment.reserve(params.size());
    for (const Tensor& p : params) {
        state.first_moment.emplace_back(p.size(), real{0});
        state.second_moment.emplace_back(p.size(), real{0});
    }
    return state;
}

void adam_step(std::span<Tensor> params, AdamState& state, real lr, const AdamHyper& hyper) {
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
        throw contract_error("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                             " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].size() != params[i].size() || state.second_moment[i].size() != params[i].size()) {
            throw contract_error("adam_step: moment size mismatch for tensor " + std::to_string(i) + " of shape " +
                                 shape_str(params[i].shape()));
        }
    }
    ++state.step_count;
    const auto t = static_cast<real>(state.step_count);
    const real corr1 = real{1} - std::pow(hyper.beta1, t);
    const real corr2 = real{1} - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.has_grad()) {
            // Moments still decay so that sparse updates stay consistent.
            for (std::size_t j = 0; j < p.size(); ++j) {
                state.first_moment[i][j] *= hyper.beta1;
                state.second_moment[i][j] *= hyper.beta2;
            }
        }
        auto data = p.data();
        const bool with_grad = p.has_grad();
        const real* g = with_grad ? p.grad().data() : nullptr;
        real* m = state.first_moment[i].data();
        real* v = state.second_moment[i].data();
        for (std::size_t j = 0; j < data.size(); ++j) {
            if (with_grad) {
                m[j] = hyper.beta1 * m[j] + (real{1} - hyper.beta1) * g[j];
                v[j] = hyper.beta2 * v[j] + (real{1} - hyper.beta2) * g[j] * g[j];
            }
            const real m_hat = m[j] / corr1;
            const real v_hat = v[j] / corr2;
            data[j] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
        }
    }
}

real linear_schedule(real peak, std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps) {
    if (total_steps == 0) return 0;
    if (step < warmup_steps) return peak * static_cast<real>(step + 1) / static_cast<real>(warmup_steps);
    if (step >= total_steps) return 0;
    const std::uint64_t decay_span = total_steps - warmup_steps;
    return peak * static_cast<real>(total_steps - step) / static_cast<real>(decay_span);
}

}  // namespace structlm
