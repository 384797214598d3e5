#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "structlm/tensor.hpp"

namespace structlm {

struct AdamHyper {
    real beta1 = real{0.9};
    real beta2 = real{0.999};
    real eps = real{1e-8};
};

// Moment estimates for one ordered list of trainable tensors.
struct AdamState {
    std::uint64_t step_count = 0;
    std::vector<std::vector<real>> first_moment;
    std::vector<std::vector<real>> second_moment;

    // Zeroed moments shaped like `params`.
    static AdamState for_params(std::span<const Tensor> params);
};

// One bias-corrected Adam update of every tensor in `params` from its grad.
// Tensors without an allocated grad are treated as having zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, real lr, const AdamHyper& hyper = {});

// Linear warmup from 0 to `peak` over `warmup_steps`, then linear decay to 0
// at `total_steps`. `step` is 0-based.
real linear_schedule(real peak, std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps);

}  // namespace structlm
