#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "structlm/adam.hpp"
#include "structlm/model.hpp"
#include "structlm/tensor.hpp"

namespace structlm {

struct TrainConfig {
    std::size_t steps = 1000;
    std::size_t batch_size = 16;
    real lr = real{3e-4};
    double warmup_frac = 0.05;
    std::uint64_t seed = 42;
    std::size_t eval_every = 0;  // 0 disables periodic evaluation

    void validate() const;
    std::size_t warmup_steps() const;
    real lr_at(std::size_t step) const;
};

// Example order for step-indexed training: epoch e visits every example once
// in a permutation drawn from (seed, e). Stateless, so a resumed run sees the
// same batches as an uninterrupted one.
class BatchSchedule {
  public:
    BatchSchedule(std::size_t num_examples, std::size_t batch_size, std::uint64_t seed);

    struct Entry {
        std::size_t example;
        std::size_t epoch;
    };
    std::vector<Entry> batch(std::size_t step);

  private:
    void load_epoch(std::size_t epoch);

    std::size_t num_examples_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
    std::vector<std::size_t> order_;
};

// Runs loss_of on each batch entry, back-propagating loss / batch size so the
// parameter grads hold the batch mean. Returns the mean loss value.
real accumulate_batch(std::size_t batch_size, const std::function<Tensor(std::size_t)>& loss_of);

// Adam over a fixed parameter list plus the step counter.
class Optimizer {
  public:
    explicit Optimizer(const Parameters& params);

    // Zeroes grads before the caller's accumulation pass.
    void zero_grad();
    void step(real lr);

    std::vector<Tensor>& tensors() { return tensors_; }
    AdamState& state() { return state_; }
    const AdamState& state() const { return state_; }

  private:
    std::vector<Tensor> tensors_;
    AdamState state_;
};

}  // namespace structlm
