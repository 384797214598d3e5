#include "structlm/train.hpp"

#include <cmath>

#include "structlm/random.hpp"

namespace structlm {

void TrainConfig::validate() const {
    if (steps == 0) throw config_error("train config: steps must be positive");
    if (batch_size == 0) throw config_error("train config: batch_size must be positive");
    if (!(lr > 0)) throw config_error("train config: lr must be positive");
    if (warmup_frac < 0 || warmup_frac >= 1) throw config_error("train config: warmup_frac must lie in [0, 1)");
}

std::size_t TrainConfig::warmup_steps() const {
    return static_cast<std::size_t>(std::llround(warmup_frac * static_cast<double>(steps)));
}

real TrainConfig::lr_at(std::size_t step) const { return linear_schedule(lr, step, warmup_steps(), steps); }

BatchSchedule::BatchSchedule(std::size_t num_examples, std::size_t batch_size, std::uint64_t seed)
    : num_examples_(num_examples), batch_size_(batch_size), seed_(seed) {
    if (num_examples == 0) throw config_error("batch schedule: no training examples");
    if (batch_size == 0) throw config_error("batch schedule: batch_size must be positive");
}

void BatchSchedule::load_epoch(std::size_t epoch) {
    if (epoch == cached_epoch_) return;
    order_.resize(num_examples_);
    for (std::size_t i = 0; i < num_examples_; ++i) order_[i] = i;
    Rng rng(derive_seed(seed_, {0x6261746368ULL, epoch}));
    for (std::size_t i = num_examples_; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    cached_epoch_ = epoch;
}

std::vector<BatchSchedule::Entry> BatchSchedule::batch(std::size_t step) {
    std::vector<Entry> out;
    out.reserve(batch_size_);
    for (std::size_t k = 0; k < batch_size_; ++k) {
        const std::size_t global = step * batch_size_ + k;
        const std::size_t epoch = global / num_examples_;
        load_epoch(epoch);
        out.push_back({order_[global % num_examples_], epoch});
    }
    return out;
}

real accumulate_batch(std::size_t batch_size, const std::function<Tensor(std::size_t)>& loss_of) {
    real total = 0;
    const real inv = real{1} / static_cast<real>(batch_size);
    for (std::size_t k = 0; k < batch_size; ++k) {
        Tensor loss = loss_of(k);
        total += loss.item();
        backward(scale(loss, inv));
    }
    return total * inv;
}

Optimizer::Optimizer(const Parameters& params) : tensors_(params.tensors()), state_(AdamState::for_params(tensors_)) {}

void Optimizer::zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
}

void Optimizer::step(real lr) { adam_step(tensors_, state_, lr); }

}  // namespace structlm
