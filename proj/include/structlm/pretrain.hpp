#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "structlm/model.hpp"
#include "structlm/objectives.hpp"
#include "structlm/train.hpp"

namespace structlm {

struct StepRecord {
    std::size_t step = 0;
    real lr = 0;
    real mvlm_loss = 0;
    std::optional<real> cpc_loss;  // absent when CPC is off
    std::optional<real> cpc_acc;
    bool operator==(const StepRecord&) const = default;
};

// Everything a checkpoint needs to continue a run exactly.
struct TrainerState {
    Parameters params;
    AdamState adam;
    std::size_t step = 0;
    Rng rng{0};  // dropout stream
};

// Joint MVLM + CPC training over pre-encoded sequences. Example k of step s
// is corrupted with a stream seeded from (seed, doc id, epoch).
class Pretrainer {
  public:
    Pretrainer(ModelConfig model, PretrainConfig objective, TrainConfig train, std::vector<TokenizedSequence> corpus,
               std::vector<std::string> doc_ids);

    // Fresh parameters from the train seed.
    void init();
    // Continue from a saved state; throws config_error on shape mismatch.
    void restore(TrainerState state);

    StepRecord step();
    bool done() const { return state_.step >= train_.steps; }
    // Runs to `until` steps (or the end), calling on_step after each.
    void run(std::size_t until, const std::function<void(const StepRecord&)>& on_step = {});

    const TrainerState& state() const { return state_; }
    const ModelConfig& model_config() const { return model_; }
    const PretrainConfig& objective() const { return objective_; }
    const TrainConfig& train_config() const { return train_; }

  private:
    ModelConfig model_;
    PretrainConfig objective_;
    TrainConfig train_;
    std::vector<TokenizedSequence> corpus_;
    std::vector<std::uint64_t> doc_hashes_;
    TrainerState state_;
    std::optional<Optimizer> optimizer_;
    BatchSchedule schedule_;
};

struct PretrainEval {
    real mvlm_loss = 0;
    real cpc_loss = 0;
    real cpc_accuracy = 0;  // token level
    std::size_t mvlm_tokens = 0;
    std::size_t cpc_tokens = 0;
};

// Objectives on held-out sequences with corruption seeded from (seed, index);
// losses are token-weighted means.
PretrainEval evaluate_pretrain(const Parameters& params, const ModelConfig& model, const PretrainConfig& objective,
                               const std::vector<TokenizedSequence>& sequences, std::uint64_t seed);

}  // namespace structlm
