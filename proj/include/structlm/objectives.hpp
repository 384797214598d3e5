#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "structlm/doc.hpp"
#include "structlm/model.hpp"
#include "structlm/random.hpp"
#include "structlm/tensor.hpp"

namespace structlm {

inline constexpr std::int64_t kIgnoreLabel = -100;

// Bernoulli draws each token/cell independently; fixed_count selects exactly
// round(rate * eligible) (at least one).
enum class SamplingMode { bernoulli, fixed_count };

struct PretrainConfig {
    double mask_rate = 0.15;
    double mask_token_frac = 0.8;
    double random_frac = 0.1;
    double keep_frac = 0.1;
    double cell_select_rate = 0.15;
    double zero_box_frac = 0.9;
    double keep_box_frac = 0.1;
    std::size_t num_areas = 16;
    std::int64_t ignore_label = kIgnoreLabel;
    real mvlm_weight = 1;
    real cpc_weight = 1;
    bool cpc_enabled = true;
    SamplingMode sampling = SamplingMode::bernoulli;

    void validate() const;
};

// Grid cell (row-major over a sqrt(N) x sqrt(N) grid) containing the box
// center. Labels are 0-based.
std::int64_t area_of(const NormalizedBox& box, std::size_t num_areas);

enum class MaskAction : std::uint8_t { mask_token, random_token, keep };

struct MvlmSample {
    std::vector<std::int64_t> input_ids;
    std::vector<std::int64_t> labels;  // original id at selected positions, ignore_label elsewhere
    std::vector<std::int64_t> masked_positions;
    std::vector<MaskAction> actions;  // parallel to masked_positions
};

// Selects non-special tokens at mask_rate and corrupts them 80/10/10.
// Boxes are never touched. At least one token is selected.
MvlmSample sample_mvlm(const TokenizedSequence& seq, const PretrainConfig& cfg, std::size_t vocab_size, Rng& rng);

struct CpcSample {
    std::vector<NormalizedBox> boxes;
    std::vector<std::int64_t> labels;  // area of the original cell box at selected-cell tokens
    std::vector<std::int64_t> selected_cells;
    std::vector<std::uint8_t> zeroed;  // parallel to selected_cells
    std::size_t eligible_cells = 0;
};

// Selects cells without MVLM-masked tokens at cell_select_rate; a selected
// cell's token boxes become (0,0,0,0) with probability zero_box_frac.
CpcSample sample_cpc(const TokenizedSequence& seq, std::span<const std::int64_t> masked_positions,
                     const PretrainConfig& cfg, Rng& rng);

struct PretrainExample {
    TokenizedSequence sequence;  // ids after masking, boxes after zeroing
    std::vector<std::int64_t> mvlm_labels;
    std::vector<std::int64_t> cpc_labels;
    std::vector<std::int64_t> selected_cell_indices;
    std::vector<std::int64_t> masked_token_positions;
};

// MVLM then (when enabled) CPC sampling on one sequence.
PretrainExample make_pretrain_example(const TokenizedSequence& seq, const PretrainConfig& cfg, std::size_t vocab_size,
                                      Rng& rng);

struct PretrainLoss {
    Tensor loss;
    real mvlm_loss = 0;
    real cpc_loss = 0;
    std::size_t mvlm_count = 0;
    std::size_t cpc_count = 0;
    std::size_t cpc_correct = 0;

    real cpc_accuracy() const { return cpc_count ? static_cast<real>(cpc_correct) / static_cast<real>(cpc_count) : 0; }
};

// Weighted sum of the two cross-entropies over full-sequence logits. Pass an
// undefined cpc_logits when the CPC objective is off.
PretrainLoss pretrain_loss(const Tensor& mlm_logits, const Tensor& cpc_logits, const PretrainExample& example,
                           const PretrainConfig& cfg);

// Same loss computed from encoder output, evaluating the heads only at
// labelled positions.
PretrainLoss pretrain_objective(const Tensor& hidden, const Parameters& params, const PretrainExample& example,
                                const PretrainConfig& cfg);

}  // namespace structlm
