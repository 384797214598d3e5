#include "structlm/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace structlm {

namespace {

std::size_t grid_side(std::size_t num_areas) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(num_areas))));
    if (num_areas == 0 || side * side != num_areas) {
        throw contract_error("num_areas " + std::to_string(num_areas) + " is not a perfect square");
    }
    return side;
}

bool close_to(double a, double b) { return std::abs(a - b) <= 1e-9; }

// Indices chosen from `count` candidates under the configured sampling mode.
std::vector<std::size_t> choose(std::size_t count, double rate, SamplingMode mode, Rng& rng) {
    std::vector<std::size_t> picked;
    if (count == 0) return picked;
    if (mode == SamplingMode::bernoulli) {
        for (std::size_t i = 0; i < count; ++i) {
            if (rng.bernoulli(rate)) picked.push_back(i);
        }
        return picked;
    }
    const auto target = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(rate * count)));
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    for (std::size_t i = 0; i < target; ++i) std::swap(order[i], order[i + rng.below(count - i)]);
    picked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(target));
    std::sort(picked.begin(), picked.end());
    return picked;
}

}  // namespace

void PretrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw config_error("pretrain config: " + what);
    };
    require(mask_rate > 0 && mask_rate <= 1, "mask_rate must lie in (0, 1]");
    require(cell_select_rate >= 0 && cell_select_rate <= 1, "cell_select_rate must lie in [0, 1]");
    require(mask_token_frac >= 0 && random_frac >= 0 && keep_frac >= 0, "mask fractions must be non-negative");
    require(close_to(mask_token_frac + random_frac + keep_frac, 1), "mask_token_frac + random_frac + keep_frac must be 1");
    require(zero_box_frac >= 0 && keep_box_frac >= 0, "box fractions must be non-negative");
    require(close_to(zero_box_frac + keep_box_frac, 1), "zero_box_frac + keep_box_frac must be 1");
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(num_areas))));
    require(num_areas > 0 && side * side == num_areas, "num_areas must be a perfect square");
    require(ignore_label < 0, "ignore_label must be negative");
    require(mvlm_weight >= 0 && cpc_weight >= 0, "loss weights must be non-negative");
}

std::int64_t area_of(const NormalizedBox& box, std::size_t num_areas) {
    if (!box.valid()) {
        throw contract_error("area_of: invalid box (" + std::to_string(box.x0) + "," + std::to_string(box.y0) + "," +
                             std::to_string(box.x1) + "," + std::to_string(box.y1) + ")");
    }
    const auto g = static_cast<long>(grid_side(num_areas));
    // floor(((x0 + x1) / 2) * g / 1000) in exact integer arithmetic
    const long col = std::min((static_cast<long>(box.x0) + box.x1) * g / (2L * kCoordMax), g - 1);
    const long row = std::min((static_cast<long>(box.y0) + box.y1) * g / (2L * kCoordMax), g - 1);
    return row * g + col;
}

MvlmSample sample_mvlm(const TokenizedSequence& seq, const PretrainConfig& cfg, std::size_t vocab_size, Rng& rng) {
    const auto first_regular = static_cast<std::uint64_t>(Vocab::kNumReserved);
    if (vocab_size <= first_regular) throw contract_error("sample_mvlm: vocabulary has no regular tokens");
    MvlmSample out;
    out.input_ids = seq.token_ids;
    out.labels.assign(seq.max_len(), cfg.ignore_label);

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < seq.length; ++i) {
        if (!seq.is_special(i)) eligible.push_back(i);
    }
    if (eligible.empty()) throw contract_error("sample_mvlm: sequence has no maskable tokens");

    auto picked = choose(eligible.size(), cfg.mask_rate, cfg.sampling, rng);
    if (picked.empty()) picked.push_back(static_cast<std::size_t>(rng.below(eligible.size())));

    for (std::size_t idx : picked) {
        const std::size_t pos = eligible[idx];
        out.labels[pos] = seq.token_ids[pos];
        out.masked_positions.push_back(static_cast<std::int64_t>(pos));
        const double u = rng.uniform();
        if (u < cfg.mask_token_frac) {
            out.input_ids[pos] = Vocab::kMask;
            out.actions.push_back(MaskAction::mask_token);
        } else if (u < cfg.mask_token_frac + cfg.random_frac) {
            out.input_ids[pos] = static_cast<std::int64_t>(first_regular + rng.below(vocab_size - first_regular));
            out.actions.push_back(MaskAction::random_token);
        } else {
            out.actions.push_back(MaskAction::keep);
        }
    }
    return out;
}

CpcSample sample_cpc(const TokenizedSequence& seq, std::span<const std::int64_t> masked_positions,
                     const PretrainConfig& cfg, Rng& rng) {
    CpcSample out;
    out.boxes = seq.boxes;
    out.labels.assign(seq.max_len(), cfg.ignore_label);

    std::set<std::int64_t> blocked;
    for (std::int64_t pos : masked_positions) blocked.insert(seq.cell_index[static_cast<std::size_t>(pos)]);
    std::vector<std::int64_t> present;
    for (std::size_t i = 0; i < seq.length; ++i) {
        const std::int64_t c = seq.cell_index[i];
        if (c >= 0 && (present.empty() || present.back() != c)) present.push_back(c);
    }
    std::vector<std::int64_t> eligible;
    for (std::int64_t c : present) {
        if (!blocked.count(c)) eligible.push_back(c);
    }
    out.eligible_cells = eligible.size();

    for (std::size_t idx : choose(eligible.size(), cfg.cell_select_rate, cfg.sampling, rng)) {
        const std::int64_t cell = eligible[idx];
        const bool zero = rng.bernoulli(cfg.zero_box_frac);
        const std::int64_t label = area_of(seq.cell_boxes[static_cast<std::size_t>(cell)], cfg.num_areas);
        out.selected_cells.push_back(cell);
        out.zeroed.push_back(zero ? 1 : 0);
        for (std::size_t i = 0; i < seq.length; ++i) {
            if (seq.cell_index[i] != cell) continue;
            out.labels[i] = label;
            if (zero) out.boxes[i] = NormalizedBox{};
        }
    }
    return out;
}

PretrainExample make_pretrain_example(const TokenizedSequence& seq, const PretrainConfig& cfg, std::size_t vocab_size,
                                      Rng& rng) {
    auto mvlm = sample_mvlm(seq, cfg, vocab_size, rng);
    PretrainExample ex;
    ex.sequence = seq;
    ex.sequence.token_ids = std::move(mvlm.input_ids);
    ex.mvlm_labels = std::move(mvlm.labels);
    ex.masked_token_positions = std::move(mvlm.masked_positions);
    if (cfg.cpc_enabled) {
        auto cpc = sample_cpc(seq, ex.masked_token_positions, cfg, rng);
        ex.sequence.boxes = std::move(cpc.boxes);
        ex.cpc_labels = std::move(cpc.labels);
        ex.selected_cell_indices = std::move(cpc.selected_cells);
    } else {
        ex.cpc_labels.assign(seq.max_len(), cfg.ignore_label);
    }
    return ex;
}

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const std::int64_t> labels, std::int64_t ignore) {
    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] == ignore) continue;
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        }
        if (static_cast<std::int64_t>(best) == labels[r]) ++correct;
    }
    return correct;
}

std::size_t count_labels(std::span<const std::int64_t> labels, std::int64_t ignore) {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [&](auto l) { return l != ignore; }));
}

PretrainLoss combine(Tensor mvlm, Tensor cpc, const PretrainConfig& cfg) {
    PretrainLoss out;
    out.mvlm_loss = mvlm.item();
    Tensor total = scale(mvlm, cfg.mvlm_weight);
    if (cpc.defined()) {
        out.cpc_loss = cpc.item();
        total = add(total, scale(cpc, cfg.cpc_weight));
    }
    out.loss = total;
    return out;
}

}  // namespace

PretrainLoss pretrain_loss(const Tensor& mlm_logits, const Tensor& cpc_logits, const PretrainExample& example,
                           const PretrainConfig& cfg) {
    auto mvlm = softmax_cross_entropy(mlm_logits, example.mvlm_labels, cfg.ignore_label);
    Tensor cpc;
    if (cfg.cpc_enabled && cpc_logits.defined()) {
        cpc = softmax_cross_entropy(cpc_logits, example.cpc_labels, cfg.ignore_label);
    }
    auto out = combine(mvlm, cpc, cfg);
    out.mvlm_count = count_labels(example.mvlm_labels, cfg.ignore_label);
    if (cpc.defined()) {
        out.cpc_count = count_labels(example.cpc_labels, cfg.ignore_label);
        out.cpc_correct = count_correct(cpc_logits, example.cpc_labels, cfg.ignore_label);
    }
    return out;
}

PretrainLoss pretrain_objective(const Tensor& hidden, const Parameters& params, const PretrainExample& example,
                                const PretrainConfig& cfg) {
    auto gather = [&](const std::vector<std::int64_t>& labels, std::vector<std::int64_t>& rows,
                      std::vector<std::int64_t>& targets) {
        for (std::size_t i = 0; i < labels.size() && i < hidden.rows(); ++i) {
            if (labels[i] == cfg.ignore_label) continue;
            rows.push_back(static_cast<std::int64_t>(i));
            targets.push_back(labels[i]);
        }
    };
    std::vector<std::int64_t> mvlm_rows, mvlm_targets;
    gather(example.mvlm_labels, mvlm_rows, mvlm_targets);
    Tensor mvlm = mvlm_rows.empty()
                      ? softmax_cross_entropy(Tensor::zeros({1, 1}), std::vector<std::int64_t>{cfg.ignore_label},
                                              cfg.ignore_label)
                      : softmax_cross_entropy(head_mlm(select_rows(hidden, mvlm_rows), params), mvlm_targets,
                                              cfg.ignore_label);
    Tensor cpc;
    std::size_t cpc_correct = 0;
    std::vector<std::int64_t> cpc_rows, cpc_targets;
    if (cfg.cpc_enabled) {
        gather(example.cpc_labels, cpc_rows, cpc_targets);
        if (cpc_rows.empty()) {
            cpc = Tensor::scalar(0);
        } else {
            auto logits = head_cpc(select_rows(hidden, cpc_rows), params);
            cpc = softmax_cross_entropy(logits, cpc_targets, cfg.ignore_label);
            cpc_correct = count_correct(logits, cpc_targets, cfg.ignore_label);
        }
    }
    auto out = combine(mvlm, cpc, cfg);
    out.mvlm_count = mvlm_rows.size();
    out.cpc_count = cpc_rows.size();
    out.cpc_correct = cpc_correct;
    return out;
}

}  // namespace structlm
