#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "structlm/doc.hpp"
#include "structlm/random.hpp"
#include "structlm/tensor.hpp"

namespace structlm {

// Raised on an inconsistent model, training or task configuration.
class config_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kCoordVocab = kCoordMax + 1;
inline constexpr std::size_t kNumTagLabels = 13;

struct ModelConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t hidden_d = 64;
    std::size_t ffn_d = 256;
    std::size_t vocab_size = 512;
    std::size_t max_len = 128;
    std::size_t num_areas = 16;
    std::size_t num_tag_labels = kNumTagLabels;
    std::size_t num_doc_classes = 3;
    LayoutMode layout_mode = LayoutMode::cell_level;
    bool cpc_head = true;
    real dropout = 0;
    real layer_norm_eps = real{1e-12};
    real init_std = real{0.02};

    // Throws config_error naming the first violated invariant.
    void validate() const;

    // 2 layers, 4 heads, d=64, ffn=256, L=128.
    static ModelConfig desk();
    // 24 layers, 16 heads, d=1024, ffn=4096, L=512.
    static ModelConfig large();

    bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor attn_ln_gamma, attn_ln_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ffn_ln_gamma, ffn_ln_beta;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Parameters {
    Tensor word_emb;   // [V x d]; also the tied MLM output projection
    Tensor pos1d_emb;  // [L x d]
    Tensor x_emb;      // [1001 x d], shared by x0 and x1
    Tensor y_emb;      // [1001 x d], shared by y0 and y1
    Tensor emb_ln_gamma, emb_ln_beta;
    std::vector<EncoderLayer> layers;
    Tensor mlm_bias;       // [V]
    Tensor cpc_w, cpc_b;   // [d x N], [N]; undefined when the CPC head is disabled
    Tensor tag_w, tag_b;   // [d x 13]
    Tensor span_w, span_b; // [d x 2]
    Tensor cls_w, cls_b;   // [d x C]

    // Truncated-normal weights and embeddings, zero biases, unit gains.
    static Parameters init(const ModelConfig& config, std::uint64_t seed);

    // Every tensor in a fixed order with a stable name.
    std::vector<NamedTensor> named() const;
    std::vector<Tensor> tensors() const;
    void zero_grads() const;
    // Independent copy of all data (no grads).
    Parameters clone() const;
};

std::size_t parameter_count(const ModelConfig& config);
std::size_t parameter_array_count(const ModelConfig& config);

struct ForwardOptions {
    // Compute only the first `seq.length` rows. Non-pad outputs are identical
    // either way because padded keys are masked.
    bool trim_padding = false;
    bool training = false;  // enables dropout when config.dropout > 0
    Rng* rng = nullptr;
};

std::size_t active_rows(const TokenizedSequence& seq, const ForwardOptions& options);

// x_emb[x0] + x_emb[x1] + y_emb[y0] + y_emb[y1] per token.
Tensor layout_embedding(const TokenizedSequence& seq, const Parameters& params, std::size_t rows);
// word_emb + pos1d_emb + layout embedding, before normalization.
Tensor embedding_sum(const TokenizedSequence& seq, const Parameters& params, std::size_t rows);
// embedding_sum followed by layer norm (and dropout when training).
Tensor input_embedding(const TokenizedSequence& seq, const Parameters& params, const ModelConfig& config,
                       const ForwardOptions& options = {});
// Post-layer-norm transformer encoder; [PAD] positions are masked as keys.
Tensor encode(const TokenizedSequence& seq, const Parameters& params, const ModelConfig& config,
              const ForwardOptions& options = {});

Tensor head_mlm(const Tensor& hidden, const Parameters& params);
Tensor head_cpc(const Tensor& hidden, const Parameters& params);
Tensor head_tag(const Tensor& hidden, const Parameters& params);
// Column 0 holds start logits, column 1 end logits.
Tensor head_span(const Tensor& hidden, const Parameters& params);
// Reads only row 0 ([CLS]).
Tensor head_cls(const Tensor& hidden, const Parameters& params);

// Rows `positions` of `hidden`.
Tensor select_rows(const Tensor& hidden, std::span<const std::int64_t> positions);

}  // namespace structlm
