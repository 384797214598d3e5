#include "structlm/model.hpp"

#include <cmath>

namespace structlm {

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw config_error("model config: " + what);
    };
    require(num_layers > 0, "num_layers must be positive");
    require(num_heads > 0, "num_heads must be positive");
    require(hidden_d > 0 && ffn_d > 0, "hidden_d and ffn_d must be positive");
    require(hidden_d % num_heads == 0, "hidden_d (" + std::to_string(hidden_d) + ") must be divisible by num_heads (" +
                                           std::to_string(num_heads) + ")");
    require(vocab_size > static_cast<std::size_t>(Vocab::kNumReserved), "vocab_size must exceed the reserved tokens");
    require(max_len >= 3, "max_len must be at least 3");
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(num_areas))));
    require(num_areas > 0 && side * side == num_areas, "num_areas (" + std::to_string(num_areas) +
                                                           ") must be a perfect square");
    require(num_tag_labels == kNumTagLabels, "num_tag_labels must be 13");
    require(num_doc_classes >= 2, "num_doc_classes must be at least 2");
    require(dropout >= 0 && dropout < 1, "dropout must lie in [0, 1)");
    require(layer_norm_eps > 0, "layer_norm_eps must be positive");
    require(init_std > 0, "init_std must be positive");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::large() {
    ModelConfig c;
    c.num_layers = 24;
    c.num_heads = 16;
    c.hidden_d = 1024;
    c.ffn_d = 4096;
    c.max_len = 512;
    c.dropout = real{0.1};
    return c;
}

namespace {

Tensor init_matrix(Rng& rng, std::size_t rows, std::size_t cols, real stddev) {
    std::vector<real> values(rows * cols);
    for (auto& v : values) v = static_cast<real>(rng.truncated_normal(static_cast<double>(stddev)));
    return Tensor::from({rows, cols}, std::move(values), true);
}

Tensor zeros_vec(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_vec(std::size_t n) { return Tensor::full({n}, real{1}, true); }

}  // namespace

Parameters Parameters::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const std::size_t d = config.hidden_d;
    const real s = config.init_std;
    Parameters p;
    p.word_emb = init_matrix(rng, config.vocab_size, d, s);
    p.pos1d_emb = init_matrix(rng, config.max_len, d, s);
    p.x_emb = init_matrix(rng, kCoordVocab, d, s);
    p.y_emb = init_matrix(rng, kCoordVocab, d, s);
    p.emb_ln_gamma = ones_vec(d);
    p.emb_ln_beta = zeros_vec(d);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        EncoderLayer layer;
        layer.wq = init_matrix(rng, d, d, s);
        layer.bq = zeros_vec(d);
        layer.wk = init_matrix(rng, d, d, s);
        layer.bk = zeros_vec(d);
        layer.wv = init_matrix(rng, d, d, s);
        layer.bv = zeros_vec(d);
        layer.wo = init_matrix(rng, d, d, s);
        layer.bo = zeros_vec(d);
        layer.attn_ln_gamma = ones_vec(d);
        layer.attn_ln_beta = zeros_vec(d);
        layer.ffn_w1 = init_matrix(rng, d, config.ffn_d, s);
        layer.ffn_b1 = zeros_vec(config.ffn_d);
        layer.ffn_w2 = init_matrix(rng, config.ffn_d, d, s);
        layer.ffn_b2 = zeros_vec(d);
        layer.ffn_ln_gamma = ones_vec(d);
        layer.ffn_ln_beta = zeros_vec(d);
        p.layers.push_back(std::move(layer));
    }
    p.mlm_bias = zeros_vec(config.vocab_size);
    if (config.cpc_head) {
        p.cpc_w = init_matrix(rng, d, config.num_areas, s);
        p.cpc_b = zeros_vec(config.num_areas);
    }
    p.tag_w = init_matrix(rng, d, config.num_tag_labels, s);
    p.tag_b = zeros_vec(config.num_tag_labels);
    p.span_w = init_matrix(rng, d, 2, s);
    p.span_b = zeros_vec(2);
    p.cls_w = init_matrix(rng, d, config.num_doc_classes, s);
    p.cls_b = zeros_vec(config.num_doc_classes);
    return p;
}

std::vector<NamedTensor> Parameters::named() const {
    std::vector<NamedTensor> out{{"word_emb", word_emb},         {"pos1d_emb", pos1d_emb},
                                 {"x_emb", x_emb},               {"y_emb", y_emb},
                                 {"emb_ln.gamma", emb_ln_gamma}, {"emb_ln.beta", emb_ln_beta}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        out.push_back({p + "attn.wq", L.wq});
        out.push_back({p + "attn.bq", L.bq});
        out.push_back({p + "attn.wk", L.wk});
        out.push_back({p + "attn.bk", L.bk});
        out.push_back({p + "attn.wv", L.wv});
        out.push_back({p + "attn.bv", L.bv});
        out.push_back({p + "attn.wo", L.wo});
        out.push_back({p + "attn.bo", L.bo});
        out.push_back({p + "attn_ln.gamma", L.attn_ln_gamma});
        out.push_back({p + "attn_ln.beta", L.attn_ln_beta});
        out.push_back({p + "ffn.w1", L.ffn_w1});
        out.push_back({p + "ffn.b1", L.ffn_b1});
        out.push_back({p + "ffn.w2", L.ffn_w2});
        out.push_back({p + "ffn.b2", L.ffn_b2});
        out.push_back({p + "ffn_ln.gamma", L.ffn_ln_gamma});
        out.push_back({p + "ffn_ln.beta", L.ffn_ln_beta});
    }
    out.push_back({"mlm.bias", mlm_bias});
    if (cpc_w.defined()) {
        out.push_back({"cpc.weight", cpc_w});
        out.push_back({"cpc.bias", cpc_b});
    }
    out.push_back({"tag.weight", tag_w});
    out.push_back({"tag.bias", tag_b});
    out.push_back({"span.weight", span_w});
    out.push_back({"span.bias", span_b});
    out.push_back({"cls.weight", cls_w});
    out.push_back({"cls.bias", cls_b});
    return out;
}

std::vector<Tensor> Parameters::tensors() const {
    std::vector<Tensor> out;
    for (auto& nt : named()) out.push_back(nt.tensor);
    return out;
}

void Parameters::zero_grads() const {
    for (auto& nt : named()) {
        Tensor t = nt.tensor;
        t.zero_grad();
    }
}

Parameters Parameters::clone() const {
    auto copy = [](const Tensor& t) {
        if (!t.defined()) return Tensor();
        auto c = t.detach();
        c.set_requires_grad(true);
        return c;
    };
    Parameters p;
    p.word_emb = copy(word_emb);
    p.pos1d_emb = copy(pos1d_emb);
    p.x_emb = copy(x_emb);
    p.y_emb = copy(y_emb);
    p.emb_ln_gamma = copy(emb_ln_gamma);
    p.emb_ln_beta = copy(emb_ln_beta);
    for (const auto& L : layers) {
        p.layers.push_back({copy(L.wq), copy(L.bq), copy(L.wk), copy(L.bk), copy(L.wv), copy(L.bv), copy(L.wo),
                            copy(L.bo), copy(L.attn_ln_gamma), copy(L.attn_ln_beta), copy(L.ffn_w1), copy(L.ffn_b1),
                            copy(L.ffn_w2), copy(L.ffn_b2), copy(L.ffn_ln_gamma), copy(L.ffn_ln_beta)});
    }
    p.mlm_bias = copy(mlm_bias);
    p.cpc_w = copy(cpc_w);
    p.cpc_b = copy(cpc_b);
    p.tag_w = copy(tag_w);
    p.tag_b = copy(tag_b);
    p.span_w = copy(span_w);
    p.span_b = copy(span_b);
    p.cls_w = copy(cls_w);
    p.cls_b = copy(cls_b);
    return p;
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t d = c.hidden_d, f = c.ffn_d;
    std::size_t n = c.vocab_size * d + c.max_len * d + 2 * kCoordVocab * d + 2 * d;
    n += c.num_layers * (4 * (d * d + d) + 2 * d + d * f + f + f * d + d + 2 * d);
    n += c.vocab_size;
    if (c.cpc_head) n += d * c.num_areas + c.num_areas;
    n += d * c.num_tag_labels + c.num_tag_labels;
    n += d * 2 + 2;
    n += d * c.num_doc_classes + c.num_doc_classes;
    return n;
}

std::size_t parameter_array_count(const ModelConfig& c) { return 6 + 16 * c.num_layers + 1 + (c.cpc_head ? 2 : 0) + 6; }

std::size_t active_rows(const TokenizedSequence& seq, const ForwardOptions& options) {
    return options.trim_padding ? seq.length : seq.max_len();
}

namespace {

void check_sequence(const TokenizedSequence& seq, std::size_t rows, const Parameters& params) {
    if (rows == 0 || rows > seq.max_len()) throw shape_error("sequence: invalid active length");
    if (seq.max_len() > params.pos1d_emb.rows()) {
        throw shape_error("sequence length " + std::to_string(seq.max_len()) + " exceeds max_len " +
                          std::to_string(params.pos1d_emb.rows()));
    }
    for (std::size_t i = 0; i < rows; ++i) {
        if (!seq.boxes[i].valid()) {
            const auto& b = seq.boxes[i];
            throw contract_error("token " + std::to_string(i) + " box (" + std::to_string(b.x0) + "," +
                                 std::to_string(b.y0) + "," + std::to_string(b.x1) + "," + std::to_string(b.y1) +
                                 ") outside [0, 1000]");
        }
    }
}

}  // namespace

Tensor layout_embedding(const TokenizedSequence& seq, const Parameters& params, std::size_t rows) {
    check_sequence(seq, rows, params);
    std::vector<std::int64_t> x0(rows), y0(rows), x1(rows), y1(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        x0[i] = seq.boxes[i].x0;
        y0[i] = seq.boxes[i].y0;
        x1[i] = seq.boxes[i].x1;
        y1[i] = seq.boxes[i].y1;
    }
    auto xs = add(embedding_gather(params.x_emb, x0), embedding_gather(params.x_emb, x1));
    auto ys = add(embedding_gather(params.y_emb, y0), embedding_gather(params.y_emb, y1));
    return add(xs, ys);
}

Tensor embedding_sum(const TokenizedSequence& seq, const Parameters& params, std::size_t rows) {
    auto layout = layout_embedding(seq, params, rows);
    std::span<const std::int64_t> ids(seq.token_ids.data(), rows);
    std::span<const std::int64_t> pos(seq.pos1d.data(), rows);
    auto text = add(embedding_gather(params.word_emb, ids), embedding_gather(params.pos1d_emb, pos));
    return add(text, layout);
}

Tensor input_embedding(const TokenizedSequence& seq, const Parameters& params, const ModelConfig& config,
                       const ForwardOptions& options) {
    const std::size_t rows = active_rows(seq, options);
    auto h = layer_norm(embedding_sum(seq, params, rows), params.emb_ln_gamma, params.emb_ln_beta,
                        config.layer_norm_eps);
    if (options.training && config.dropout > 0 && options.rng) h = dropout(h, config.dropout, options.rng->engine());
    return h;
}

Tensor encode(const TokenizedSequence& seq, const Parameters& params, const ModelConfig& config,
              const ForwardOptions& options) {
    const std::size_t rows = active_rows(seq, options);
    std::vector<std::uint8_t> key_valid(rows);
    for (std::size_t i = 0; i < rows; ++i) key_valid[i] = i < seq.length ? 1 : 0;
    const bool drop = options.training && config.dropout > 0 && options.rng;

    Tensor h = input_embedding(seq, params, config, options);
    for (const auto& layer : params.layers) {
        auto q = linear(h, layer.wq, layer.bq);
        auto k = linear(h, layer.wk, layer.bk);
        auto v = linear(h, layer.wv, layer.bv);
        auto attn = linear(multi_head_attention(q, k, v, config.num_heads, key_valid), layer.wo, layer.bo);
        if (drop) attn = dropout(attn, config.dropout, options.rng->engine());
        h = layer_norm(add(h, attn), layer.attn_ln_gamma, layer.attn_ln_beta, config.layer_norm_eps);

        auto ffn = linear(gelu(linear(h, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2);
        if (drop) ffn = dropout(ffn, config.dropout, options.rng->engine());
        h = layer_norm(add(h, ffn), layer.ffn_ln_gamma, layer.ffn_ln_beta, config.layer_norm_eps);
    }
    return h;
}

Tensor head_mlm(const Tensor& hidden, const Parameters& params) {
    return add_bias(matmul_nt(hidden, params.word_emb), params.mlm_bias);
}

Tensor head_cpc(const Tensor& hidden, const Parameters& params) {
    if (!params.cpc_w.defined()) throw config_error("head_cpc: the model was built without a CPC head");
    return linear(hidden, params.cpc_w, params.cpc_b);
}

Tensor head_tag(const Tensor& hidden, const Parameters& params) { return linear(hidden, params.tag_w, params.tag_b); }

Tensor head_span(const Tensor& hidden, const Parameters& params) {
    return linear(hidden, params.span_w, params.span_b);
}

Tensor head_cls(const Tensor& hidden, const Parameters& params) {
    const std::int64_t first = 0;
    return linear(select_rows(hidden, std::span<const std::int64_t>(&first, 1)), params.cls_w, params.cls_b);
}

Tensor select_rows(const Tensor& hidden, std::span<const std::int64_t> positions) {
    return embedding_gather(hidden, positions);
}

}  // namespace structlm
