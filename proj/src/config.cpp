#include "structlm/config.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace structlm {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(std::string_view text) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || text.empty()) {
        throw std::invalid_argument("expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return v;
}

double parse_f64(std::string_view text) {
    double v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || text.empty()) {
        throw std::invalid_argument("expected a number, got '" + std::string(text) + "'");
    }
    return v;
}

bool parse_bool(std::string_view text) {
    if (text == "true" || text == "on" || text == "1") return true;
    if (text == "false" || text == "off" || text == "0") return false;
    throw std::invalid_argument("expected true/false/on/off, got '" + std::string(text) + "'");
}

std::vector<std::string_view> split_list(std::string_view text) {
    std::vector<std::string_view> out;
    while (!text.empty()) {
        const auto comma = text.find(',');
        const auto item = trim(text.substr(0, comma));
        if (item.empty()) throw std::invalid_argument("empty item in list");
        out.push_back(item);
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    if (out.empty()) throw std::invalid_argument("expected a non-empty comma-separated list");
    return out;
}

template <class T, class Fmt>
std::string join(const std::vector<T>& items, Fmt fmt) {
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) out += ',';
        out += fmt(item);
    }
    return out;
}

std::string_view to_string(SamplingMode m) { return m == SamplingMode::bernoulli ? "bernoulli" : "fixed_count"; }

SamplingMode parse_sampling(std::string_view text) {
    if (text == "bernoulli") return SamplingMode::bernoulli;
    if (text == "fixed_count") return SamplingMode::fixed_count;
    throw std::invalid_argument("expected bernoulli or fixed_count, got '" + std::string(text) + "'");
}

constexpr std::string_view kRealName = sizeof(real) == sizeof(double) ? "double" : "float";

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_cpc: return "no_cpc";
    case Variant::word_level: return "word_level";
    case Variant::no_pretrain: return "no_pretrain";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    for (auto v : {Variant::full, Variant::no_cpc, Variant::word_level, Variant::no_pretrain}) {
        if (to_string(v) == name) return v;
    }
    throw std::invalid_argument("unknown variant '" + std::string(name) +
                                "' (valid: full, no_cpc, word_level, no_pretrain)");
}

RunConfig::RunConfig() {
    synth.num_task_docs = 3000;
    pretrain.steps = 3000;
    finetune.train.steps = 2400;
    finetune.train.batch_size = 8;
    finetune.train.lr = real{1e-3};
    finetune.train.warmup_frac = 0.1;
}

void RunConfig::validate() const {
    synth.validate();
    objective.validate();
    pretrain.validate();
    finetune.train.validate();
    if (vocab_max_size < 128) throw config_error("vocab.max_size must be at least 128");
    if (eval_docs >= synth.num_docs) throw config_error("pretrain.eval_docs must be smaller than synth.num_docs");
    if (finetune.max_answer_len == 0) throw config_error("finetune.max_answer_len must be positive");
    if (variants.empty()) throw config_error("ablate.variants must not be empty");
    if (ablate_seeds == 0) throw config_error("ablate.seeds must be positive");
    if (ablate_finetune_steps == 0) throw config_error("ablate.finetune_steps must be positive");
    if (!(gradcheck_init_std > 0)) throw config_error("gradcheck.init_std must be positive");
    if (objective.num_areas != model.num_areas) throw config_error("pretrain.num_areas and model.num_areas differ");
}

ConfigSchema::ConfigSchema(RunConfig& c) {
    auto size_key = [&](std::string key, std::size_t& field) {
        entries_.push_back({std::move(key), "int", [&field] { return std::to_string(field); },
                            [&field](std::string_view v) { field = static_cast<std::size_t>(parse_u64(v)); }});
    };
    auto u64_key = [&](std::string key, std::uint64_t& field) {
        entries_.push_back({std::move(key), "int", [&field] { return std::to_string(field); },
                            [&field](std::string_view v) { field = parse_u64(v); }});
    };
    auto double_key = [&](std::string key, double& field) {
        entries_.push_back({std::move(key), "float", [&field] { return format_double(field); },
                            [&field](std::string_view v) { field = parse_f64(v); }});
    };
    auto real_key = [&](std::string key, real& field) {
        entries_.push_back({std::move(key), "float", [&field] { return format_double(static_cast<double>(field)); },
                            [&field](std::string_view v) { field = static_cast<real>(parse_f64(v)); }});
    };
    auto bool_key = [&](std::string key, bool& field) {
        entries_.push_back({std::move(key), "bool", [&field] { return std::string(field ? "true" : "false"); },
                            [&field](std::string_view v) { field = parse_bool(v); }});
    };
    auto train_keys = [&](const std::string& prefix, TrainConfig& t) {
        size_key(prefix + ".steps", t.steps);
        size_key(prefix + ".batch_size", t.batch_size);
        real_key(prefix + ".lr", t.lr);
        double_key(prefix + ".warmup_frac", t.warmup_frac);
        u64_key(prefix + ".seed", t.seed);
        size_key(prefix + ".eval_every", t.eval_every);
    };

    u64_key("synth.seed", c.synth.seed);
    size_key("synth.num_docs", c.synth.num_docs);
    size_key("synth.num_task_docs", c.synth.num_task_docs);
    size_key("synth.grid_rows", c.synth.grid_rows);
    size_key("synth.grid_cols", c.synth.grid_cols);
    size_key("synth.min_pairs", c.synth.min_pairs);
    size_key("synth.max_pairs", c.synth.max_pairs);
    double_key("synth.noise_rate", c.synth.noise_rate);
    double_key("synth.page_width", c.synth.page_width);
    double_key("synth.page_height", c.synth.page_height);
    entries_.push_back({"synth.templates", "list",
                        [&c] { return join(c.synth.templates, [](DocTemplate t) { return std::string(to_string(t)); }); },
                        [&c](std::string_view v) {
                            std::vector<DocTemplate> out;
                            for (auto item : split_list(v)) out.push_back(parse_template(item));
                            c.synth.templates = out;
                        }});
    size_key("vocab.max_size", c.vocab_max_size);

    size_key("model.num_layers", c.model.num_layers);
    size_key("model.num_heads", c.model.num_heads);
    size_key("model.hidden_d", c.model.hidden_d);
    size_key("model.ffn_d", c.model.ffn_d);
    size_key("model.max_len", c.model.max_len);
    size_key("model.num_areas", c.model.num_areas);
    size_key("model.num_doc_classes", c.model.num_doc_classes);
    entries_.push_back({"model.layout_mode", "cell|word",
                        [&c] { return std::string(to_string(c.model.layout_mode)); },
                        [&c](std::string_view v) { c.model.layout_mode = parse_layout_mode(v); }});
    real_key("model.dropout", c.model.dropout);
    real_key("model.init_std", c.model.init_std);
    real_key("model.layer_norm_eps", c.model.layer_norm_eps);

    bool_key("pretrain.cpc", c.objective.cpc_enabled);
    double_key("pretrain.mask_rate", c.objective.mask_rate);
    double_key("pretrain.mask_token_frac", c.objective.mask_token_frac);
    double_key("pretrain.random_frac", c.objective.random_frac);
    double_key("pretrain.keep_frac", c.objective.keep_frac);
    double_key("pretrain.cell_select_rate", c.objective.cell_select_rate);
    double_key("pretrain.zero_box_frac", c.objective.zero_box_frac);
    double_key("pretrain.keep_box_frac", c.objective.keep_box_frac);
    size_key("pretrain.num_areas", c.objective.num_areas);
    real_key("pretrain.mvlm_weight", c.objective.mvlm_weight);
    real_key("pretrain.cpc_weight", c.objective.cpc_weight);
    entries_.push_back({"pretrain.sampling", "bernoulli|fixed_count",
                        [&c] { return std::string(to_string(c.objective.sampling)); },
                        [&c](std::string_view v) { c.objective.sampling = parse_sampling(v); }});
    size_key("pretrain.eval_docs", c.eval_docs);

    train_keys("train", c.pretrain);
    entries_.push_back({"train.precision", "double|float", [] { return std::string(kRealName); },
                        [](std::string_view v) {
                            if (v != "double" && v != "float") {
                                throw std::invalid_argument("expected double or float, got '" + std::string(v) + "'");
                            }
                            if (v != kRealName) {
                                throw std::invalid_argument("this build computes in " + std::string(kRealName) +
                                                            "; reconfigure with -DSTRUCTLM_REAL=" + std::string(v));
                            }
                        }});
    train_keys("finetune", c.finetune.train);
    size_key("finetune.max_answer_len", c.finetune.max_answer_len);

    entries_.push_back({"ablate.variants", "list",
                        [&c] { return join(c.variants, [](Variant v) { return std::string(to_string(v)); }); },
                        [&c](std::string_view v) {
                            std::vector<Variant> out;
                            for (auto item : split_list(v)) out.push_back(parse_variant(item));
                            c.variants = out;
                        }});
    size_key("ablate.train_docs", c.ablate_train_docs);
    size_key("ablate.seeds", c.ablate_seeds);
    size_key("ablate.finetune_steps", c.ablate_finetune_steps);
    real_key("gradcheck.init_std", c.gradcheck_init_std);
}

const ConfigSchema::Entry* ConfigSchema::find(std::string_view key) const {
    for (const auto& e : entries_) {
        if (e.key == key) return &e;
    }
    return nullptr;
}

void ConfigSchema::set(std::string_view key, std::string_view value, std::string_view where) {
    const auto* e = find(key);
    if (!e) throw config_error(std::string(where) + ": unknown key '" + std::string(key) + "'");
    try {
        e->set(value);
    } catch (const std::invalid_argument& err) {
        throw config_error(std::string(where) + ": " + std::string(key) + ": " + err.what());
    }
}

void ConfigSchema::apply_text(std::string_view text, std::string_view source) {
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty() || line_no == 0) {
        ++line_no;
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) {
            if (text.empty()) break;
            continue;
        }
        const std::string where = std::string(source) + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw config_error(where + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!seen.insert(std::string(key)).second) throw config_error(where + ": key '" + std::string(key) + "' set twice");
        set(key, value, where);
    }
}

void ConfigSchema::apply_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read config file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    apply_text(text.str(), path);
}

std::string ConfigSchema::render() const {
    std::string out;
    for (const auto& e : entries_) out += e.key + " = " + e.get() + "\n";
    return out;
}

}  // namespace structlm
