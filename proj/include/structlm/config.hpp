#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "structlm/model.hpp"
#include "structlm/objectives.hpp"
#include "structlm/synth.hpp"
#include "structlm/tasks.hpp"
#include "structlm/train.hpp"

namespace structlm {

enum class Variant { full, no_cpc, word_level, no_pretrain };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

// Everything a command can be configured with. Keys are "<section>.<field>".
struct RunConfig {
    SynthConfig synth;
    std::size_t vocab_max_size = 512;
    ModelConfig model;  // vocab_size comes from the vocabulary
    PretrainConfig objective;
    TrainConfig pretrain;
    std::size_t eval_docs = 500;  // trailing corpus documents held out from pre-training
    FinetuneConfig finetune;
    std::vector<Variant> variants{Variant::full, Variant::no_cpc, Variant::word_level, Variant::no_pretrain};
    std::size_t ablate_train_docs = 32;  // tagging train-split documents each variant fine-tunes on; 0 = all
    std::size_t ablate_seeds = 3;        // fine-tuning seeds averaged per variant
    std::size_t ablate_finetune_steps = 800;  // replaces finetune.steps inside the ablation
    real gradcheck_init_std = real{0.3};

    RunConfig();
    void validate() const;
};

// Typed key/value bindings onto a RunConfig.
class ConfigSchema {
  public:
    struct Entry {
        std::string key;
        std::string type;  // shown in --help
        std::function<std::string()> get;
        std::function<void(std::string_view)> set;  // throws std::invalid_argument
    };

    explicit ConfigSchema(RunConfig& cfg);

    const std::vector<Entry>& entries() const { return entries_; }
    const Entry* find(std::string_view key) const;

    // Sets one key; throws config_error naming `where` on an unknown key or bad value.
    void set(std::string_view key, std::string_view value, std::string_view where);
    // "key = value" lines, '#' comments. Unknown or repeated keys are errors.
    void apply_text(std::string_view text, std::string_view source);
    void apply_file(const std::string& path);
    // Every key with its current value, one "key = value" line each.
    std::string render() const;

  private:
    std::vector<Entry> entries_;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace structlm
