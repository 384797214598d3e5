#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "structlm/doc.hpp"
#include "structlm/random.hpp"
#include "structlm/tasks.hpp"

namespace structlm {

enum class DocTemplate : std::uint8_t { form, letter, table };

std::string_view to_string(DocTemplate t);
DocTemplate parse_template(std::string_view name);

enum class CellRole : std::uint8_t { header, key, value, distractor, body };

struct SynthConfig {
    std::uint64_t seed = 7;
    std::size_t num_docs = 5000;     // pre-training documents
    std::size_t num_task_docs = 600;  // documents per fine-tuning dataset
    // Key/value slots: `grid_rows` rows, each holding `grid_cols` key/value pairs.
    std::size_t grid_rows = 12;
    std::size_t grid_cols = 2;
    std::size_t min_pairs = 7;
    std::size_t max_pairs = 11;
    double noise_rate = 0.1;  // expected distractor cells per key/value pair
    double page_width = 1700;
    double page_height = 2200;
    std::vector<DocTemplate> templates{DocTemplate::form, DocTemplate::letter, DocTemplate::table};

    void validate() const;
};

// A generated document plus the structure it was built from.
struct SynthDoc {
    RawDocument doc;
    DocTemplate kind = DocTemplate::form;
    std::vector<CellRole> roles;          // per cell
    std::vector<std::int64_t> key_of;     // value cell -> its key cell, else -1
    std::vector<std::int64_t> grammar;    // value cell -> value grammar id, else -1
    std::vector<std::int64_t> key_index;  // key cell -> key lexicon index, else -1
};

struct KeySpec {
    std::string_view name;
    std::int64_t grammar;
};

const std::vector<KeySpec>& key_lexicon();
std::size_t grammar_count();

// Form page: a header in the top band, then key cells each followed by a
// value cell to its right, then distractors in free slots.
SynthDoc gen_pretrain_doc(const SynthConfig& cfg, Rng& rng);
SynthDoc gen_document(const SynthConfig& cfg, DocTemplate kind, Rng& rng);

// cfg.num_docs form pages, document i seeded from (cfg.seed, i).
std::vector<SynthDoc> gen_pretrain_corpus(const SynthConfig& cfg);

// The first 80% of examples are the train split, the rest eval.
TaskDataset gen_form_dataset(const SynthConfig& cfg, Rng& rng, std::size_t n);
TaskDataset gen_qa_dataset(const SynthConfig& cfg, Rng& rng, std::size_t n);
// Labels cycle through cfg.templates in order.
TaskDataset gen_cls_dataset(const SynthConfig& cfg, Rng& rng, std::size_t n);

// Word-level BIESO labels of a form page.
std::vector<std::int64_t> form_word_labels(const SynthDoc& doc);

}  // namespace structlm
