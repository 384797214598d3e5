#pragma once

#include <set>
#include <string>
#include <vector>

#include "structlm/doc.hpp"
#include "structlm/model.hpp"
#include "structlm/random.hpp"

namespace structlm::testing {

inline const std::vector<std::string>& fixture_lexicon() {
    static const std::vector<std::string> words{"total", "date",  "amount", "invoice", "name", "acme", "corp",
                                                "due",   "paid",  "x9",     "ref",     "order", "ship", "to"};
    return words;
}

// Random single-page document; cells sit on distinct slots of an 8 x 40 grid
// so that no two cells share a box.
inline RawDocument random_document(Rng& rng, std::size_t num_cells, std::size_t max_words = 3) {
    const auto& lexicon = fixture_lexicon();
    RawDocument doc{"rand-" + std::to_string(rng.next_u64() % 100000), 2000, 2000, {}};
    std::set<std::pair<std::uint64_t, std::uint64_t>> used;
    while (doc.cells.size() < num_cells) {
        const auto col = rng.below(8), row = rng.below(40);
        if (!used.insert({col, row}).second) continue;
        RawCell cell;
        const std::size_t words = 1 + rng.below(max_words);
        for (std::size_t w = 0; w < words; ++w) {
            if (w) cell.text += ' ';
            cell.text += lexicon[rng.below(lexicon.size())];
        }
        const double x = static_cast<double>(col) * 250, y = static_cast<double>(row) * 50;
        cell.box = {x, y, x + 200, y + 30};
        doc.cells.push_back(cell);
    }
    return doc;
}

inline Vocab fixture_vocab() {
    Rng rng(1234);
    std::vector<RawDocument> corpus;
    for (int i = 0; i < 4; ++i) corpus.push_back(random_document(rng, 20));
    return build_vocab(corpus, 260);
}

inline ModelConfig tiny_model_config(std::size_t vocab_size) {
    ModelConfig c;
    c.num_layers = 2;
    c.num_heads = 2;
    c.hidden_d = 16;
    c.ffn_d = 32;
    c.vocab_size = vocab_size;
    c.max_len = 24;
    return c;
}

}  // namespace structlm::testing
