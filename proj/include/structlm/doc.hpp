#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace structlm {

// Malformed input documents (bad page size, empty cells, inconsistent word boxes).
class ingest_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCoordMax = 1000;

// Box in page pixel units.
struct PixelBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool operator==(const PixelBox&) const = default;
};

// Box on the 0..1000 page grid. (0,0,0,0) marks special tokens and
// position-masked cells.
struct NormalizedBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool is_empty() const { return x0 == 0 && y0 == 0 && x1 == 0 && y1 == 0; }
    bool valid() const {
        return 0 <= x0 && x0 <= x1 && x1 <= kCoordMax && 0 <= y0 && y0 <= y1 && y1 <= kCoordMax;
    }
    auto operator<=>(const NormalizedBox&) const = default;
};

struct RawCell {
    std::string text;
    PixelBox box;
    // One box per whitespace-separated word, or empty.
    std::vector<PixelBox> word_boxes;
};

struct RawDocument {
    std::string doc_id;
    double page_width = 0;
    double page_height = 0;
    std::vector<RawCell> cells;
};

// Checks document invariants and clamps cell boxes into the page. Returns one
// warning per clamped box; throws ingest_error on unrecoverable input.
std::vector<std::string> validate_document(RawDocument& doc);

// floor(x / page_w * 1000) per coordinate, clamped to [0, 1000].
NormalizedBox normalize_box(const PixelBox& box, double page_w, double page_h);

std::string lowercase_ascii(std::string_view text);
// Lowercased whitespace-separated words.
std::vector<std::string> split_words(std::string_view text);

// A cell in reading order with its text already split into words.
struct SerializedCell {
    std::size_t source_index = 0;  // position in RawDocument::cells
    std::size_t first_word = 0;    // file-order index of the cell's first word
    NormalizedBox box;
    std::vector<std::string> words;
    std::vector<NormalizedBox> word_boxes;  // one per word; equal split when absent
};

// Stable order by (y0, x0) of the normalized box, ties by file order.
std::vector<SerializedCell> serialize_cells(const RawDocument& doc);

// Equal-width horizontal split of `box` into `count` word boxes.
std::vector<NormalizedBox> split_box_horizontally(const NormalizedBox& box, std::size_t count);

class Vocab {
  public:
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kUnk = 1;
    static constexpr std::int64_t kCls = 2;
    static constexpr std::int64_t kSep = 3;
    static constexpr std::int64_t kMask = 4;
    static constexpr std::int64_t kNumReserved = 5;

    // Reserved tokens only.
    Vocab();
    // Reserved tokens must come first, in id order.
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    bool contains(std::string_view token) const;
    std::int64_t id(std::string_view token) const;  // kUnk when absent
    const std::string& token(std::int64_t id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }
    bool is_special(std::int64_t id) const { return id >= 0 && id < kNumReserved; }

    // One token per line.
    std::string serialize() const;
    static Vocab deserialize(std::string_view text);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int64_t> ids_;
};

// Reserved tokens, then whole words by descending frequency (ties
// lexicographic), then a single-character piece and a "##" piece for every
// printable ASCII character and every other byte seen in the corpus.
Vocab build_vocab(std::span<const RawDocument> corpus, std::size_t max_size);

// Greedy longest-match-first WordPiece. A word with no complete segmentation
// becomes a single [UNK].
std::vector<std::string> tokenize(std::string_view word, const Vocab& vocab);
std::vector<std::int64_t> tokenize_ids(std::string_view word, const Vocab& vocab);

enum class LayoutMode { cell_level, word_level };

std::string_view to_string(LayoutMode mode);
LayoutMode parse_layout_mode(std::string_view text);

// One document window: [CLS] tokens [SEP] [PAD]... of length max_len.
struct TokenizedSequence {
    std::vector<std::int64_t> token_ids;
    std::vector<std::int64_t> pos1d;
    std::vector<std::int64_t> cell_index;  // serialized cell index, -1 for special tokens
    std::vector<std::int64_t> word_index;  // file-order word index, -1 for special tokens
    std::vector<std::uint8_t> word_start;  // 1 on the first subword of a word
    std::vector<NormalizedBox> boxes;
    std::vector<NormalizedBox> cell_boxes;  // per serialized cell, independent of layout mode
    std::size_t length = 0;  // tokens before padding, including [CLS] and [SEP]

    std::size_t max_len() const { return token_ids.size(); }
    bool is_special(std::size_t pos) const { return cell_index[pos] < 0; }
};

// All tokens of the serialized cells with no special tokens, padding or
// position ids; `length` is the token count.
TokenizedSequence tokenize_document(const RawDocument& doc, const Vocab& vocab, LayoutMode mode);

// Tokens of the serialized cells between [CLS] and [SEP], truncated to fit
// `max_len`, then padded. Cell-level mode gives every token its cell box;
// word-level mode gives each token its word box.
TokenizedSequence encode_document(const RawDocument& doc, const Vocab& vocab, std::size_t max_len, LayoutMode mode);

}  // namespace structlm
