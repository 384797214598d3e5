#include "structlm/doc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace structlm {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string box_str(const PixelBox& b) {
    std::ostringstream out;
    out << '(' << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1 << ')';
    return out.str();
}

// Returns true when the box had to be clamped.
bool clamp_box(PixelBox& b, double w, double h) {
    const PixelBox before = b;
    b.x0 = std::clamp(b.x0, 0.0, w);
    b.x1 = std::clamp(b.x1, 0.0, w);
    b.y0 = std::clamp(b.y0, 0.0, h);
    b.y1 = std::clamp(b.y1, 0.0, h);
    return !(before == b);
}

void check_ordering(const PixelBox& b, const std::string& where) {
    if (!(b.x0 <= b.x1 && b.y0 <= b.y1)) throw ingest_error(where + ": box " + box_str(b) + " has x0 > x1 or y0 > y1");
    if (!std::isfinite(b.x0) || !std::isfinite(b.y0) || !std::isfinite(b.x1) || !std::isfinite(b.y1)) {
        throw ingest_error(where + ": non-finite coordinate");
    }
}

int normalize_coord(double v, double extent) {
    const double scaled = std::floor(v * kCoordMax / extent);
    return static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(kCoordMax)));
}

}  // namespace

std::vector<std::string> validate_document(RawDocument& doc) {
    if (!(doc.page_width > 0) || !(doc.page_height > 0)) {
        throw ingest_error("document '" + doc.doc_id + "': page size must be positive");
    }
    std::vector<std::string> warnings;
    for (std::size_t i = 0; i < doc.cells.size(); ++i) {
        RawCell& cell = doc.cells[i];
        const std::string where = "document '" + doc.doc_id + "' cell " + std::to_string(i);
        const auto words = split_words(cell.text);
        if (words.empty()) throw ingest_error(where + ": empty text");
        check_ordering(cell.box, where);
        if (clamp_box(cell.box, doc.page_width, doc.page_height)) {
            warnings.push_back(where + ": box clamped to page bounds");
        }
        if (!cell.word_boxes.empty()) {
            if (cell.word_boxes.size() != words.size()) {
                throw ingest_error(where + ": " + std::to_string(cell.word_boxes.size()) + " word boxes for " +
                                   std::to_string(words.size()) + " words");
            }
            for (auto& wb : cell.word_boxes) {
                check_ordering(wb, where);
                if (clamp_box(wb, doc.page_width, doc.page_height)) {
                    warnings.push_back(where + ": word box clamped to page bounds");
                }
            }
        }
    }
    return warnings;
}

NormalizedBox normalize_box(const PixelBox& box, double page_w, double page_h) {
    if (!(page_w > 0) || !(page_h > 0)) throw ingest_error("normalize_box: page size must be positive");
    NormalizedBox out{normalize_coord(box.x0, page_w), normalize_coord(box.y0, page_h), normalize_coord(box.x1, page_w),
                      normalize_coord(box.y1, page_h)};
    if (out.x0 > out.x1) std::swap(out.x0, out.x1);
    if (out.y0 > out.y1) std::swap(out.y0, out.y1);
    return out;
}

std::string lowercase_ascii(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) words.push_back(lowercase_ascii(text.substr(i, j - i)));
        i = j;
    }
    return words;
}

std::vector<NormalizedBox> split_box_horizontally(const NormalizedBox& box, std::size_t count) {
    std::vector<NormalizedBox> out;
    out.reserve(count);
    const long width = box.x1 - box.x0;
    for (std::size_t k = 0; k < count; ++k) {
        const int left = box.x0 + static_cast<int>(width * static_cast<long>(k) / static_cast<long>(count));
        const int right = box.x0 + static_cast<int>(width * static_cast<long>(k + 1) / static_cast<long>(count));
        out.push_back({left, box.y0, right, box.y1});
    }
    return out;
}

std::vector<SerializedCell> serialize_cells(const RawDocument& doc) {
    std::vector<SerializedCell> cells;
    cells.reserve(doc.cells.size());
    std::size_t word_offset = 0;
    for (std::size_t i = 0; i < doc.cells.size(); ++i) {
        const RawCell& raw = doc.cells[i];
        SerializedCell cell;
        cell.source_index = i;
        cell.first_word = word_offset;
        cell.box = normalize_box(raw.box, doc.page_width, doc.page_height);
        cell.words = split_words(raw.text);
        if (raw.word_boxes.size() == cell.words.size() && !raw.word_boxes.empty()) {
            for (const auto& wb : raw.word_boxes) {
                cell.word_boxes.push_back(normalize_box(wb, doc.page_width, doc.page_height));
            }
        } else {
            cell.word_boxes = split_box_horizontally(cell.box, cell.words.size());
        }
        word_offset += cell.words.size();
        cells.push_back(std::move(cell));
    }
    std::stable_sort(cells.begin(), cells.end(), [](const SerializedCell& a, const SerializedCell& b) {
        if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
        return a.box.x0 < b.box.x0;
    });
    return cells;
}

// ---------------------------------------------------------------------------
// Vocab

namespace {
const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    return tokens;
}
}  // namespace

Vocab::Vocab() {
    for (const auto& t : reserved_tokens()) {
        ids_.emplace(t, static_cast<std::int64_t>(tokens_.size()));
        tokens_.push_back(t);
    }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    const auto& reserved = reserved_tokens();
    if (tokens.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
        throw ingest_error("vocab: reserved tokens [PAD] [UNK] [CLS] [SEP] [MASK] must occupy ids 0..4");
    }
    Vocab v;
    for (std::size_t i = reserved.size(); i < tokens.size(); ++i) {
        if (tokens[i].empty()) throw ingest_error("vocab: empty token at id " + std::to_string(i));
        if (!v.ids_.emplace(tokens[i], static_cast<std::int64_t>(i)).second) {
            throw ingest_error("vocab: duplicate token '" + tokens[i] + "'");
        }
    }
    v.tokens_ = std::move(tokens);
    return v;
}

bool Vocab::contains(std::string_view token) const { return ids_.find(std::string(token)) != ids_.end(); }

std::int64_t Vocab::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int64_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw std::out_of_range("vocab: id " + std::to_string(id) + " outside [0, " + std::to_string(tokens_.size()) +
                                ")");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

Vocab Vocab::deserialize(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        tokens.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    return from_tokens(std::move(tokens));
}

Vocab build_vocab(std::span<const RawDocument> corpus, std::size_t max_size) {
    if (max_size <= static_cast<std::size_t>(Vocab::kNumReserved)) {
        throw ingest_error("build_vocab: max_size must exceed the " + std::to_string(Vocab::kNumReserved) +
                           " reserved tokens");
    }
    std::map<std::string, std::size_t> counts;
    std::set<unsigned char> bytes;
    for (unsigned c = 0x21; c <= 0x7e; ++c) bytes.insert(static_cast<unsigned char>(c));
    for (const auto& doc : corpus) {
        for (const auto& cell : doc.cells) {
            for (auto& w : split_words(cell.text)) {
                for (unsigned char c : w) bytes.insert(c);
                ++counts[std::move(w)];
            }
        }
    }
    if (counts.empty()) throw ingest_error("build_vocab: corpus contains no words");

    std::vector<std::string> pieces;
    for (unsigned char c : bytes) pieces.emplace_back(1, static_cast<char>(c));
    for (unsigned char c : bytes) pieces.push_back("##" + std::string(1, static_cast<char>(c)));
    const std::size_t fixed = static_cast<std::size_t>(Vocab::kNumReserved) + pieces.size();
    if (max_size < fixed) {
        throw ingest_error("build_vocab: max_size " + std::to_string(max_size) + " cannot hold the " +
                           std::to_string(fixed) + " reserved and character tokens");
    }

    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [word, n] : counts) {
        if (word.size() == 1) continue;  // already a character piece
        ranked.emplace_back(word, n);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> tokens = reserved_tokens();
    const std::size_t word_budget = max_size - fixed;
    for (std::size_t i = 0; i < ranked.size() && i < word_budget; ++i) tokens.push_back(ranked[i].first);
    tokens.insert(tokens.end(), pieces.begin(), pieces.end());
    return Vocab::from_tokens(std::move(tokens));
}

std::vector<std::string> tokenize(std::string_view word, const Vocab& vocab) {
    constexpr std::size_t kMaxWordChars = 100;
    if (word.empty()) return {};
    if (word.size() > kMaxWordChars) return {"[UNK]"};
    std::vector<std::string> out;
    std::size_t start = 0;
    std::string candidate;
    while (start < word.size()) {
        std::size_t end = word.size();
        bool found = false;
        for (; end > start; --end) {
            candidate = start > 0 ? "##" : "";
            candidate.append(word.substr(start, end - start));
            if (vocab.contains(candidate)) {
                found = true;
                break;
            }
        }
        if (!found) return {"[UNK]"};
        out.push_back(candidate);
        start = end;
    }
    return out;
}

std::vector<std::int64_t> tokenize_ids(std::string_view word, const Vocab& vocab) {
    std::vector<std::int64_t> ids;
    for (const auto& t : tokenize(word, vocab)) ids.push_back(vocab.id(t));
    return ids;
}

std::string_view to_string(LayoutMode mode) { return mode == LayoutMode::cell_level ? "cell" : "word"; }

LayoutMode parse_layout_mode(std::string_view text) {
    if (text == "cell" || text == "cell-level") return LayoutMode::cell_level;
    if (text == "word" || text == "word-level") return LayoutMode::word_level;
    throw std::invalid_argument("unknown layout mode '" + std::string(text) + "' (expected cell or word)");
}

TokenizedSequence tokenize_document(const RawDocument& doc, const Vocab& vocab, LayoutMode mode) {
    if (doc.cells.empty()) throw ingest_error("document '" + doc.doc_id + "' has no cells");
    const auto cells = serialize_cells(doc);
    TokenizedSequence seq;
    for (const auto& cell : cells) seq.cell_boxes.push_back(cell.box);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& cell = cells[c];
        for (std::size_t w = 0; w < cell.words.size(); ++w) {
            const NormalizedBox box = mode == LayoutMode::cell_level ? cell.box : cell.word_boxes[w];
            const auto ids = tokenize_ids(cell.words[w], vocab);
            for (std::size_t t = 0; t < ids.size(); ++t) {
                seq.token_ids.push_back(ids[t]);
                seq.cell_index.push_back(static_cast<std::int64_t>(c));
                seq.word_index.push_back(static_cast<std::int64_t>(cell.first_word + w));
                seq.word_start.push_back(t == 0 ? 1 : 0);
                seq.boxes.push_back(box);
            }
        }
    }
    seq.length = seq.token_ids.size();
    return seq;
}

TokenizedSequence encode_document(const RawDocument& doc, const Vocab& vocab, std::size_t max_len, LayoutMode mode) {
    if (max_len < 3) throw std::invalid_argument("encode_document: max_len must be at least 3");
    if (doc.cells.empty()) throw ingest_error("encode_document: document '" + doc.doc_id + "' has no cells");
    const auto body = tokenize_document(doc, vocab, mode);

    TokenizedSequence seq;
    seq.cell_boxes = body.cell_boxes;
    auto push = [&](std::int64_t id, std::int64_t cell, std::int64_t word, std::uint8_t start, NormalizedBox box) {
        seq.token_ids.push_back(id);
        seq.cell_index.push_back(cell);
        seq.word_index.push_back(word);
        seq.word_start.push_back(start);
        seq.boxes.push_back(box);
    };
    push(Vocab::kCls, -1, -1, 0, {});
    const std::size_t body_len = std::min(body.length, max_len - 2);
    for (std::size_t i = 0; i < body_len; ++i) {
        push(body.token_ids[i], body.cell_index[i], body.word_index[i], body.word_start[i], body.boxes[i]);
    }
    push(Vocab::kSep, -1, -1, 0, {});
    seq.length = seq.token_ids.size();
    while (seq.token_ids.size() < max_len) push(Vocab::kPad, -1, -1, 0, {});
    seq.pos1d.resize(max_len);
    for (std::size_t i = 0; i < max_len; ++i) seq.pos1d[i] = static_cast<std::int64_t>(i);
    return seq;
}

}  // namespace structlm
