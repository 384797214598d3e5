#include "structlm/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace structlm {

namespace {

enum Grammar : std::int64_t {
    g_date,
    g_amount,
    g_code,
    g_person,
    g_company,
    g_city,
    g_status,
    g_method,
    g_carrier,
    g_priority,
    g_department,
    g_quantity,
    g_terms,
    g_count
};

const std::vector<KeySpec> kKeys{
    {"invoice date", g_date},      {"due date", g_date},         {"order date", g_date},
    {"ship date", g_date},         {"issue date", g_date},       {"start date", g_date},
    {"total", g_amount},           {"subtotal", g_amount},       {"tax", g_amount},
    {"amount due", g_amount},      {"balance", g_amount},        {"deposit", g_amount},
    {"unit price", g_amount},      {"discount", g_amount},       {"invoice no", g_code},
    {"order no", g_code},          {"account no", g_code},       {"reference", g_code},
    {"po number", g_code},         {"tracking no", g_code},      {"customer", g_person},
    {"contact", g_person},         {"approved by", g_person},    {"prepared by", g_person},
    {"manager", g_person},         {"vendor", g_company},        {"supplier", g_company},
    {"bill to", g_company},        {"ship to", g_company},       {"city", g_city},
    {"origin", g_city},            {"destination", g_city},      {"status", g_status},
    {"payment method", g_method},  {"ship via", g_carrier},      {"priority", g_priority},
    {"department", g_department},  {"quantity", g_quantity},     {"units", g_quantity},
    {"terms", g_terms},
};

const std::vector<std::string_view> kDates{
    "03-01-2019", "17-02-2019", "28-03-2019", "09-04-2019", "21-05-2019", "14-06-2019",
    "02-07-2020", "19-08-2020", "25-09-2020", "11-10-2020", "06-11-2020", "30-12-2020",
    "15-01-2021", "08-02-2021", "22-03-2021", "04-04-2021", "27-05-2021", "13-06-2021",
    "01-07-2022", "18-08-2022", "24-09-2022", "10-10-2022", "05-11-2022", "29-12-2022"};
const std::vector<std::string_view> kAmounts{
    "$12.50",    "$48.00",    "$75.25",    "$120.00",   "$199.99",   "$250.40",
    "$312.75",   "$405.10",   "$560.00",   "$689.30",   "$742.15",   "$880.60",
    "$915.45",   "$1,040.00", "$1,275.80", "$1,499.95", "$1,820.20", "$2,150.00",
    "$2,480.35", "$3,005.70", "$3,640.00", "$4,215.55", "$5,980.25", "$7,300.00"};
const std::vector<std::string_view> kCodes{
    "ax-1042", "ax-2187", "bk-3305", "bk-4419", "cm-5021", "cm-6634", "dr-7250", "dr-8817",
    "ev-9043", "ev-1158", "fn-2296", "fn-3374", "gt-4482", "gt-5590", "hq-6611", "hq-7729",
    "jl-8834", "jl-9946", "kp-1057", "kp-2163", "mr-3278", "mr-4386", "nw-5497", "nw-6502"};
const std::vector<std::string_view> kFirstNames{"john",  "maria", "david", "linda", "james", "susan",
                                                "peter", "alice", "frank", "grace", "henry", "nancy"};
const std::vector<std::string_view> kLastNames{"smith",  "garcia", "miller", "wilson", "moore", "taylor",
                                               "anderson", "thomas", "jackson", "white", "harris", "clark"};
const std::vector<std::string_view> kCompanyNames{"acme",   "globex", "initech", "umbrella", "stark",  "wayne",
                                                  "tyrell", "cyberdyne", "hooli", "vandelay", "wonka", "soylent"};
const std::vector<std::string_view> kCompanySuffixes{"corp", "inc", "ltd", "co"};
const std::vector<std::string_view> kCities{"boston", "denver", "austin", "chicago", "seattle", "phoenix",
                                            "dallas", "atlanta", "portland", "miami", "houston", "detroit",
                                            "memphis", "omaha", "tucson", "fresno"};
const std::vector<std::string_view> kStatuses{"paid",     "pending", "overdue", "shipped",
                                              "approved", "rejected", "open",   "closed"};
const std::vector<std::string_view> kMethods{"wire", "check", "cash", "card"};
const std::vector<std::string_view> kCarriers{"ground", "air", "freight", "express"};
const std::vector<std::string_view> kPriorities{"high", "medium", "low", "urgent"};
const std::vector<std::string_view> kDepartments{"sales",    "finance",   "legal",      "shipping",
                                                 "support",  "research",  "operations", "marketing"};
const std::vector<std::string_view> kQuantities{"12",  "24",  "36",  "48",  "60",  "75",  "90",  "100",
                                                "120", "150", "200", "250", "300", "400", "500", "750"};
const std::vector<std::string_view> kTerms{"net 30", "net 45", "net 60", "due on receipt", "prepaid"};

const std::vector<std::string_view> kHeaders{
    "invoice",       "purchase order", "shipping notice",    "payment receipt", "expense report", "service request",
    "account statement", "delivery note", "order confirmation", "quotation",  "credit memo",    "work order"};
const std::vector<std::string_view> kFooters{"page 1 of 2",      "thank you for your business", "confidential",
                                             "see reverse side", "continued",                   "original copy",
                                             "internal use only", "do not detach"};
const std::vector<std::string_view> kLetterWords{
    "we",      "are",   "pleased", "to",     "inform", "you",     "that",   "your",      "request",
    "has",     "been",  "received", "please", "find",  "attached", "the",   "documents", "for",
    "review",  "and",   "contact", "us",     "with",   "any",      "questions", "about", "this",
    "letter",  "order", "account"};
const std::vector<std::string_view> kProducts{"paper", "toner",  "cable",   "monitor", "desk",
                                              "chair", "laptop", "printer", "ink",     "folder"};
const std::array<std::string_view, 5> kColumns{"item", "description", "qty", "price", "amount"};

constexpr double kCharWidth = 16;
constexpr double kCellHeight = 40;

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<std::size_t>(rng.below(v.size()))];
}

std::string value_text(std::int64_t grammar, Rng& rng) {
    switch (grammar) {
    case g_date: return std::string(pick(kDates, rng));
    case g_amount: return std::string(pick(kAmounts, rng));
    case g_code: return std::string(pick(kCodes, rng));
    case g_person: return std::string(pick(kFirstNames, rng)) + " " + std::string(pick(kLastNames, rng));
    case g_company: return std::string(pick(kCompanyNames, rng)) + " " + std::string(pick(kCompanySuffixes, rng));
    case g_city: return std::string(pick(kCities, rng));
    case g_status: return std::string(pick(kStatuses, rng));
    case g_method: return std::string(pick(kMethods, rng));
    case g_carrier: return std::string(pick(kCarriers, rng));
    case g_priority: return std::string(pick(kPriorities, rng));
    case g_department: return std::string(pick(kDepartments, rng));
    case g_quantity: return std::string(pick(kQuantities, rng));
    case g_terms: return std::string(pick(kTerms, rng));
    default: throw contract_error("unknown value grammar");
    }
}

std::size_t word_count(const std::string& text) { return split_words(text).size(); }

// Builds cells while keeping the metadata arrays in step.
struct Builder {
    SynthDoc out;
    const SynthConfig& cfg;

    std::size_t add(const std::string& text, double x0, double y0, CellRole role) {
        const double width = kCharWidth * static_cast<double>(text.size()) + 8;
        PixelBox box{x0, y0, std::min(x0 + width, cfg.page_width - 1), y0 + kCellHeight};
        RawCell cell{text, box, {}};
        const auto n = word_count(text);
        const double step = (box.x1 - box.x0) / static_cast<double>(n);
        for (std::size_t w = 0; w < n; ++w) {
            cell.word_boxes.push_back({box.x0 + step * static_cast<double>(w), box.y0,
                                       w + 1 == n ? box.x1 : box.x0 + step * static_cast<double>(w + 1), box.y1});
        }
        out.doc.cells.push_back(std::move(cell));
        out.roles.push_back(role);
        out.key_of.push_back(-1);
        out.grammar.push_back(-1);
        out.key_index.push_back(-1);
        return out.doc.cells.size() - 1;
    }
};

double slot_y(const SynthConfig& cfg, std::size_t row, Rng& rng) {
    const std::size_t per_band = (cfg.grid_rows + 3) / 4;
    const std::size_t band = row / per_band, k = row % per_band;
    const double band_h = cfg.page_height / 4;
    const double frac = per_band > 1 ? 0.27 + 0.475 * static_cast<double>(k) / static_cast<double>(per_band - 1) : 0.45;
    return band_h * static_cast<double>(band) + band_h * frac + rng.uniform(-15, 15);
}

double key_x(const SynthConfig& cfg, std::size_t col, Rng& rng) {
    return cfg.page_width * static_cast<double>(col) / static_cast<double>(cfg.grid_cols) + 80 + rng.uniform(0, 40);
}

double value_x(const SynthConfig& cfg, std::size_t col, Rng& rng) {
    const double span = cfg.page_width / static_cast<double>(cfg.grid_cols);
    return span * static_cast<double>(col) + 0.52 * span + rng.uniform(0, 30);
}

void add_header(Builder& b, Rng& rng) {
    b.add(std::string(pick(kHeaders, rng)), 100 + rng.uniform(0, 100), 30 + rng.uniform(0, 50), CellRole::header);
}

std::size_t home_slot(std::size_t key, std::size_t slots) { return (key * 7) % slots; }

SynthDoc gen_form(const SynthConfig& cfg, Rng& rng) {
    Builder b{{}, cfg};
    b.out.kind = DocTemplate::form;
    add_header(b, rng);

    const std::size_t slots = cfg.grid_rows * cfg.grid_cols;
    const std::size_t pairs = cfg.min_pairs + rng.below(cfg.max_pairs - cfg.min_pairs + 1);
    std::vector<std::size_t> keys(kKeys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
    for (std::size_t i = keys.size(); i > 1; --i) std::swap(keys[i - 1], keys[rng.below(i)]);
    std::vector<std::int64_t> slot_key(slots, -1);
    std::size_t placed = 0;
    for (std::size_t key : keys) {
        if (placed == pairs) break;
        const std::size_t s = home_slot(key, slots);
        if (slot_key[s] >= 0) continue;
        slot_key[s] = static_cast<std::int64_t>(key);
        ++placed;
    }

    std::vector<std::size_t> free_slots;
    for (std::size_t s = 0; s < slots; ++s) {
        if (slot_key[s] < 0) {
            free_slots.push_back(s);
            continue;
        }
        const auto& spec = kKeys[static_cast<std::size_t>(slot_key[s])];
        const std::size_t row = s / cfg.grid_cols, col = s % cfg.grid_cols;
        const double y = slot_y(cfg, row, rng);
        const auto k = b.add(std::string(spec.name), key_x(cfg, col, rng), y, CellRole::key);
        b.out.key_index[k] = slot_key[s];
        const auto v = b.add(value_text(spec.grammar, rng), value_x(cfg, col, rng), y + rng.uniform(-4, 4),
                             CellRole::value);
        b.out.key_of[v] = static_cast<std::int64_t>(k);
        b.out.grammar[v] = spec.grammar;
    }

    std::size_t distractors = 0;
    for (std::size_t i = 0; i < pairs; ++i) distractors += rng.bernoulli(cfg.noise_rate) ? 1 : 0;
    for (std::size_t i = free_slots.size(); i > 1; --i) std::swap(free_slots[i - 1], free_slots[rng.below(i)]);
    for (std::size_t i = 0; i < distractors && i < free_slots.size(); ++i) {
        const std::size_t s = free_slots[i];
        const std::size_t row = s / cfg.grid_cols, col = s % cfg.grid_cols;
        const bool value_like = rng.bernoulli(0.5);
        const std::string text =
            value_like ? value_text(static_cast<std::int64_t>(rng.below(g_count)), rng) : std::string(pick(kFooters, rng));
        const double x = rng.bernoulli(0.5) ? key_x(cfg, col, rng) : value_x(cfg, col, rng);
        b.add(text, x, slot_y(cfg, row, rng), CellRole::distractor);
    }
    return std::move(b.out);
}

std::string letter_line(Rng& rng) {
    std::string line;
    const std::size_t n = 5 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) {
        if (i) line += ' ';
        line += pick(kLetterWords, rng);
    }
    return line;
}

SynthDoc gen_letter(const SynthConfig& cfg, Rng& rng) {
    Builder b{{}, cfg};
    b.out.kind = DocTemplate::letter;
    b.add(value_text(g_company, rng), 100 + rng.uniform(0, 100), 30 + rng.uniform(0, 50), CellRole::header);
    const auto date = b.add(value_text(g_date, rng), 1250 + rng.uniform(0, 150), 200 + rng.uniform(0, 40),
                            CellRole::value);
    b.out.grammar[date] = g_date;
    double y = 330 + rng.uniform(0, 40);
    if (rng.bernoulli(0.5)) {
        const auto k = b.add("reference", 100 + rng.uniform(0, 40), y, CellRole::key);
        b.out.key_index[k] = 17;
        const auto v = b.add(value_text(g_code, rng), 320 + rng.uniform(0, 30), y, CellRole::value);
        b.out.key_of[v] = static_cast<std::int64_t>(k);
        b.out.grammar[v] = g_code;
        y += 110;
    }
    b.add("dear " + value_text(g_person, rng), 100 + rng.uniform(0, 40), y, CellRole::body);
    y += 120;
    const std::size_t lines = 3 + rng.below(3);
    for (std::size_t i = 0; i < lines; ++i) {
        b.add(letter_line(rng), 100 + rng.uniform(0, 20), y, CellRole::body);
        y += 80 + rng.uniform(0, 20);
    }
    y += 100;
    b.add("sincerely", 100 + rng.uniform(0, 40), y, CellRole::body);
    const auto name = b.add(value_text(g_person, rng), 100 + rng.uniform(0, 40), y + 90, CellRole::value);
    b.out.grammar[name] = g_person;
    return std::move(b.out);
}

SynthDoc gen_table(const SynthConfig& cfg, Rng& rng) {
    Builder b{{}, cfg};
    b.out.kind = DocTemplate::table;
    add_header(b, rng);
    double y = 200;
    if (rng.bernoulli(0.6)) {
        for (std::int64_t key : {14, 0}) {
            const auto& spec = kKeys[static_cast<std::size_t>(key)];
            const auto k = b.add(std::string(spec.name), 100, y, CellRole::key);
            b.out.key_index[k] = key;
            const auto v = b.add(value_text(spec.grammar, rng), 400, y, CellRole::value);
            b.out.key_of[v] = static_cast<std::int64_t>(k);
            b.out.grammar[v] = spec.grammar;
            y += 70;
        }
    }
    const std::array<double, 5> xs{100, 300, 900, 1150, 1400};
    const double top = 450 + rng.uniform(0, 60);
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
        b.add(std::string(kColumns[c]), xs[c], top, CellRole::key);
    }
    const std::size_t rows = 3 + rng.below(6);
    for (std::size_t r = 0; r < rows; ++r) {
        const double ry = top + 90 + 80 * static_cast<double>(r);
        b.add(std::to_string(r + 1), xs[0], ry, CellRole::value);
        b.add(std::string(pick(kProducts, rng)) + " " + std::string(pick(kProducts, rng)), xs[1], ry, CellRole::value);
        const auto q = b.add(value_text(g_quantity, rng), xs[2], ry, CellRole::value);
        b.out.grammar[q] = g_quantity;
        const auto p = b.add(value_text(g_amount, rng), xs[3], ry, CellRole::value);
        b.out.grammar[p] = g_amount;
        const auto a = b.add(value_text(g_amount, rng), xs[4], ry, CellRole::value);
        b.out.grammar[a] = g_amount;
    }
    const double ty = top + 90 + 80 * static_cast<double>(rows) + 60;
    const auto k = b.add("total", xs[3], ty, CellRole::key);
    b.out.key_index[k] = 6;
    const auto v = b.add(value_text(g_amount, rng), xs[4], ty, CellRole::value);
    b.out.key_of[v] = static_cast<std::int64_t>(k);
    b.out.grammar[v] = g_amount;
    return std::move(b.out);
}

std::string numbered_id(std::string_view prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    return std::string(prefix) + "-" + buf;
}

// File-order index of each cell's first word.
std::vector<std::size_t> first_words(const RawDocument& doc) {
    std::vector<std::size_t> out;
    std::size_t w = 0;
    for (const auto& cell : doc.cells) {
        out.push_back(w);
        w += split_words(cell.text).size();
    }
    return out;
}

bool is_eval(std::size_t i, std::size_t n) { return i >= static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n))); }

}  // namespace

std::string_view to_string(DocTemplate t) {
    switch (t) {
    case DocTemplate::form: return "form";
    case DocTemplate::letter: return "letter";
    case DocTemplate::table: return "table";
    }
    return "?";
}

DocTemplate parse_template(std::string_view name) {
    for (auto t : {DocTemplate::form, DocTemplate::letter, DocTemplate::table}) {
        if (to_string(t) == name) return t;
    }
    throw config_error("unknown template '" + std::string(name) + "' (valid: form, letter, table)");
}

void SynthConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw config_error("synth config: " + what);
    };
    require(num_docs > 0, "num_docs must be positive");
    require(grid_rows >= 4 && grid_rows <= 24, "grid_rows must lie in [4, 24]");
    require(grid_cols >= 1 && grid_cols <= 2, "grid_cols must be 1 or 2");
    require(min_pairs >= 1 && min_pairs <= max_pairs, "need 1 <= min_pairs <= max_pairs");
    require(max_pairs <= grid_rows * grid_cols, "max_pairs exceeds the number of slots");
    require(noise_rate >= 0 && noise_rate <= 1, "noise_rate must lie in [0, 1]");
    require(page_width >= 1000 && page_height >= 1000, "page must be at least 1000 x 1000 pixels");
    require(!templates.empty(), "at least one template required");
}

const std::vector<KeySpec>& key_lexicon() { return kKeys; }

std::size_t grammar_count() { return g_count; }

SynthDoc gen_pretrain_doc(const SynthConfig& cfg, Rng& rng) { return gen_document(cfg, DocTemplate::form, rng); }

SynthDoc gen_document(const SynthConfig& cfg, DocTemplate kind, Rng& rng) {
    SynthDoc out;
    switch (kind) {
    case DocTemplate::form: out = gen_form(cfg, rng); break;
    case DocTemplate::letter: out = gen_letter(cfg, rng); break;
    case DocTemplate::table: out = gen_table(cfg, rng); break;
    }
    out.doc.page_width = cfg.page_width;
    out.doc.page_height = cfg.page_height;
    return out;
}

std::vector<SynthDoc> gen_pretrain_corpus(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<SynthDoc> out;
    out.reserve(cfg.num_docs);
    for (std::size_t i = 0; i < cfg.num_docs; ++i) {
        Rng rng(derive_seed(cfg.seed, {0x707265, i}));
        auto doc = gen_pretrain_doc(cfg, rng);
        doc.doc.doc_id = numbered_id("doc", i);
        out.push_back(std::move(doc));
    }
    return out;
}

std::vector<std::int64_t> form_word_labels(const SynthDoc& doc) {
    std::vector<std::int64_t> labels;
    for (std::size_t c = 0; c < doc.doc.cells.size(); ++c) {
        const auto n = split_words(doc.doc.cells[c].text).size();
        std::vector<std::int64_t> tags;
        switch (doc.roles[c]) {
        case CellRole::header: tags = entity_tags(EntityCategory::header, n); break;
        case CellRole::key: tags = entity_tags(EntityCategory::question, n); break;
        case CellRole::value: tags = entity_tags(EntityCategory::answer, n); break;
        default: tags.assign(n, kTagO); break;
        }
        labels.insert(labels.end(), tags.begin(), tags.end());
    }
    return labels;
}

namespace {

SynthDoc task_doc(const SynthConfig& cfg, DocTemplate kind, Rng& rng, std::string_view prefix, std::size_t i) {
    Rng doc_rng(rng.next_u64());
    auto doc = gen_document(cfg, kind, doc_rng);
    doc.doc.doc_id = numbered_id(prefix, i);
    return doc;
}

void require_pair_count(std::size_t n) {
    if (n < 2) throw config_error("task datasets need at least 2 examples (train + eval)");
}

}  // namespace

TaskDataset gen_form_dataset(const SynthConfig& cfg, Rng& rng, std::size_t n) {
    cfg.validate();
    require_pair_count(n);
    TaskDataset out;
    out.kind = TaskKind::tagging;
    for (std::size_t i = 0; i < n; ++i) {
        auto doc = task_doc(cfg, DocTemplate::form, rng, "form", i);
        auto labels = form_word_labels(doc);
        out.tagging.push_back({std::move(doc.doc), std::move(labels), is_eval(i, n)});
    }
    return out;
}

TaskDataset gen_qa_dataset(const SynthConfig& cfg, Rng& rng, std::size_t n) {
    cfg.validate();
    require_pair_count(n);
    TaskDataset out;
    out.kind = TaskKind::qa;
    for (std::size_t i = 0; i < n; ++i) {
        auto doc = task_doc(cfg, DocTemplate::form, rng, "qa", i);
        std::vector<std::size_t> values;
        for (std::size_t c = 0; c < doc.roles.size(); ++c) {
            if (doc.roles[c] == CellRole::value && doc.key_of[c] >= 0) values.push_back(c);
        }
        const std::size_t v = values[static_cast<std::size_t>(rng.below(values.size()))];
        const auto key = static_cast<std::size_t>(doc.key_of[v]);
        const auto first = first_words(doc.doc);
        QaExample ex;
        ex.question = "what is the " + doc.doc.cells[key].text;
        ex.answers = {doc.doc.cells[v].text};
        ex.answer_words = std::pair{first[v], first[v] + split_words(doc.doc.cells[v].text).size() - 1};
        ex.doc = std::move(doc.doc);
        ex.eval = is_eval(i, n);
        out.qa.push_back(std::move(ex));
    }
    return out;
}

TaskDataset gen_cls_dataset(const SynthConfig& cfg, Rng& rng, std::size_t n) {
    cfg.validate();
    require_pair_count(n);
    if (cfg.templates.size() < 2) throw config_error("classification needs at least 2 templates");
    TaskDataset out;
    out.kind = TaskKind::classification;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % cfg.templates.size();
        auto doc = task_doc(cfg, cfg.templates[label], rng, "cls", i);
        out.classification.push_back({std::move(doc.doc), static_cast<std::int64_t>(label), is_eval(i, n)});
    }
    return out;
}

}  // namespace structlm
