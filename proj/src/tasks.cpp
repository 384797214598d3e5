#include "structlm/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "structlm/objectives.hpp"
#include "structlm/random.hpp"

namespace structlm {

namespace {

constexpr std::string_view kPositionNames[] = {"B", "I", "E", "S"};
constexpr std::string_view kCategoryNames[] = {"question", "answer", "header"};

void check_tag(std::int64_t tag) {
    if (tag < 0 || tag >= static_cast<std::int64_t>(kNumTagLabels)) {
        throw contract_error("tag id " + std::to_string(tag) + " is outside [0, 13)");
    }
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (logits.at(row, c) > logits.at(row, best)) best = c;
    }
    return best;
}

}  // namespace

std::int64_t tag_id(TagPosition position, EntityCategory category) {
    return 1 + 4 * static_cast<std::int64_t>(category) + static_cast<std::int64_t>(position);
}

bool is_entity_tag(std::int64_t tag) { return tag > 0 && tag < static_cast<std::int64_t>(kNumTagLabels); }

TagPosition tag_position(std::int64_t tag) {
    if (!is_entity_tag(tag)) throw contract_error("tag " + std::to_string(tag) + " has no position");
    return static_cast<TagPosition>((tag - 1) % 4);
}

EntityCategory tag_category(std::int64_t tag) {
    if (!is_entity_tag(tag)) throw contract_error("tag " + std::to_string(tag) + " has no category");
    return static_cast<EntityCategory>((tag - 1) / 4);
}

std::string_view to_string(EntityCategory category) { return kCategoryNames[static_cast<std::size_t>(category)]; }

std::string tag_name(std::int64_t tag) {
    check_tag(tag);
    if (tag == kTagO) return "O";
    return std::string(kPositionNames[static_cast<std::size_t>(tag_position(tag))]) + "-" +
           std::string(to_string(tag_category(tag)));
}

std::int64_t parse_tag(std::string_view name) {
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(kNumTagLabels); ++t) {
        if (tag_name(t) == name) return t;
    }
    throw std::invalid_argument("unknown tag '" + std::string(name) + "'");
}

std::vector<std::int64_t> entity_tags(EntityCategory category, std::size_t words) {
    if (words == 1) return {tag_id(TagPosition::S, category)};
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < words; ++i) {
        const auto pos = i == 0 ? TagPosition::B : i + 1 == words ? TagPosition::E : TagPosition::I;
        out.push_back(tag_id(pos, category));
    }
    return out;
}

std::vector<EntitySpan> decode_bies(std::span<const std::int64_t> tags) {
    for (auto t : tags) check_tag(t);
    std::vector<EntitySpan> out;
    std::size_t i = 0;
    while (i < tags.size()) {
        if (tags[i] == kTagO) {
            ++i;
            continue;
        }
        const auto category = tag_category(tags[i]);
        if (tag_position(tags[i]) != TagPosition::B) {
            out.push_back({category, i, i});
            ++i;
            continue;
        }
        const auto inside = tag_id(TagPosition::I, category);
        std::size_t j = i;
        while (j + 1 < tags.size() && tags[j + 1] == inside) ++j;
        if (j + 1 < tags.size() && tags[j + 1] == tag_id(TagPosition::E, category)) ++j;
        out.push_back({category, i, j});
        i = j + 1;
    }
    return out;
}

void F1Counts::add(std::span<const std::int64_t> pred, std::span<const std::int64_t> gold_tags) {
    if (pred.size() != gold_tags.size()) {
        throw contract_error("word_f1: " + std::to_string(pred.size()) + " predicted tags for " +
                             std::to_string(gold_tags.size()) + " gold tags");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] != kTagO) ++predicted;
        if (gold_tags[i] != kTagO) ++gold;
        if (pred[i] != kTagO && pred[i] == gold_tags[i]) ++correct;
    }
}

F1Score F1Counts::score() const {
    if (predicted == 0 && gold == 0) return {1, 1, 1};
    F1Score s;
    s.precision = predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0;
    s.recall = gold ? static_cast<double>(correct) / static_cast<double>(gold) : 0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0;
    return s;
}

F1Score word_f1(std::span<const std::int64_t> pred, std::span<const std::int64_t> gold) {
    F1Counts counts;
    counts.add(pred, gold);
    return counts.score();
}

SpanChoice extract_span(std::span<const real> start_logits, std::span<const real> end_logits,
                        std::span<const std::uint8_t> allowed, std::size_t max_answer_len) {
    const std::size_t n = start_logits.size();
    if (end_logits.size() != n || allowed.size() != n) {
        throw contract_error("extract_span: logits and mask lengths differ");
    }
    std::optional<SpanChoice> best;
    for (std::size_t s = 0; s < n; ++s) {
        if (!allowed[s]) continue;
        for (std::size_t e = s; e < n && e - s < max_answer_len; ++e) {
            if (!allowed[e]) continue;
            const real score = start_logits[s] + end_logits[e];
            if (!best || score > best->score) best = SpanChoice{s, e, score};
        }
    }
    if (!best) throw contract_error("extract_span: no valid span");
    return *best;
}

std::string normalize_answer(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::size_t> row(b.size() + 1);
    std::iota(row.begin(), row.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

double normalized_levenshtein(std::string_view a, std::string_view b) {
    const auto na = normalize_answer(a), nb = normalize_answer(b);
    const std::size_t len = std::max(na.size(), nb.size());
    if (len == 0) return 0;
    return static_cast<double>(levenshtein(na, nb)) / static_cast<double>(len);
}

double anls_score(std::string_view prediction, std::span<const std::string> gold, double tau) {
    if (gold.empty()) throw contract_error("anls: empty gold answer set");
    double best = 0;
    for (const auto& g : gold) {
        const double s = 1 - normalized_levenshtein(prediction, g);
        best = std::max(best, s < tau ? 0.0 : s);
    }
    return best;
}

double anls(std::span<const std::string> predictions, std::span<const std::vector<std::string>> gold, double tau) {
    if (predictions.size() != gold.size()) throw contract_error("anls: one gold set per prediction required");
    if (predictions.empty()) return 0;
    double total = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) total += anls_score(predictions[i], gold[i], tau);
    return total / static_cast<double>(predictions.size());
}

std::string_view to_string(TaskKind kind) {
    switch (kind) {
    case TaskKind::tagging: return "tagging";
    case TaskKind::qa: return "qa";
    case TaskKind::classification: return "classification";
    }
    return "?";
}

TaskKind parse_task_kind(std::string_view name) {
    for (auto k : {TaskKind::tagging, TaskKind::qa, TaskKind::classification}) {
        if (to_string(k) == name) return k;
    }
    throw config_error("unknown task '" + std::string(name) + "' (valid: tagging, qa, classification)");
}

std::size_t TaskDataset::size() const {
    switch (kind) {
    case TaskKind::tagging: return tagging.size();
    case TaskKind::qa: return qa.size();
    case TaskKind::classification: return classification.size();
    }
    return 0;
}

std::size_t TaskDataset::eval_count() const {
    auto count = [](const auto& v) {
        return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](const auto& e) { return e.eval; }));
    };
    switch (kind) {
    case TaskKind::tagging: return count(tagging);
    case TaskKind::qa: return count(qa);
    case TaskKind::classification: return count(classification);
    }
    return 0;
}

std::vector<QaWindow> encode_qa(const QaExample& example, const Vocab& vocab, std::size_t max_len, LayoutMode mode) {
    if (max_len < 8) throw std::invalid_argument("encode_qa: max_len must be at least 8");
    std::vector<std::int64_t> question;
    for (const auto& w : split_words(example.question)) {
        for (auto id : tokenize_ids(w, vocab)) question.push_back(id);
    }
    question.resize(std::min(question.size(), max_len / 2));
    const auto body = tokenize_document(example.doc, vocab, mode);
    const std::size_t capacity = max_len - 3 - question.size();
    const std::size_t stride = std::max<std::size_t>(1, max_len / 4);

    std::optional<std::pair<std::size_t, std::size_t>> gold_body;
    if (example.answer_words) {
        const auto [first, last] = *example.answer_words;
        std::optional<std::size_t> s, e;
        for (std::size_t i = 0; i < body.length; ++i) {
            const auto w = static_cast<std::size_t>(body.word_index[i]);
            if (w == first && !s) s = i;
            if (w == last) e = i;
        }
        if (s && e && *s <= *e) gold_body = {*s, *e};
    }

    std::vector<QaWindow> windows;
    for (std::size_t start = 0;; start += stride) {
        const std::size_t end = std::min(start + capacity, body.length);
        QaWindow win;
        auto& seq = win.sequence;
        seq.cell_boxes = body.cell_boxes;
        auto push = [&](std::int64_t id, std::int64_t cell, std::int64_t word, std::uint8_t ws, NormalizedBox box,
                        std::uint8_t answerable) {
            seq.token_ids.push_back(id);
            seq.cell_index.push_back(cell);
            seq.word_index.push_back(word);
            seq.word_start.push_back(ws);
            seq.boxes.push_back(box);
            win.answerable.push_back(answerable);
        };
        push(Vocab::kCls, -1, -1, 0, {}, 0);
        for (auto id : question) push(id, -1, -1, 0, {}, 0);
        push(Vocab::kSep, -1, -1, 0, {}, 0);
        const std::size_t offset = seq.token_ids.size();
        for (std::size_t i = start; i < end; ++i) {
            push(body.token_ids[i], body.cell_index[i], body.word_index[i], body.word_start[i], body.boxes[i], 1);
        }
        push(Vocab::kSep, -1, -1, 0, {}, 0);
        seq.length = seq.token_ids.size();
        while (seq.token_ids.size() < max_len) push(Vocab::kPad, -1, -1, 0, {}, 0);
        seq.pos1d.resize(max_len);
        std::iota(seq.pos1d.begin(), seq.pos1d.end(), std::int64_t{0});
        if (gold_body && gold_body->first >= start && gold_body->second < end) {
            win.gold = std::pair{offset + gold_body->first - start, offset + gold_body->second - start};
        }
        windows.push_back(std::move(win));
        if (end >= body.length) break;
    }
    return windows;
}

std::vector<std::int64_t> token_tag_targets(const TokenizedSequence& seq, std::span<const std::int64_t> word_labels,
                                            std::int64_t ignore_label) {
    std::vector<std::int64_t> out(seq.max_len(), ignore_label);
    for (std::size_t i = 0; i < seq.length; ++i) {
        if (!seq.word_start[i] || seq.word_index[i] < 0) continue;
        const auto w = static_cast<std::size_t>(seq.word_index[i]);
        if (w >= word_labels.size()) throw contract_error("tag targets: word index beyond the label list");
        out[i] = word_labels[w];
    }
    return out;
}

std::vector<std::string> document_words(const RawDocument& doc) {
    std::vector<std::string> out;
    for (const auto& cell : doc.cells) {
        for (auto& w : split_words(cell.text)) out.push_back(std::move(w));
    }
    return out;
}

Tensor tagging_loss(const TaskModel& model, const TokenizedSequence& seq, std::span<const std::int64_t> targets,
                    const ForwardOptions& options) {
    auto opts = options;
    opts.trim_padding = true;
    auto hidden = encode(seq, model.params, model.config, opts);
    std::vector<std::int64_t> rows, labels;
    for (std::size_t i = 0; i < hidden.rows(); ++i) {
        if (targets[i] == kIgnoreLabel) continue;
        rows.push_back(static_cast<std::int64_t>(i));
        labels.push_back(targets[i]);
    }
    if (rows.empty()) return softmax_cross_entropy(Tensor::zeros({1, 1}), std::vector<std::int64_t>{kIgnoreLabel},
                                                   kIgnoreLabel);
    return softmax_cross_entropy(head_tag(select_rows(hidden, rows), model.params), labels, kIgnoreLabel);
}

Tensor qa_loss(const TaskModel& model, const QaWindow& window, const ForwardOptions& options) {
    if (!window.gold) throw contract_error("qa_loss: window does not contain the answer");
    auto opts = options;
    opts.trim_padding = true;
    auto hidden = encode(window.sequence, model.params, model.config, opts);
    // Row 0 holds start logits over positions, row 1 end logits.
    auto logits = transpose(head_span(hidden, model.params));
    const std::vector<std::int64_t> targets{static_cast<std::int64_t>(window.gold->first),
                                            static_cast<std::int64_t>(window.gold->second)};
    return softmax_cross_entropy(logits, targets, kIgnoreLabel);
}

Tensor classification_loss(const TaskModel& model, const TokenizedSequence& seq, std::int64_t label,
                           const ForwardOptions& options) {
    auto opts = options;
    opts.trim_padding = true;
    auto hidden = encode(seq, model.params, model.config, opts);
    return softmax_cross_entropy(head_cls(hidden, model.params), std::vector<std::int64_t>{label}, kIgnoreLabel);
}

std::vector<std::int64_t> predict_tags(const TaskModel& model, const RawDocument& doc) {
    auto seq = encode_document(doc, model.vocab, model.config.max_len, model.config.layout_mode);
    auto hidden = encode(seq, model.params, model.config, ForwardOptions{.trim_padding = true});
    auto logits = head_tag(hidden, model.params);
    std::vector<std::int64_t> out(document_words(doc).size(), kTagO);
    for (std::size_t i = 0; i < seq.length; ++i) {
        if (!seq.word_start[i] || seq.word_index[i] < 0) continue;
        out[static_cast<std::size_t>(seq.word_index[i])] = static_cast<std::int64_t>(argmax_row(logits, i));
    }
    return out;
}

std::string predict_answer(const TaskModel& model, const QaExample& example, std::size_t max_answer_len) {
    std::optional<SpanChoice> best;
    const TokenizedSequence* best_seq = nullptr;
    const auto windows = encode_qa(example, model.vocab, model.config.max_len, model.config.layout_mode);
    for (const auto& win : windows) {
        auto hidden = encode(win.sequence, model.params, model.config, ForwardOptions{.trim_padding = true});
        auto logits = transpose(head_span(hidden, model.params));
        const std::size_t n = logits.cols();
        auto data = logits.data();
        const std::span<const real> start(data.data(), n), end(data.data() + n, n);
        if (std::none_of(win.answerable.begin(), win.answerable.begin() + static_cast<std::ptrdiff_t>(n),
                         [](auto a) { return a != 0; })) {
            continue;
        }
        auto choice = extract_span(start, end, std::span(win.answerable).first(n), max_answer_len);
        if (!best || choice.score > best->score) {
            best = choice;
            best_seq = &win.sequence;
        }
    }
    if (!best) return "";
    const auto words = document_words(example.doc);
    std::vector<std::int64_t> picked;
    for (std::size_t i = best->start; i <= best->end; ++i) {
        const auto w = best_seq->word_index[i];
        if (picked.empty() || picked.back() != w) picked.push_back(w);
    }
    std::string answer;
    for (auto w : picked) {
        if (!answer.empty()) answer += ' ';
        answer += words[static_cast<std::size_t>(w)];
    }
    return answer;
}

std::int64_t predict_class(const TaskModel& model, const RawDocument& doc) {
    auto seq = encode_document(doc, model.vocab, model.config.max_len, model.config.layout_mode);
    auto hidden = encode(seq, model.params, model.config, ForwardOptions{.trim_padding = true});
    return static_cast<std::int64_t>(argmax_row(head_cls(hidden, model.params), 0));
}

std::map<std::string, double> evaluate_task(const TaskModel& model, const TaskDataset& dataset, bool eval_split,
                                            std::size_t max_answer_len) {
    std::map<std::string, double> out;
    std::size_t n = 0;
    switch (dataset.kind) {
    case TaskKind::tagging: {
        F1Counts counts;
        for (const auto& ex : dataset.tagging) {
            if (ex.eval != eval_split) continue;
            counts.add(predict_tags(model, ex.doc), ex.word_labels);
            ++n;
        }
        const auto s = counts.score();
        out["precision"] = s.precision;
        out["recall"] = s.recall;
        out["f1"] = s.f1;
        break;
    }
    case TaskKind::qa: {
        std::vector<std::string> preds;
        std::vector<std::vector<std::string>> golds;
        for (const auto& ex : dataset.qa) {
            if (ex.eval != eval_split) continue;
            preds.push_back(predict_answer(model, ex, max_answer_len));
            golds.push_back(ex.answers);
            ++n;
        }
        out["anls"] = anls(preds, golds);
        break;
    }
    case TaskKind::classification: {
        std::size_t correct = 0;
        for (const auto& ex : dataset.classification) {
            if (ex.eval != eval_split) continue;
            correct += predict_class(model, ex.doc) == ex.label ? 1 : 0;
            ++n;
        }
        out["accuracy"] = n ? static_cast<double>(correct) / static_cast<double>(n) : 0;
        break;
    }
    }
    out["examples"] = static_cast<double>(n);
    return out;
}

namespace {

struct TrainItem {
    TokenizedSequence sequence;
    std::vector<std::int64_t> targets;  // tagging
    std::optional<QaWindow> window;     // qa
    std::int64_t label = 0;             // classification
};

std::vector<TrainItem> training_items(const TaskDataset& dataset, const Vocab& vocab, const ModelConfig& config) {
    std::vector<TrainItem> items;
    switch (dataset.kind) {
    case TaskKind::tagging:
        for (const auto& ex : dataset.tagging) {
            if (ex.eval) continue;
            for (auto t : ex.word_labels) {
                if (t < 0 || t >= static_cast<std::int64_t>(config.num_tag_labels)) {
                    throw config_error("tagging label " + std::to_string(t) + " outside the tag head");
                }
            }
            TrainItem item;
            item.sequence = encode_document(ex.doc, vocab, config.max_len, config.layout_mode);
            item.targets = token_tag_targets(item.sequence, ex.word_labels, kIgnoreLabel);
            items.push_back(std::move(item));
        }
        break;
    case TaskKind::qa:
        for (const auto& ex : dataset.qa) {
            if (ex.eval) continue;
            for (auto& win : encode_qa(ex, vocab, config.max_len, config.layout_mode)) {
                if (!win.gold) continue;
                TrainItem item;
                item.window = std::move(win);
                items.push_back(std::move(item));
            }
        }
        break;
    case TaskKind::classification:
        for (const auto& ex : dataset.classification) {
            if (ex.eval) continue;
            if (ex.label < 0 || ex.label >= static_cast<std::int64_t>(config.num_doc_classes)) {
                throw config_error("class label " + std::to_string(ex.label) + " outside the classification head (" +
                                   std::to_string(config.num_doc_classes) + " classes)");
            }
            TrainItem item;
            item.sequence = encode_document(ex.doc, vocab, config.max_len, config.layout_mode);
            item.label = ex.label;
            items.push_back(std::move(item));
        }
        break;
    }
    return items;
}

}  // namespace

FinetuneResult finetune(const TaskDataset& dataset, const Vocab& vocab, const ModelConfig& config,
                        const Parameters* init, const FinetuneConfig& cfg) {
    config.validate();
    cfg.train.validate();
    if (dataset.size() == 0) throw config_error("finetune: empty dataset");
    if (vocab.size() != config.vocab_size) {
        throw config_error("finetune: vocabulary has " + std::to_string(vocab.size()) + " tokens, model expects " +
                           std::to_string(config.vocab_size));
    }
    const auto items = training_items(dataset, vocab, config);
    if (items.empty()) throw config_error("finetune: no trainable examples in the train split");

    FinetuneResult result{init ? init->clone() : Parameters::init(config, derive_seed(cfg.train.seed, {0x696e6974})),
                          {}};
    auto& report = result.report;
    report.task = dataset.kind;
    report.train_examples = dataset.size() - dataset.eval_count();
    report.eval_examples = dataset.eval_count();

    const TaskModel model{result.params, config, vocab};
    Optimizer optimizer(result.params);
    BatchSchedule schedule(items.size(), cfg.train.batch_size, cfg.train.seed);
    Rng dropout_rng(derive_seed(cfg.train.seed, {0x64726f70}));
    const ForwardOptions options{.trim_padding = true, .training = true, .rng = &dropout_rng};

    for (std::size_t step = 0; step < cfg.train.steps; ++step) {
        const auto batch = schedule.batch(step);
        optimizer.zero_grad();
        const real loss = accumulate_batch(batch.size(), [&](std::size_t k) {
            const auto& item = items[batch[k].example];
            switch (dataset.kind) {
            case TaskKind::tagging: return tagging_loss(model, item.sequence, item.targets, options);
            case TaskKind::qa: return qa_loss(model, *item.window, options);
            case TaskKind::classification: return classification_loss(model, item.sequence, item.label, options);
            }
            return Tensor::scalar(0);
        });
        optimizer.step(cfg.train.lr_at(step));
        report.losses.push_back(loss);
    }
    report.metrics = evaluate_task(model, dataset, true, cfg.max_answer_len);
    return result;
}

}  // namespace structlm
