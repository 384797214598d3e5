#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "structlm/doc.hpp"
#include "structlm/model.hpp"
#include "structlm/tensor.hpp"
#include "structlm/train.hpp"

namespace structlm {

enum class EntityCategory : std::int64_t { question = 0, answer = 1, header = 2 };
enum class TagPosition : std::int64_t { B = 0, I = 1, E = 2, S = 3 };

// Tag ids: O = 0, then 1 + 4 * category + position, i.e.
// 1..4 = B/I/E/S-question, 5..8 = B/I/E/S-answer, 9..12 = B/I/E/S-header.
inline constexpr std::int64_t kTagO = 0;

std::int64_t tag_id(TagPosition position, EntityCategory category);
bool is_entity_tag(std::int64_t tag);  // valid and not O
TagPosition tag_position(std::int64_t tag);
EntityCategory tag_category(std::int64_t tag);
std::string tag_name(std::int64_t tag);           // "O", "B-question", ...
std::int64_t parse_tag(std::string_view name);    // throws std::invalid_argument
std::string_view to_string(EntityCategory category);

// BIES tags for one entity of `words` words.
std::vector<std::int64_t> entity_tags(EntityCategory category, std::size_t words);

struct EntitySpan {
    EntityCategory category;
    std::size_t first = 0;
    std::size_t last = 0;  // inclusive
    bool operator==(const EntitySpan&) const = default;
};

// S is a single-word entity and B I* E of one category a multi-word one. An
// unterminated B I* run ends at its last tag; an I or E with no open run of
// its category is read as S.
std::vector<EntitySpan> decode_bies(std::span<const std::int64_t> tags);

struct F1Score {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

// Micro counts over words; accumulate across documents, then score().
struct F1Counts {
    std::size_t predicted = 0;  // pred != O
    std::size_t gold = 0;       // gold != O
    std::size_t correct = 0;    // pred != O and pred == gold

    void add(std::span<const std::int64_t> pred, std::span<const std::int64_t> gold_tags);
    // Both empty scores 1 (nothing to find, nothing wrongly found).
    F1Score score() const;
};

F1Score word_f1(std::span<const std::int64_t> pred, std::span<const std::int64_t> gold);

struct SpanChoice {
    std::size_t start = 0;
    std::size_t end = 0;
    real score = 0;
};

// Best start <= end with end - start < max_answer_len, both positions allowed.
// Ties go to the smallest start, then the smallest end.
SpanChoice extract_span(std::span<const real> start_logits, std::span<const real> end_logits,
                        std::span<const std::uint8_t> allowed, std::size_t max_answer_len);

// Lowercased, whitespace runs collapsed to one space, trimmed.
std::string normalize_answer(std::string_view text);
std::size_t levenshtein(std::string_view a, std::string_view b);
// levenshtein / max length of the normalized strings; 0 when both are empty.
double normalized_levenshtein(std::string_view a, std::string_view b);
// max over gold answers of 1 - NL, zeroed below tau.
double anls_score(std::string_view prediction, std::span<const std::string> gold, double tau = 0.5);
double anls(std::span<const std::string> predictions, std::span<const std::vector<std::string>> gold,
            double tau = 0.5);

enum class TaskKind { tagging, qa, classification };

std::string_view to_string(TaskKind kind);
// Throws config_error listing the valid names.
TaskKind parse_task_kind(std::string_view name);

struct TaggingExample {
    RawDocument doc;
    std::vector<std::int64_t> word_labels;  // one tag per file-order word
    bool eval = false;
};

struct QaExample {
    RawDocument doc;
    std::string question;
    std::vector<std::string> answers;
    // File-order word range of the gold answer.
    std::optional<std::pair<std::size_t, std::size_t>> answer_words;
    bool eval = false;
};

struct ClsExample {
    RawDocument doc;
    std::int64_t label = 0;
    bool eval = false;
};

struct TaskDataset {
    TaskKind kind = TaskKind::tagging;
    std::vector<TaggingExample> tagging;
    std::vector<QaExample> qa;
    std::vector<ClsExample> classification;

    std::size_t size() const;
    std::size_t eval_count() const;
};

// One QA input window: [CLS] question [SEP] document slice [SEP] [PAD]...
struct QaWindow {
    TokenizedSequence sequence;
    std::vector<std::uint8_t> answerable;  // 1 on document tokens
    std::optional<std::pair<std::size_t, std::size_t>> gold;  // token positions when the answer fits
};

// Question tokens carry the empty box. Windows advance by max_len / 4
// document tokens until the document is covered.
std::vector<QaWindow> encode_qa(const QaExample& example, const Vocab& vocab, std::size_t max_len, LayoutMode mode);

// Per-token tag targets: the word's tag on its first subword, ignore_label
// elsewhere.
std::vector<std::int64_t> token_tag_targets(const TokenizedSequence& seq, std::span<const std::int64_t> word_labels,
                                            std::int64_t ignore_label);

// Words of `doc` in file order, lowercased.
std::vector<std::string> document_words(const RawDocument& doc);

struct TaskModel {
    const Parameters& params;
    const ModelConfig& config;
    const Vocab& vocab;
};

// One tag per file-order word; words cut off by truncation are O.
std::vector<std::int64_t> predict_tags(const TaskModel& model, const RawDocument& doc);
std::string predict_answer(const TaskModel& model, const QaExample& example, std::size_t max_answer_len);
std::int64_t predict_class(const TaskModel& model, const RawDocument& doc);

struct FinetuneConfig {
    TrainConfig train;
    std::size_t max_answer_len = 16;
};

struct FinetuneReport {
    TaskKind task = TaskKind::tagging;
    std::size_t train_examples = 0;
    std::size_t eval_examples = 0;
    std::vector<real> losses;  // mean batch loss per step
    // tagging: precision, recall, f1; qa: anls; classification: accuracy.
    std::map<std::string, double> metrics;
};

struct FinetuneResult {
    Parameters params;
    FinetuneReport report;
};

// Task-loss training of the whole encoder plus the task head, starting from
// `init` (or a fresh init seeded from the train seed), then evaluation on the
// examples marked eval.
FinetuneResult finetune(const TaskDataset& dataset, const Vocab& vocab, const ModelConfig& config,
                        const Parameters* init, const FinetuneConfig& cfg);

// Metrics of `params` on the eval (or train) examples of `dataset`.
std::map<std::string, double> evaluate_task(const TaskModel& model, const TaskDataset& dataset, bool eval_split,
                                            std::size_t max_answer_len);

// Task losses on encoded inputs, used by training and by gradient checks.
Tensor tagging_loss(const TaskModel& model, const TokenizedSequence& seq, std::span<const std::int64_t> targets,
                    const ForwardOptions& options = {});
Tensor qa_loss(const TaskModel& model, const QaWindow& window, const ForwardOptions& options = {});
Tensor classification_loss(const TaskModel& model, const TokenizedSequence& seq, std::int64_t label,
                           const ForwardOptions& options = {});

}  // namespace structlm
