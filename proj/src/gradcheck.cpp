#include "structlm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include "structlm/objectives.hpp"
#include "structlm/synth.hpp"
#include "structlm/tasks.hpp"

namespace structlm {

namespace {

// Five-point central stencil: truncation error O(h^4) lets h stay large
// enough that roundoff in the loss (about 1e-15 * |loss| / h) stays small.
constexpr real kStep = real{1e-3};
constexpr double kFloor = 1e-8;

struct Loss {
    std::string name;
    std::function<Tensor()> build;
    // Rows of the big tables the inputs reference.
    std::map<std::string, std::set<std::size_t>> rows;
};

std::map<std::string, std::set<std::size_t>> referenced_rows(const TokenizedSequence& seq) {
    std::map<std::string, std::set<std::size_t>> out;
    for (std::size_t i = 0; i < seq.length; ++i) {
        out["word_emb"].insert(static_cast<std::size_t>(seq.token_ids[i]));
        out["pos1d_emb"].insert(static_cast<std::size_t>(seq.pos1d[i]));
        const auto& b = seq.boxes[i];
        out["x_emb"].insert({static_cast<std::size_t>(b.x0), static_cast<std::size_t>(b.x1)});
        out["y_emb"].insert({static_cast<std::size_t>(b.y0), static_cast<std::size_t>(b.y1)});
    }
    return out;
}

real evaluate(const Loss& loss) { return loss.build().item(); }

}  // namespace

bool GradCheckReport::passed() const {
    return std::all_of(groups.begin(), groups.end(), [&](const auto& g) { return g.max_rel_error <= tolerance; });
}

std::string GradCheckReport::render() const {
    std::string out;
    char buf[256];
    for (const auto& g : groups) {
        std::string losses;
        for (const auto& l : g.losses) losses += (losses.empty() ? "" : ",") + l;
        std::snprintf(buf, sizeof buf, "%-22s max_rel_err %.3e  elements %6zu  %s  [%s]\n", g.name.c_str(),
                      g.max_rel_error, g.checked, g.max_rel_error <= tolerance ? "ok" : "FAIL", losses.c_str());
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "tolerance %.1e: %s\n", tolerance, passed() ? "PASS" : "FAIL");
    return out + buf;
}

GradCheckReport run_grad_check(ModelConfig config, std::uint64_t seed, double tolerance) {
    if (config.hidden_d > kGradCheckMaxHidden || config.num_layers > kGradCheckMaxLayers) {
        throw config_error("grad-check needs a tiny model (hidden_d <= " + std::to_string(kGradCheckMaxHidden) +
                           ", num_layers <= " + std::to_string(kGradCheckMaxLayers) + "); got hidden_d " +
                           std::to_string(config.hidden_d) + ", num_layers " + std::to_string(config.num_layers));
    }
    SynthConfig synth;
    synth.min_pairs = 3;
    synth.max_pairs = 4;
    Rng rng(seed);
    const auto page = gen_document(synth, DocTemplate::form, rng);
    const std::vector<RawDocument> corpus{page.doc};
    const auto vocab = build_vocab(corpus, 512);
    config.vocab_size = vocab.size();
    config.dropout = 0;
    config.validate();
    auto params = Parameters::init(config, derive_seed(seed, {1}));
    const TaskModel model{params, config, vocab};
    const ForwardOptions trim{.trim_padding = true};

    const auto seq = encode_document(page.doc, vocab, config.max_len, config.layout_mode);
    std::vector<Loss> losses;

    PretrainConfig objective;
    objective.num_areas = config.num_areas;
    objective.cpc_enabled = config.cpc_head;
    objective.cell_select_rate = 0.5;
    PretrainExample example;
    do {
        example = make_pretrain_example(seq, objective, vocab.size(), rng);
    } while (config.cpc_head && example.selected_cell_indices.empty());
    losses.push_back({config.cpc_head ? "mvlm+cpc" : "mvlm",
                      [&] { return pretrain_objective(encode(example.sequence, params, config, trim), params, example, objective).loss; },
                      referenced_rows(example.sequence)});
    // The tied MLM projection reads every word embedding row.
    for (std::size_t r = 0; r < config.vocab_size; ++r) losses.back().rows["word_emb"].insert(r);

    const auto targets = token_tag_targets(seq, form_word_labels(page), kIgnoreLabel);
    losses.push_back({"tagging", [&] { return tagging_loss(model, seq, targets, trim); }, referenced_rows(seq)});

    QaExample qa;
    qa.doc = page.doc;
    for (std::size_t c = 0, w = 0; c < page.roles.size(); ++c) {
        const auto n = split_words(page.doc.cells[c].text).size();
        if (page.roles[c] == CellRole::value && page.key_of[c] >= 0) {
            qa.question = "what is the " + page.doc.cells[static_cast<std::size_t>(page.key_of[c])].text;
            qa.answers = {page.doc.cells[c].text};
            qa.answer_words = {{w, w + n - 1}};
            break;
        }
        w += n;
    }
    const auto windows = encode_qa(qa, vocab, config.max_len, config.layout_mode);
    auto window = std::find_if(windows.begin(), windows.end(), [](const QaWindow& w) { return w.gold.has_value(); });
    if (window == windows.end()) throw config_error("grad-check: model.max_len too small to hold a QA answer");
    const QaWindow qa_window = *window;
    losses.push_back({"qa", [&] { return qa_loss(model, qa_window, trim); }, referenced_rows(qa_window.sequence)});

    losses.push_back({"classification", [&] { return classification_loss(model, seq, 1, trim); }, referenced_rows(seq)});

    GradCheckReport report;
    report.tolerance = tolerance;
    for (const auto& nt : params.named()) report.groups.push_back({nt.name, 0, 0, {}});

    const auto named = params.named();
    for (const auto& loss : losses) {
        params.zero_grads();
        backward(loss.build());
        for (std::size_t g = 0; g < named.size(); ++g) {
            Tensor t = named[g].tensor;
            if (!t.has_grad()) continue;
            const std::vector<real> analytic(t.grad().begin(), t.grad().end());
            const std::size_t cols = t.rank() == 2 ? t.cols() : t.size();
            const std::size_t rows = t.size() / cols;
            std::set<std::size_t> check_rows;
            if (auto it = loss.rows.find(named[g].name); it != loss.rows.end() && rows > 64) {
                check_rows = it->second;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        if (analytic[r * cols + c] != 0) check_rows.insert(r);
                    }
                }
            } else {
                for (std::size_t r = 0; r < rows; ++r) check_rows.insert(r);
            }
            bool reached = false;
            auto& group = report.groups[g];
            for (auto r : check_rows) {
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    real& v = t.at(i);
                    const real saved = v;
                    auto at = [&](real offset) {
                        v = saved + offset;
                        return static_cast<double>(evaluate(loss));
                    };
                    const double d1 = at(kStep) - at(-kStep), d2 = at(2 * kStep) - at(-2 * kStep);
                    v = saved;
                    const double numeric = (8 * d1 - d2) / (12 * static_cast<double>(kStep));
                    const double a = static_cast<double>(analytic[i]);
                    ++group.checked;
                    const double scale = std::max(std::abs(a), std::abs(numeric));
                    if (scale <= kFloor) continue;
                    reached = true;
                    group.max_rel_error = std::max(group.max_rel_error, std::abs(a - numeric) / scale);
                }
            }
            if (reached) group.losses.push_back(loss.name);
        }
    }
    params.zero_grads();
    return report;
}

}  // namespace structlm
