// End-to-end acceptance run: gen-corpus, grad-check, pretrain, finetune x3,
// ablate, plus the sampler, area, embedding, metric and determinism checks.
// One PASS/FAIL line per criterion; exit status 1 if any fails.
//
//   structlm_acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "structlm/commands.hpp"
#include "structlm/io.hpp"
#include "structlm/objectives.hpp"
#include "structlm/synth.hpp"
#include "support/oracles.hpp"

using namespace structlm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class Suite {
  public:
    void run(int id, const std::string& name, const std::function<Outcome()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        results_[id] = o.pass;
        std::cout << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail
                  << fmt(" (%.1f s)", seconds_since(t0)) << std::endl;
    }
    int finish() const {
        std::size_t passed = 0;
        for (const auto& [id, ok] : results_) passed += ok ? 1 : 0;
        std::cout << "acceptance: " << passed << "/" << results_.size() << " criteria passed" << std::endl;
        return passed == results_.size() ? 0 : 1;
    }

  private:
    std::map<int, bool> results_;
};

std::string path(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

// Criterion 2: selection rates over synthetic pages.
Outcome sampler_statistics(const RunConfig& cfg) {
    SynthConfig synth = cfg.synth;
    synth.num_docs = 1500;
    synth.seed = 1001;
    std::vector<RawDocument> docs;
    for (auto& d : gen_pretrain_corpus(synth)) docs.push_back(std::move(d.doc));
    const auto vocab = build_vocab(docs, cfg.vocab_max_size);
    PretrainConfig objective = cfg.objective;
    Rng rng(2024);
    std::size_t tokens = 0, selected = 0, cells = 0, picked = 0, zeroed = 0, overlaps = 0;
    std::map<MaskAction, std::size_t> actions;
    // Pages are short, so each one is drawn several times to reach the sample sizes.
    constexpr int passes = 4;
    for (int pass = 0; pass < passes; ++pass)
    for (const auto& doc : docs) {
        const auto seq = encode_document(doc, vocab, cfg.model.max_len, LayoutMode::cell_level);
        const auto mvlm = sample_mvlm(seq, objective, vocab.size(), rng);
        const auto cpc = sample_cpc(seq, mvlm.masked_positions, objective, rng);
        for (std::size_t i = 0; i < seq.length; ++i) tokens += seq.is_special(i) ? 0 : 1;
        selected += mvlm.masked_positions.size();
        for (auto a : mvlm.actions) ++actions[a];
        cells += cpc.eligible_cells;
        picked += cpc.selected_cells.size();
        for (auto z : cpc.zeroed) zeroed += z;
        std::set<std::int64_t> masked_cells;
        for (auto p : mvlm.masked_positions) masked_cells.insert(seq.cell_index[static_cast<std::size_t>(p)]);
        for (auto c : cpc.selected_cells) overlaps += masked_cells.count(c);
    }
    const double n = static_cast<double>(selected);
    const double rate = n / static_cast<double>(tokens);
    const double f_mask = actions[MaskAction::mask_token] / n, f_rand = actions[MaskAction::random_token] / n,
                 f_keep = actions[MaskAction::keep] / n;
    const double cpc_rate = static_cast<double>(picked) / static_cast<double>(cells);
    const double zero_rate = static_cast<double>(zeroed) / static_cast<double>(picked);
    const bool ok = tokens >= 100000 && cells >= 10000 && std::abs(rate - 0.15) <= 0.005 &&
                    std::abs(f_mask - 0.8) <= 0.01 && std::abs(f_rand - 0.1) <= 0.01 && std::abs(f_keep - 0.1) <= 0.01 &&
                    std::abs(cpc_rate - 0.15) <= 0.01 && std::abs(zero_rate - 0.9) <= 0.01 && overlaps == 0;
    return {ok, fmt("%zu tokens: mvlm %.4f (mask %.4f random %.4f keep %.4f); %zu cells: cpc %.4f zeroed %.4f; "
                    "overlaps %zu",
                    tokens, rate, f_mask, f_rand, f_keep, cells, cpc_rate, zero_rate, overlaps)};
}

// Criterion 3: area_of against rectangle membership.
Outcome area_oracle() {
    std::size_t checked = 0, mismatches = 0;
    std::set<std::int64_t> hit;
    for (int cy = 0; cy <= 1000; cy += 7) {
        for (int cx = 0; cx <= 1000; cx += 7) {
            const auto got = area_of({cx, cy, cx, cy}, 16);
            mismatches += got != testing::brute_force_area(cx, cy, 4);
            hit.insert(got);
            ++checked;
        }
    }
    return {mismatches == 0 && hit.size() == 16,
            fmt("%zu centers, %zu mismatches, %zu of 16 areas occur", checked, mismatches, hit.size())};
}

// Criterion 4: layout contributions of same-cell tokens.
Outcome same_cell_invariance(const RunConfig& cfg) {
    SynthConfig synth = cfg.synth;
    synth.num_docs = 100;
    synth.seed = 4004;
    std::vector<RawDocument> docs;
    for (auto& d : gen_pretrain_corpus(synth)) docs.push_back(std::move(d.doc));
    const auto vocab = build_vocab(docs, cfg.vocab_max_size);
    ModelConfig model = cfg.model;
    model.vocab_size = vocab.size();
    const auto params = Parameters::init(model, 77);

    auto same_rows = [](const Tensor& t, std::size_t a, std::size_t b) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            if (t.at(a, j) != t.at(b, j)) return false;
        }
        return true;
    };
    std::size_t cell_pairs = 0, cell_violations = 0, word_docs_violated = 0;
    for (const auto& doc : docs) {
        const auto cell = encode_document(doc, vocab, model.max_len, LayoutMode::cell_level);
        const auto layout = layout_embedding(cell, params, cell.max_len());
        for (std::size_t i = 0; i < cell.length; ++i) {
            for (std::size_t k = i + 1; k < cell.length && cell.cell_index[i] >= 0; ++k) {
                if (cell.cell_index[k] != cell.cell_index[i]) continue;
                ++cell_pairs;
                cell_violations += same_rows(layout, i, k) ? 0 : 1;
            }
        }
        const auto word = encode_document(doc, vocab, model.max_len, LayoutMode::word_level);
        const auto wl = layout_embedding(word, params, word.max_len());
        bool violated = false;
        for (std::size_t i = 0; i < word.length && !violated; ++i) {
            for (std::size_t k = i + 1; k < word.length; ++k) {
                if (word.cell_index[i] < 0 || word.cell_index[k] != word.cell_index[i]) continue;
                if (word.word_index[k] != word.word_index[i] && !same_rows(wl, i, k)) {
                    violated = true;
                    break;
                }
            }
        }
        word_docs_violated += violated ? 1 : 0;
    }
    return {cell_violations == 0 && cell_pairs > 0 && word_docs_violated == docs.size(),
            fmt("cell-level: %zu same-cell token pairs, %zu differ; word-level: %zu of %zu documents break sharing",
                cell_pairs, cell_violations, word_docs_violated, docs.size())};
}

// Criterion 9: closed-form metric cases.
Outcome metric_units() {
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    };
    expect(anls_score("Acme Corp", std::vector<std::string>{"acme corp"}) == 1.0, "anls exact");
    expect(std::abs(anls_score("abc", std::vector<std::string>{"axc"}) - 0.6667) <= 1e-4, "anls abc/axc");
    expect(anls_score("abxyz", std::vector<std::string>{"abcde"}) == 0.0, "anls below threshold");
    expect(testing::edit_distance_oracle("abc", "axc") == 1, "edit oracle");

    const auto q = EntityCategory::question;
    const std::vector<std::int64_t> gold{tag_id(TagPosition::B, q), tag_id(TagPosition::E, q), kTagO};
    const std::vector<std::int64_t> half{tag_id(TagPosition::B, q), kTagO, kTagO};
    const auto s = word_f1(half, gold);
    expect(s.precision == 1.0 && s.recall == 0.5 && std::abs(s.f1 - 2.0 / 3.0) < 1e-12, "word_f1 P=1 R=0.5");

    std::size_t sequences = 0;
    std::vector<std::int64_t> tags;
    std::function<void()> visit = [&] {
        ++sequences;
        if (decode_bies(tags) != testing::regex_decode(tags)) failures.push_back("decode_bies length " + std::to_string(tags.size()));
        if (tags.size() == 3) return;
        for (std::int64_t t = 0; t < 13; ++t) {
            tags.push_back(t);
            visit();
            tags.pop_back();
        }
    };
    visit();
    std::string detail = fmt("anls cases, word_f1 case, decode_bies on %zu tag sequences", sequences);
    for (const auto& f : failures) detail += "; failed: " + f;
    return {failures.empty(), detail};
}

// Criterion 10: identical logs, byte-identical checkpoints, exact resume.
Outcome determinism(const RunConfig& base, const fs::path& data, const fs::path& dir) {
    RunConfig cfg = base;
    cfg.pretrain.steps = 150;
    std::ostringstream quiet;
    auto paths = [&](const std::string& tag) {
        return PretrainPaths{path(data, corpus_files::kCorpus), path(data, corpus_files::kVocab),
                             path(dir, tag + ".ckpt"), path(dir, tag + ".metrics.jsonl"), {}, {}};
    };
    const auto a = cmd_pretrain(cfg, paths("a"), quiet);
    const auto b = cmd_pretrain(cfg, paths("b"), quiet);
    const bool logs_equal = a.log == b.log && a.log.size() == 150 &&
                            read_file(path(dir, "a.metrics.jsonl")) == read_file(path(dir, "b.metrics.jsonl"));

    const auto bytes = read_file(path(dir, "a.ckpt"));
    save_checkpoint(path(dir, "a2.ckpt"), load_checkpoint(path(dir, "a.ckpt")));
    const bool roundtrip = read_file(path(dir, "a2.ckpt")) == bytes;

    auto first = paths("r");
    first.stop_at = 100;
    cmd_pretrain(cfg, first, quiet);
    auto second = paths("r");
    second.resume = first.checkpoint;
    second.checkpoint = path(dir, "r2.ckpt");
    const auto resumed = cmd_pretrain(cfg, second, quiet);
    const std::vector<StepRecord> tail(a.log.begin() + 100, a.log.end());
    const bool resume_equal = resumed.log == tail;
    const bool final_equal = read_file(path(dir, "r2.ckpt")) == bytes;

    return {logs_equal && roundtrip && resume_equal,
            fmt("150-step logs identical: %s; save-load-save identical: %s (%zu bytes); resumed steps 100-149 "
                "identical: %s; resumed final checkpoint identical: %s",
                logs_equal ? "yes" : "no", roundtrip ? "yes" : "no", bytes.size(), resume_equal ? "yes" : "no",
                final_equal ? "yes" : "no")};
}

double tail_mean(const std::vector<real>& losses, std::size_t n) {
    n = std::min(n, losses.size());
    double sum = 0;
    for (std::size_t i = losses.size() - n; i < losses.size(); ++i) sum += static_cast<double>(losses[i]);
    return sum / static_cast<double>(n);
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "structlm-acceptance";
    fs::remove_all(work);
    fs::create_directories(work);
    const fs::path data = work / "data";
    const RunConfig cfg;
    std::ostringstream log;
    Suite suite;

    std::cout << "work directory: " << work.string() << std::endl;
    const auto summary = cmd_gen_corpus(cfg, data.string(), log);
    std::cout << "corpus: " << summary.pretrain_docs << " pages, vocabulary " << summary.vocab_size << std::endl;

    suite.run(1, "gradient oracle", [&] {
        RunConfig gc = cfg;
        gc.model = grad_check_model();
        const auto t0 = std::chrono::steady_clock::now();
        const auto report = cmd_grad_check(gc, log);
        const double secs = seconds_since(t0);
        double worst = 0;
        for (const auto& g : report.groups) worst = std::max(worst, g.max_rel_error);
        return Outcome{report.passed() && secs <= 120,
                       fmt("%zu parameter groups, max relative error %.2e (tolerance 1e-4), %.1f s of 120",
                           report.groups.size(), worst, secs)};
    });
    suite.run(2, "sampler statistics", [&] { return sampler_statistics(cfg); });
    suite.run(3, "area oracle", [] { return area_oracle(); });
    suite.run(4, "same-cell invariance", [&] { return same_cell_invariance(cfg); });

    const std::string pretrained = path(work, "pretrained.ckpt");
    suite.run(5, "desk-scale pre-training", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const auto out = cmd_pretrain(cfg,
                                      PretrainPaths{path(data, corpus_files::kCorpus), path(data, corpus_files::kVocab),
                                                    pretrained, path(work, "pretrained.metrics.jsonl"), {}, {}},
                                      log);
        const double secs = seconds_since(t0);
        std::vector<real> mvlm;
        for (const auto& r : out.log) mvlm.push_back(r.mvlm_loss);
        const double start = static_cast<double>(mvlm.front()), final = tail_mean(mvlm, 50);
        const double acc = static_cast<double>(out.held_out->cpc_accuracy);
        return Outcome{final < 0.6 * start && acc >= 0.6 && out.log.size() <= 5000 && secs <= 1800,
                       fmt("%zu steps: mvlm %.4f -> %.4f (last 50 mean, %.1f%% of step 0, need < 60%%); held-out "
                           "mvlm %.4f, held-out cpc accuracy %.4f (need >= 0.60); %.0f s of 1800",
                           out.log.size(), start, final, 100 * final / start,
                           static_cast<double>(out.held_out->mvlm_loss), acc, secs)};
    });

    suite.run(8, "fine-tuning capacity", [&] {
        bool ok = true;
        std::string detail;
        const std::map<TaskKind, std::pair<std::string, double>> targets{
            {TaskKind::tagging, {"f1", 0.95}}, {TaskKind::qa, {"anls", 0.90}}, {TaskKind::classification, {"accuracy", 0.95}}};
        for (const auto& [task, target] : targets) {
            const std::string name(to_string(task));
            const auto out = cmd_finetune(
                cfg, task,
                FinetunePaths{path(data, corpus_files::examples(task)), path(data, corpus_files::documents(task)),
                              path(data, corpus_files::kVocab), pretrained, path(work, name + ".ckpt"),
                              path(work, name + ".report.txt")},
                log);
            const double v = out.report.metrics.at(target.first);
            ok = ok && v >= target.second;
            detail += fmt("%s%s %s %.4f (need >= %.2f)", detail.empty() ? "" : "; ", name.c_str(),
                          target.first.c_str(), v, target.second);
        }
        return Outcome{ok, detail};
    });

    suite.run(9, "metric unit suites", [] { return metric_units(); });
    suite.run(10, "determinism and checkpoint round trip", [&] {
        fs::create_directories(work / "determinism");
        return determinism(cfg, data, work / "determinism");
    });

    std::optional<AblationOutcome> ablation;
    double ablation_secs = 0;
    auto run_ablation = [&]() -> const AblationOutcome& {
        if (!ablation) {
            const auto t0 = std::chrono::steady_clock::now();
            ablation = cmd_ablate(cfg, data.string(), path(work, "ablation"), log);
            ablation_secs = seconds_since(t0);
            std::cout << ablation->table;
        }
        return *ablation;
    };
    auto row = [&](Variant v) -> const AblationRow& {
        for (const auto& r : run_ablation().rows) {
            if (r.variant == v) {
                if (!r.ok) throw std::runtime_error(std::string(to_string(v)) + " failed: " + r.error);
                return r;
            }
        }
        throw std::runtime_error(std::string(to_string(v)) + " missing from the ablation");
    };

    suite.run(6, "cell-level vs word-level MVLM loss", [&] {
        const double cell = tail_mean(row(Variant::full).mvlm_losses, 50);
        const double word = tail_mean(row(Variant::word_level).mvlm_losses, 50);
        return Outcome{cell < word, fmt("mean of last 50 steps: cell-level %.4f, word-level %.4f (need cell < word)",
                                        cell, word)};
    });
    suite.run(7, "ablation ordering on form tagging", [&] {
        const double full = row(Variant::full).metrics.at("f1");
        const double no_cpc = row(Variant::no_cpc).metrics.at("f1");
        const double none = row(Variant::no_pretrain).metrics.at("f1");
        const bool ok = full >= no_cpc && no_cpc >= none && full - none >= 0.05 && ablation_secs <= 2700;
        return Outcome{ok, fmt("F1 full %.4f, no_cpc %.4f, no_pretrain %.4f, word_level %.4f; gap full - no_pretrain "
                               "%.1f points (need >= 5); ablation %.0f s of 2700",
                               full, no_cpc, none, row(Variant::word_level).metrics.at("f1"), 100 * (full - none),
                               ablation_secs)};
    });

    return suite.finish();
}
