#include "structlm/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "structlm/io.hpp"
#include "structlm/synth.hpp"

namespace structlm {

namespace fs = std::filesystem;

namespace corpus_files {
std::string examples(TaskKind task) { return std::string(to_string(task)) + ".jsonl"; }
std::string documents(TaskKind task) { return std::string(to_string(task)) + "_docs.jsonl"; }
}  // namespace corpus_files

namespace {

std::string config_text(const RunConfig& cfg) {
    RunConfig copy = cfg;
    return ConfigSchema(copy).render();
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

Vocab read_vocab(const std::string& path) {
    try {
        return Vocab::deserialize(read_file(path));
    } catch (const std::invalid_argument& e) {
        throw data_error(path + ": " + e.what());
    }
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw data_error(dir + ": cannot create output directory");
}

ModelConfig pretrain_model(const RunConfig& cfg, const Vocab& vocab) {
    ModelConfig m = cfg.model;
    m.vocab_size = vocab.size();
    m.cpc_head = cfg.objective.cpc_enabled;
    return m;
}

struct PretrainData {
    std::vector<TokenizedSequence> train, held_out;
    std::vector<std::string> train_ids;
};

PretrainData encode_corpus(const std::vector<RawDocument>& docs, const Vocab& vocab, const ModelConfig& model,
                           std::size_t eval_docs) {
    if (docs.size() <= eval_docs) {
        throw config_error("pretrain: corpus has " + std::to_string(docs.size()) +
                           " documents, not more than pretrain.eval_docs = " + std::to_string(eval_docs));
    }
    PretrainData out;
    const std::size_t n_train = docs.size() - eval_docs;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        auto seq = encode_document(docs[i], vocab, model.max_len, model.layout_mode);
        if (i < n_train) {
            out.train.push_back(std::move(seq));
            out.train_ids.push_back(docs[i].doc_id);
        } else {
            out.held_out.push_back(std::move(seq));
        }
    }
    return out;
}

std::string describe_record(const StepRecord& r) {
    char buf[160];
    if (r.cpc_loss) {
        std::snprintf(buf, sizeof buf, "step %5zu  lr %.3e  mvlm %.4f  cpc %.4f  cpc_acc %.3f", r.step,
                      static_cast<double>(r.lr), static_cast<double>(r.mvlm_loss), static_cast<double>(*r.cpc_loss),
                      static_cast<double>(*r.cpc_acc));
    } else {
        std::snprintf(buf, sizeof buf, "step %5zu  lr %.3e  mvlm %.4f", r.step, static_cast<double>(r.lr),
                      static_cast<double>(r.mvlm_loss));
    }
    return buf;
}

std::string describe_eval(const PretrainEval& e, bool cpc) {
    std::string out = "held-out mvlm " + fixed4(e.mvlm_loss) + " (" + std::to_string(e.mvlm_tokens) + " tokens)";
    if (cpc) out += ", cpc " + fixed4(e.cpc_loss) + ", cpc_acc " + fixed4(e.cpc_accuracy) + " (" +
                    std::to_string(e.cpc_tokens) + " tokens)";
    return out;
}

Checkpoint make_checkpoint(const Pretrainer& p, const Vocab& vocab, const std::string& config) {
    Checkpoint c;
    c.kind = "pretrain";
    c.model = p.model_config();
    c.vocab = vocab;
    c.params = p.state().params;
    c.adam = p.state().adam;
    c.step = p.state().step;
    c.rng_state = p.state().rng.state();
    c.config = config;
    return c;
}

// The first `n` train-split examples and the whole eval split; n = 0 keeps all.
TaskDataset first_train_examples(const TaskDataset& data, std::size_t n) {
    if (n == 0) return data;
    TaskDataset out;
    out.kind = data.kind;
    std::size_t kept = 0;
    auto take = [&](const auto& ex) { return ex.eval || kept++ < n; };
    for (const auto& e : data.tagging) {
        if (take(e)) out.tagging.push_back(e);
    }
    for (const auto& e : data.qa) {
        if (take(e)) out.qa.push_back(e);
    }
    for (const auto& e : data.classification) {
        if (take(e)) out.classification.push_back(e);
    }
    return out;
}

}  // namespace

GenCorpusSummary cmd_gen_corpus(const RunConfig& cfg, const std::string& out_dir, std::ostream& log) {
    cfg.validate();
    if (cfg.synth.num_task_docs == 0) throw config_error("synth.num_task_docs must be positive");
    ensure_dir(out_dir);

    std::vector<RawDocument> pages;
    for (auto& d : gen_pretrain_corpus(cfg.synth)) pages.push_back(std::move(d.doc));

    Rng rng(derive_seed(cfg.synth.seed, {0x7461736b}));
    std::vector<std::pair<TaskKind, TaskDataset>> tasks;
    tasks.emplace_back(TaskKind::tagging, gen_form_dataset(cfg.synth, rng, cfg.synth.num_task_docs));
    tasks.emplace_back(TaskKind::qa, gen_qa_dataset(cfg.synth, rng, cfg.synth.num_task_docs));
    tasks.emplace_back(TaskKind::classification, gen_cls_dataset(cfg.synth, rng, cfg.synth.num_task_docs));

    std::vector<RawDocument> vocab_docs = pages;
    for (const auto& [kind, data] : tasks) {
        for (const auto& e : data.tagging) {
            if (!e.eval) vocab_docs.push_back(e.doc);
        }
        for (const auto& e : data.qa) {
            if (!e.eval) vocab_docs.push_back(e.doc);
        }
        for (const auto& e : data.classification) {
            if (!e.eval) vocab_docs.push_back(e.doc);
        }
    }
    const auto vocab = build_vocab(vocab_docs, cfg.vocab_max_size);

    write_file(join_path(out_dir, corpus_files::kCorpus), documents_to_jsonl(pages));
    write_file(join_path(out_dir, corpus_files::kVocab), vocab.serialize());
    GenCorpusSummary summary;
    summary.pretrain_docs = pages.size();
    summary.vocab_size = vocab.size();
    for (const auto& [kind, data] : tasks) {
        write_file(join_path(out_dir, corpus_files::examples(kind)), task_examples_to_jsonl(data));
        write_file(join_path(out_dir, corpus_files::documents(kind)), documents_to_jsonl(task_documents(data)));
        summary.task_examples[kind] = data.size();
    }
    write_file(join_path(out_dir, "config.txt"), config_text(cfg));

    log << "pre-training documents: " << summary.pretrain_docs << "\n";
    for (const auto& [kind, n] : summary.task_examples) {
        log << to_string(kind) << " examples: " << n << "\n";
    }
    log << "vocabulary: " << summary.vocab_size << " tokens\n";
    return summary;
}

PretrainOutcome cmd_pretrain(const RunConfig& cfg, const PretrainPaths& paths, std::ostream& log) {
    cfg.validate();
    const auto vocab = read_vocab(paths.vocab);
    const auto model = pretrain_model(cfg, vocab);
    model.validate();
    const auto docs = read_documents(paths.corpus);
    auto data = encode_corpus(docs, vocab, model, cfg.eval_docs);
    const std::string text = config_text(cfg);

    Pretrainer trainer(model, cfg.objective, cfg.pretrain, std::move(data.train), std::move(data.train_ids));
    if (paths.resume) {
        auto ckpt = load_checkpoint(*paths.resume);
        if (ckpt.kind != "pretrain" || !ckpt.adam) {
            throw config_error("resume: " + *paths.resume + " is not a pre-training checkpoint");
        }
        if (!(ckpt.model == model)) {
            throw config_error("resume: model config differs from the checkpoint (checkpoint " +
                               model_config_json(ckpt.model) + ", requested " + model_config_json(model) + ")");
        }
        if (!(ckpt.vocab == vocab)) throw config_error("resume: vocabulary differs from the checkpoint");
        TrainerState state;
        state.params = std::move(ckpt.params);
        state.adam = std::move(*ckpt.adam);
        state.step = ckpt.step;
        state.rng.set_state(ckpt.rng_state);
        trainer.restore(std::move(state));
        log << "resumed from " << *paths.resume << " at step " << ckpt.step << "\n";
    } else {
        trainer.init();
    }

    std::ofstream metrics(paths.metrics, std::ios::binary | (paths.resume ? std::ios::app : std::ios::trunc));
    if (!metrics) throw data_error(paths.metrics + ": cannot write metrics log");

    PretrainOutcome out;
    const std::size_t until = paths.stop_at ? std::min(*paths.stop_at, cfg.pretrain.steps) : cfg.pretrain.steps;
    const std::size_t every = std::max<std::size_t>(1, cfg.pretrain.steps / 20);
    trainer.run(until, [&](const StepRecord& r) {
        metrics << metrics_line(r) << "\n";
        out.log.push_back(r);
        if (r.step % every == 0 || r.step + 1 == cfg.pretrain.steps) log << describe_record(r) << "\n";
        if (cfg.pretrain.eval_every && (r.step + 1) % cfg.pretrain.eval_every == 0) {
            log << "  " << describe_eval(evaluate_pretrain(trainer.state().params, model, cfg.objective, data.held_out,
                                                           cfg.pretrain.seed),
                                         cfg.objective.cpc_enabled)
                << "\n";
        }
    });
    metrics.flush();
    if (!metrics) throw data_error(paths.metrics + ": write failed");

    if (trainer.done()) {
        out.held_out = evaluate_pretrain(trainer.state().params, model, cfg.objective, data.held_out, cfg.pretrain.seed);
        log << describe_eval(*out.held_out, cfg.objective.cpc_enabled) << "\n";
    } else {
        log << "stopped at step " << trainer.state().step << " of " << cfg.pretrain.steps << "\n";
    }
    out.checkpoint = make_checkpoint(trainer, vocab, text);
    save_checkpoint(paths.checkpoint, out.checkpoint);
    log << "checkpoint: " << paths.checkpoint << "\n";
    return out;
}

std::string render_finetune_report(const FinetuneReport& report, const std::string& init, const std::string& config,
                                   std::uint64_t seed) {
    std::string out;
    out += "task = " + std::string(to_string(report.task)) + "\n";
    out += "seed = " + std::to_string(seed) + "\n";
    out += "init = " + init + "\n";
    out += "train_examples = " + std::to_string(report.train_examples) + "\n";
    out += "eval_examples = " + std::to_string(report.eval_examples) + "\n";
    if (!report.losses.empty()) {
        out += "first_loss = " + fixed4(report.losses.front()) + "\n";
        out += "final_loss = " + fixed4(report.losses.back()) + "\n";
    }
    for (const auto& [name, value] : report.metrics) {
        out += name + " = " + (name == "examples" ? std::to_string(static_cast<long long>(value)) : fixed4(value)) + "\n";
    }
    out += "\n# resolved config\n" + config;
    return out;
}

FinetuneOutcome cmd_finetune(const RunConfig& cfg, TaskKind task, const FinetunePaths& paths, std::ostream& log) {
    cfg.validate();
    auto dataset = read_task_dataset(task, paths.dataset, paths.docs);

    ModelConfig model;
    Vocab vocab;
    std::optional<Checkpoint> init;
    if (paths.init) {
        init = load_checkpoint(*paths.init);
        model = init->model;
        vocab = init->vocab;
        if (model.num_doc_classes != cfg.model.num_doc_classes) {
            log << "note: using num_doc_classes = " << model.num_doc_classes << " from the checkpoint\n";
        }
    } else {
        vocab = read_vocab(paths.vocab);
        model = cfg.model;
        model.vocab_size = vocab.size();
        model.cpc_head = false;
    }

    log << "fine-tuning " << to_string(task) << " on " << dataset.size() - dataset.eval_count() << " examples ("
        << dataset.eval_count() << " held out), init " << (paths.init ? *paths.init : "none") << "\n";
    auto result = finetune(dataset, vocab, model, init ? &init->params : nullptr, cfg.finetune);

    FinetuneOutcome out;
    out.report = result.report;
    out.report_text = render_finetune_report(result.report, paths.init ? *paths.init : "none", config_text(cfg),
                                             cfg.finetune.train.seed);
    write_file(paths.report, out.report_text);

    Checkpoint ckpt;
    ckpt.kind = "finetune";
    ckpt.model = model;
    ckpt.vocab = vocab;
    ckpt.params = std::move(result.params);
    ckpt.step = cfg.finetune.train.steps;
    ckpt.config = config_text(cfg);
    save_checkpoint(paths.checkpoint, ckpt);

    for (const auto& [name, value] : out.report.metrics) {
        if (name != "examples") log << name << " = " << fixed4(value) << "\n";
    }
    log << "report: " << paths.report << "\ncheckpoint: " << paths.checkpoint << "\n";
    return out;
}

AblationOutcome cmd_ablate(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                           std::ostream& log) {
    cfg.validate();
    ensure_dir(out_dir);
    const auto vocab = read_vocab(join_path(data_dir, corpus_files::kVocab));
    std::optional<std::vector<RawDocument>> docs;  // read by the first variant that pre-trains
    const auto dataset = read_task_dataset(TaskKind::tagging, join_path(data_dir, corpus_files::examples(TaskKind::tagging)),
                                           join_path(data_dir, corpus_files::documents(TaskKind::tagging)));
    const auto train_subset = first_train_examples(dataset, cfg.ablate_train_docs);
    log << "fine-tuning on " << train_subset.size() - train_subset.eval_count() << " tagging documents, "
        << train_subset.eval_count() << " held out, " << cfg.ablate_finetune_steps << " steps, " << cfg.ablate_seeds
        << " seed(s) per variant\n";

    AblationOutcome out;
    for (const auto variant : cfg.variants) {
        AblationRow row;
        row.variant = variant;
        log << "== variant " << to_string(variant) << "\n";
        try {
            RunConfig vc = cfg;
            if (variant == Variant::no_cpc) vc.objective.cpc_enabled = false;
            if (variant == Variant::word_level) vc.model.layout_mode = LayoutMode::word_level;
            const auto model = pretrain_model(vc, vocab);
            std::optional<Parameters> pretrained;
            if (variant != Variant::no_pretrain) {
                if (!docs) docs = read_documents(join_path(data_dir, corpus_files::kCorpus));
                auto data = encode_corpus(*docs, vocab, model, vc.eval_docs);
                Pretrainer trainer(model, vc.objective, vc.pretrain, std::move(data.train), std::move(data.train_ids));
                trainer.init();
                const std::size_t every = std::max<std::size_t>(1, vc.pretrain.steps / 10);
                trainer.run(vc.pretrain.steps, [&](const StepRecord& r) {
                    row.mvlm_losses.push_back(r.mvlm_loss);
                    if (r.step % every == 0 || r.step + 1 == vc.pretrain.steps) log << "  " << describe_record(r) << "\n";
                });
                pretrained = trainer.state().params;
            }
            ModelConfig ft_model = model;
            if (!pretrained) ft_model.cpc_head = false;
            for (std::size_t k = 0; k < cfg.ablate_seeds; ++k) {
                FinetuneConfig fc = vc.finetune;
                fc.train.seed = vc.finetune.train.seed + k;
                fc.train.steps = cfg.ablate_finetune_steps;
                const auto result = finetune(train_subset, vocab, ft_model, pretrained ? &*pretrained : nullptr, fc);
                for (const auto& [name, v] : result.report.metrics) {
                    row.metrics[name] += v / static_cast<double>(cfg.ablate_seeds);
                }
                row.seed_f1.push_back(result.report.metrics.at("f1"));
                log << "  seed " << fc.train.seed << " f1 " << fixed4(row.seed_f1.back()) << "\n";
            }
            row.ok = true;
            log << "  f1 " << fixed4(row.metrics.at("f1")) << "\n";
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
            log << "  failed: " << e.what() << "\n";
        }
        out.rows.push_back(std::move(row));
    }

    std::string table = "variant      status  precision  recall  f1      final_mvlm  f1 per seed\n";
    for (const auto& r : out.rows) {
        char buf[256];
        if (r.ok) {
            std::string seeds;
            for (auto f : r.seed_f1) seeds += (seeds.empty() ? "" : " ") + fixed4(f);
            std::snprintf(buf, sizeof buf, "%-12s ok      %.4f     %.4f  %.4f  %-10s  %s\n",
                          std::string(to_string(r.variant)).c_str(), r.metrics.at("precision"), r.metrics.at("recall"),
                          r.metrics.at("f1"), r.mvlm_losses.empty() ? "-" : fixed4(r.mvlm_losses.back()).c_str(),
                          seeds.c_str());
        } else {
            std::snprintf(buf, sizeof buf, "%-12s FAILED  %s\n", std::string(to_string(r.variant)).c_str(), r.error.c_str());
        }
        table += buf;
    }
    auto find = [&](Variant v) -> const AblationRow* {
        for (const auto& r : out.rows) {
            if (r.variant == v && r.ok) return &r;
        }
        return nullptr;
    };
    if (const auto* full = find(Variant::full)) {
        for (auto v : {Variant::no_cpc, Variant::word_level, Variant::no_pretrain}) {
            if (const auto* other = find(v)) {
                const bool holds = full->metrics.at("f1") >= other->metrics.at("f1");
                out.ordering_flags.push_back("full >= " + std::string(to_string(v)) + ": " + (holds ? "yes" : "NO"));
            }
        }
    }
    for (const auto& f : out.ordering_flags) table += f + "\n";
    out.table = table;
    write_file(join_path(out_dir, "ablation.txt"), table + "\n# resolved config\n" + config_text(cfg));

    const auto* cell = find(Variant::full);
    const auto* word = find(Variant::word_level);
    std::string series = "step";
    if (cell && !cell->mvlm_losses.empty()) series += "\tcell_level";
    if (word && !word->mvlm_losses.empty()) series += "\tword_level";
    series += "\n";
    for (std::size_t s = 0; s < cfg.pretrain.steps; ++s) {
        series += std::to_string(s);
        if (cell && !cell->mvlm_losses.empty()) series += "\t" + format_double(cell->mvlm_losses[s]);
        if (word && !word->mvlm_losses.empty()) series += "\t" + format_double(word->mvlm_losses[s]);
        series += "\n";
    }
    write_file(join_path(out_dir, "loss_series.tsv"), series);
    log << table;
    return out;
}

ModelConfig grad_check_model() {
    ModelConfig m;
    m.num_layers = 2;
    m.num_heads = 2;
    m.hidden_d = 16;
    m.ffn_d = 32;
    m.max_len = 48;
    return m;
}

GradCheckReport cmd_grad_check(const RunConfig& cfg, std::ostream& log) {
    ModelConfig model = cfg.model;
    model.init_std = cfg.gradcheck_init_std;
    auto report = run_grad_check(model, cfg.pretrain.seed);
    log << report.render();
    return report;
}

}  // namespace structlm
