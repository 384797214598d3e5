#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "structlm/checkpoint.hpp"
#include "structlm/config.hpp"
#include "structlm/gradcheck.hpp"
#include "structlm/pretrain.hpp"
#include "structlm/tasks.hpp"

namespace structlm {

// File names inside a gen-corpus output directory.
namespace corpus_files {
inline constexpr const char* kCorpus = "corpus.jsonl";
inline constexpr const char* kVocab = "vocab.txt";
std::string examples(TaskKind task);  // "tagging.jsonl", ...
std::string documents(TaskKind task);  // "tagging_docs.jsonl", ...
}  // namespace corpus_files

struct GenCorpusSummary {
    std::size_t pretrain_docs = 0;
    std::size_t vocab_size = 0;
    std::map<TaskKind, std::size_t> task_examples;
};

// Pre-training pages, the three task datasets and a vocabulary built from the
// pre-training pages plus the train split of the task pages.
GenCorpusSummary cmd_gen_corpus(const RunConfig& cfg, const std::string& out_dir, std::ostream& log);

struct PretrainPaths {
    std::string corpus;
    std::string vocab;
    std::string checkpoint;  // output
    std::string metrics;     // output, JSONL
    std::optional<std::string> resume;
    std::optional<std::size_t> stop_at;  // save and stop once this many steps are done
};

struct PretrainOutcome {
    std::vector<StepRecord> log;  // steps run by this invocation
    std::optional<PretrainEval> held_out;  // set when training finished
    Checkpoint checkpoint;
};

PretrainOutcome cmd_pretrain(const RunConfig& cfg, const PretrainPaths& paths, std::ostream& log);

struct FinetunePaths {
    std::string dataset;
    std::string docs;
    std::string vocab;  // used when there is no init checkpoint
    std::optional<std::string> init;
    std::string checkpoint;  // output
    std::string report;      // output
};

struct FinetuneOutcome {
    FinetuneReport report;
    std::string report_text;
};

FinetuneOutcome cmd_finetune(const RunConfig& cfg, TaskKind task, const FinetunePaths& paths, std::ostream& log);

// Report text: key = value lines (metrics to 4 decimals), then the config.
std::string render_finetune_report(const FinetuneReport& report, const std::string& init, const std::string& config_text,
                                   std::uint64_t seed);

struct AblationRow {
    Variant variant = Variant::full;
    bool ok = false;
    std::string error;
    std::map<std::string, double> metrics;  // tagging precision, recall, f1: means over seeds
    std::vector<double> seed_f1;
    std::vector<real> mvlm_losses;          // per pre-training step; empty without pre-training
};

struct AblationOutcome {
    std::vector<AblationRow> rows;
    std::vector<std::string> ordering_flags;  // "full >= no_cpc: yes", ...
    std::string table;
};

// Each variant pre-trains (unless no_pretrain), then fine-tunes the tagging
// task on the first ablate.train_docs training documents once per seed
// (finetune.seed, +1, ...). Writes ablation.txt and loss_series.tsv to out_dir.
AblationOutcome cmd_ablate(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                           std::ostream& log);

GradCheckReport cmd_grad_check(const RunConfig& cfg, std::ostream& log);

// Tiny model preset the grad-check command starts from.
ModelConfig grad_check_model();

}  // namespace structlm
