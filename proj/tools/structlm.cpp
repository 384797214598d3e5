// structlm: command-line entry point.
//
//   structlm gen-corpus --out DIR
//   structlm grad-check
//   structlm pretrain   --corpus DIR/corpus.jsonl --vocab DIR/vocab.txt --out model.ckpt
//   structlm finetune   --task tagging --dataset DIR/tagging.jsonl --init model.ckpt --out tagging.ckpt
//   structlm ablate     --data DIR --out RESULTS
//
// Every command also takes --config FILE and one --<key> VALUE flag per config
// key; flags override the file, which overrides the defaults.

#include <CLI11.hpp>
#include <iostream>
#include <map>

#include "structlm/commands.hpp"

using namespace structlm;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kCheckFailed = 3 };

struct Common {
    std::string config_file;
    std::map<std::string, std::string> flags;
    std::map<std::string, CLI::Option*> options;
};

void add_config_flags(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_file, "key = value config file");
    RunConfig defaults;
    ConfigSchema schema(defaults);
    for (const auto& e : schema.entries()) {
        auto* opt = cmd->add_option("--" + e.key, common.flags[e.key], e.type)->group("Config keys");
        common.options[e.key] = opt;
    }
}

// Defaults, then the config file, then flags given on the command line.
RunConfig resolve(const Common& common, RunConfig base) {
    ConfigSchema schema(base);
    if (!common.config_file.empty()) schema.apply_file(common.config_file);
    for (const auto& [key, opt] : common.options) {
        if (opt->count() > 0) schema.set(key, common.flags.at(key), "--" + key);
    }
    base.validate();
    std::cout << "# resolved config\n" << schema.render() << "\n";
    return base;
}

std::string sibling(const std::string& path, const std::string& name) {
    const auto slash = path.find_last_of('/');
    return slash == std::string::npos ? name : path.substr(0, slash + 1) + name;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structlm desk-scale trainer"};
    app.require_subcommand(1);

    Common gen_common, pre_common, ft_common, abl_common, gc_common;

    std::string gen_out;
    auto* gen = app.add_subcommand("gen-corpus", "write the synthetic corpus, task datasets and vocabulary");
    gen->add_option("--out", gen_out, "output directory")->required();
    add_config_flags(gen, gen_common);

    PretrainPaths pre_paths;
    std::string resume;
    std::size_t stop_at = 0;
    auto* pre = app.add_subcommand("pretrain", "MVLM + CPC pre-training");
    pre->add_option("--corpus", pre_paths.corpus, "cell-JSONL pre-training corpus")->required();
    pre->add_option("--vocab", pre_paths.vocab, "vocabulary file (default: vocab.txt next to the corpus)");
    pre->add_option("--out", pre_paths.checkpoint, "output checkpoint")->required();
    pre->add_option("--metrics", pre_paths.metrics, "metrics JSONL (default: <out>.metrics.jsonl)");
    pre->add_option("--resume", resume, "continue from this checkpoint");
    pre->add_option("--stop-at", stop_at, "save and stop after this many steps");
    add_config_flags(pre, pre_common);

    std::string task_name, init;
    FinetunePaths ft_paths;
    auto* ft = app.add_subcommand("finetune", "fine-tune a task head and report its metric");
    ft->add_option("--task", task_name, "tagging, qa or classification")->required();
    ft->add_option("--dataset", ft_paths.dataset, "task-JSONL examples")->required();
    ft->add_option("--docs", ft_paths.docs, "cell-JSONL documents (default: <dataset stem>_docs.jsonl)");
    ft->add_option("--vocab", ft_paths.vocab, "vocabulary when --init is none (default: vocab.txt next to the dataset)");
    ft->add_option("--init", init, "pre-trained checkpoint or 'none'")->required();
    ft->add_option("--out", ft_paths.checkpoint, "output checkpoint")->required();
    ft->add_option("--report", ft_paths.report, "report file (default: <out>.report.txt)");
    add_config_flags(ft, ft_common);

    std::string abl_data, abl_out;
    auto* abl = app.add_subcommand("ablate", "full / no_cpc / word_level / no_pretrain comparison on tagging");
    abl->add_option("--data", abl_data, "gen-corpus output directory")->required();
    abl->add_option("--out", abl_out, "output directory")->required();
    add_config_flags(abl, abl_common);

    bool fault = false;
    auto* gc = app.add_subcommand("grad-check", "finite-difference check of every loss on a tiny model");
    gc->add_flag("--inject-gelu-fault", fault, "negative control: scale the GELU backward rule by 1.5");
    add_config_flags(gc, gc_common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) {
            cmd_gen_corpus(resolve(gen_common, {}), gen_out, std::cout);
        } else if (*pre) {
            const auto cfg = resolve(pre_common, {});
            if (pre_paths.vocab.empty()) pre_paths.vocab = sibling(pre_paths.corpus, corpus_files::kVocab);
            if (pre_paths.metrics.empty()) pre_paths.metrics = pre_paths.checkpoint + ".metrics.jsonl";
            if (!resume.empty()) pre_paths.resume = resume;
            if (pre->count("--stop-at")) pre_paths.stop_at = stop_at;
            cmd_pretrain(cfg, pre_paths, std::cout);
        } else if (*ft) {
            const auto task = parse_task_kind(task_name);
            const auto cfg = resolve(ft_common, {});
            if (ft_paths.docs.empty()) {
                auto stem = ft_paths.dataset;
                if (stem.size() > 6 && stem.ends_with(".jsonl")) stem.resize(stem.size() - 6);
                ft_paths.docs = stem + "_docs.jsonl";
            }
            if (ft_paths.vocab.empty()) ft_paths.vocab = sibling(ft_paths.dataset, corpus_files::kVocab);
            if (ft_paths.report.empty()) ft_paths.report = ft_paths.checkpoint + ".report.txt";
            if (init != "none") ft_paths.init = init;
            cmd_finetune(cfg, task, ft_paths, std::cout);
        } else if (*abl) {
            cmd_ablate(resolve(abl_common, {}), abl_data, abl_out, std::cout);
        } else if (*gc) {
            RunConfig base;
            base.model = grad_check_model();
            const auto cfg = resolve(gc_common, base);
            if (fault) set_gelu_backward_scale(real{1.5});
            const auto report = cmd_grad_check(cfg, std::cout);
            return report.passed() ? kOk : kCheckFailed;
        }
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const ingest_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}
