#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <set>
#include <sstream>

#include "structlm/checkpoint.hpp"
#include "structlm/commands.hpp"
#include "structlm/io.hpp"
#include "support/fixtures.hpp"

using namespace structlm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("structlm-cli-" + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

template <class E>
std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    return "<no error>";
}

RunConfig small_run() {
    RunConfig c;
    c.synth.num_docs = 24;
    c.synth.num_task_docs = 10;
    c.eval_docs = 4;
    c.model.num_layers = 1;
    c.model.num_heads = 2;
    c.model.hidden_d = 16;
    c.model.ffn_d = 32;
    c.model.max_len = 64;
    c.pretrain.steps = 6;
    c.pretrain.batch_size = 2;
    c.finetune.train.steps = 3;
    c.finetune.train.batch_size = 2;
    return c;
}

Checkpoint tiny_checkpoint(bool with_adam) {
    const auto vocab = testing::fixture_vocab();
    Checkpoint c;
    c.kind = "pretrain";
    c.model = testing::tiny_model_config(vocab.size());
    c.vocab = vocab;
    c.params = Parameters::init(c.model, 9);
    if (with_adam) {
        const auto tensors = c.params.tensors();
        c.adam = AdamState::for_params(tensors);
        c.adam->step_count = 3;
        for (auto& m : c.adam->first_moment) {
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = real(0.001) * static_cast<real>(i % 17);
        }
    }
    c.step = 3;
    c.rng_state = Rng(5).state();
    c.config = "train.seed = 5\n";
    return c;
}

// Rewrites the JSON header of a serialized checkpoint.
std::string edit_header(const std::string& bytes, const std::function<void(nlohmann::json&)>& edit) {
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 12, 8);
    auto header = nlohmann::json::parse(bytes.substr(20, len));
    edit(header);
    const auto text = header.dump();
    std::string out = bytes.substr(0, 12);
    const std::uint64_t new_len = text.size();
    out.append(reinterpret_cast<const char*>(&new_len), 8);
    return out + text + bytes.substr(20 + len);
}

std::size_t line_count(const std::string& path) {
    const auto text = read_file(path);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("config: defaults render and parse back unchanged") {
    RunConfig a;
    const auto text = ConfigSchema(a).render();
    RunConfig b;
    ConfigSchema sb(b);
    sb.apply_text(text, "defaults");
    CHECK(sb.render() == text);
}

TEST_CASE("config: typed parsing of every value kind") {
    RunConfig c;
    ConfigSchema s(c);
    s.apply_text("# comment\n"
                 "train.steps = 42\n"
                 "train.lr = 0.001   # trailing comment\n"
                 "pretrain.cpc = off\n"
                 "model.layout_mode = word\n"
                 "pretrain.sampling = fixed_count\n"
                 "synth.templates = form, letter\n"
                 "ablate.variants = full,no_pretrain\n",
                 "run.cfg");
    CHECK(c.pretrain.steps == 42);
    CHECK(c.pretrain.lr == doctest::Approx(0.001));
    CHECK_FALSE(c.objective.cpc_enabled);
    CHECK(c.model.layout_mode == LayoutMode::word_level);
    CHECK(c.objective.sampling == SamplingMode::fixed_count);
    CHECK(c.synth.templates == std::vector<DocTemplate>{DocTemplate::form, DocTemplate::letter});
    CHECK(c.variants == std::vector<Variant>{Variant::full, Variant::no_pretrain});
}

TEST_CASE("config: errors name the source line and key") {
    RunConfig c;
    ConfigSchema s(c);
    auto msg = error_of<config_error>([&] { s.apply_text("train.steps = 5\n\ntrain.stpes = 5\n", "a.cfg"); });
    CHECK(msg.find("a.cfg:3") != std::string::npos);
    CHECK(msg.find("unknown key 'train.stpes'") != std::string::npos);

    msg = error_of<config_error>([&] { s.apply_text("train.steps = many\n", "b.cfg"); });
    CHECK(msg.find("b.cfg:1") != std::string::npos);
    CHECK(msg.find("train.steps") != std::string::npos);

    msg = error_of<config_error>([&] { s.apply_text("pretrain.cpc = maybe\n", "c.cfg"); });
    CHECK(msg.find("c.cfg:1") != std::string::npos);

    msg = error_of<config_error>([&] { s.apply_text("train.steps = 1\ntrain.steps = 2\n", "d.cfg"); });
    CHECK(msg.find("d.cfg:2") != std::string::npos);
    CHECK(msg.find("set twice") != std::string::npos);

    msg = error_of<config_error>([&] { s.apply_text("train.steps 5\n", "e.cfg"); });
    CHECK(msg.find("e.cfg:1") != std::string::npos);

    msg = error_of<config_error>([&] { s.apply_text("ablate.variants = full,no_layout\n", "f.cfg"); });
    CHECK(msg.find("no_layout") != std::string::npos);

    CHECK_THROWS_AS(s.apply_file("/nonexistent/structlm.cfg"), config_error);
}

TEST_CASE("config: flag overrides file overrides default") {
    RunConfig c;
    const auto default_batch = c.pretrain.batch_size;
    ConfigSchema s(c);
    s.apply_text("train.steps = 100\ntrain.seed = 7\n", "file");
    s.set("train.steps", "250", "--train.steps");
    CHECK(c.pretrain.steps == 250);
    CHECK(c.pretrain.seed == 7);
    CHECK(c.pretrain.batch_size == default_batch);
    CHECK(s.render().find("train.steps = 250\n") != std::string::npos);
}

TEST_CASE("config: precision key must match the build") {
    RunConfig c;
    ConfigSchema s(c);
    const std::string built = sizeof(real) == sizeof(double) ? "double" : "float";
    const std::string other = sizeof(real) == sizeof(double) ? "float" : "double";
    CHECK_NOTHROW(s.set("train.precision", built, "test"));
    CHECK(error_of<config_error>([&] { s.set("train.precision", other, "test"); }).find("STRUCTLM_REAL") !=
          std::string::npos);
}

TEST_CASE("config: validation rejects inconsistent settings") {
    RunConfig c;
    c.eval_docs = c.synth.num_docs;
    CHECK_THROWS_AS(c.validate(), config_error);
    RunConfig d;
    d.pretrain.steps = 0;
    CHECK_THROWS_AS(d.validate(), config_error);
}

TEST_CASE("cell-JSONL: round trip and errors with line numbers") {
    Rng rng(3);
    auto doc = testing::random_document(rng, 5);
    doc.cells[0].word_boxes = {doc.cells[0].box};
    doc.cells[0].text = "single";
    const auto line = document_to_jsonl(doc);
    const auto back = document_from_jsonl(line, "t:1");
    CHECK(document_to_jsonl(back) == line);

    TempDir dir("docs");
    write_file(dir / "docs.jsonl", line + "\n" + R"({"doc_id":"b","page_width":100,"cells":[]})" + "\n");
    const auto msg = error_of<data_error>([&] { read_documents(dir / "docs.jsonl"); });
    CHECK(msg.find("docs.jsonl:2") != std::string::npos);
    CHECK(msg.find("page_height") != std::string::npos);
}

TEST_CASE("task-JSONL: round trip for every task and schema errors") {
    SynthConfig synth;
    Rng rng(11);
    TempDir dir("tasks");
    for (auto data : {gen_form_dataset(synth, rng, 6), gen_qa_dataset(synth, rng, 6), gen_cls_dataset(synth, rng, 6)}) {
        const std::string name(to_string(data.kind));
        write_file(dir / (name + ".jsonl"), task_examples_to_jsonl(data));
        write_file(dir / (name + "_docs.jsonl"), documents_to_jsonl(task_documents(data)));
        const auto back = read_task_dataset(data.kind, dir / (name + ".jsonl"), dir / (name + "_docs.jsonl"));
        CHECK(back.size() == data.size());
        CHECK(back.eval_count() == data.eval_count());
        CHECK(task_examples_to_jsonl(back) == task_examples_to_jsonl(data));
    }
    // A qa line read as tagging names the missing field.
    const auto msg = error_of<data_error>(
        [&] { read_task_dataset(TaskKind::tagging, dir / "qa.jsonl", dir / "qa_docs.jsonl"); });
    CHECK(msg.find("qa.jsonl:1") != std::string::npos);
    CHECK(msg.find("word_labels") != std::string::npos);
}

TEST_CASE("metrics log: CPC fields only when CPC is on") {
    StepRecord on{3, real(1e-4), real(2.5), real(0.7), real(0.5)};
    StepRecord off{4, real(1e-4), real(2.25), std::nullopt, std::nullopt};
    CHECK(metrics_line(off).find("cpc") == std::string::npos);
    CHECK(metrics_line(on).find("cpc_acc") != std::string::npos);
    CHECK(parse_metrics_line(metrics_line(on)) == on);
    CHECK(parse_metrics_line(metrics_line(off)) == off);
}

TEST_CASE("checkpoint: save, load, save is byte-identical") {
    TempDir dir("ckpt");
    for (bool adam : {false, true}) {
        const auto ckpt = tiny_checkpoint(adam);
        save_checkpoint(dir / "a.ckpt", ckpt);
        const auto loaded = load_checkpoint(dir / "a.ckpt");
        save_checkpoint(dir / "b.ckpt", loaded);
        CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
        CHECK(loaded.model == ckpt.model);
        CHECK(loaded.adam.has_value() == adam);
        CHECK(loaded.rng_state == ckpt.rng_state);
        const auto a = ckpt.params.named(), b = loaded.params.named();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
        }
    }
}

TEST_CASE("checkpoint: manifest holds one array per parameter") {
    for (bool cpc : {true, false}) {
        auto ckpt = tiny_checkpoint(false);
        ckpt.model.cpc_head = cpc;
        ckpt.params = Parameters::init(ckpt.model, 1);
        const auto bytes = serialize_checkpoint(ckpt);
        std::uint64_t len = 0;
        std::memcpy(&len, bytes.data() + 12, 8);
        const auto header = nlohmann::json::parse(bytes.substr(20, len));
        CHECK(header.at("arrays").size() == parameter_array_count(ckpt.model));
        bool has_cpc = false;
        for (const auto& a : header.at("arrays")) has_cpc |= a.at("name").get<std::string>().starts_with("cpc");
        CHECK(has_cpc == cpc);
    }
}

TEST_CASE("checkpoint: distinct error kinds") {
    const auto bytes = serialize_checkpoint(tiny_checkpoint(true));

    for (std::size_t keep : {std::size_t{5}, std::size_t{15}, std::size_t{100}, bytes.size() - 1}) {
        CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, keep)), checkpoint_truncated_error);
    }
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), checkpoint_format_error);

    auto bad_version = bytes;
    bad_version[8] = static_cast<char>(kCheckpointVersion + 1);
    CHECK_THROWS_AS(deserialize_checkpoint(bad_version), checkpoint_version_error);

    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), checkpoint_format_error);

    const auto reshaped = edit_header(bytes, [](auto& h) { h["arrays"][0]["shape"][1] = 3; });
    CHECK_THROWS_AS(deserialize_checkpoint(reshaped), checkpoint_shape_error);

    const auto wider = edit_header(bytes, [](auto& h) { h["model"]["hidden_d"] = 32; });
    CHECK_THROWS_AS(deserialize_checkpoint(wider), checkpoint_shape_error);

    const auto short_manifest = edit_header(bytes, [](auto& h) { h["arrays"].erase(h["arrays"].size() - 1); });
    CHECK_THROWS_AS(deserialize_checkpoint(short_manifest), checkpoint_shape_error);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), data_error);
}

TEST_CASE("gen-corpus: deterministic files and counts that match") {
    TempDir a("gen-a"), b("gen-b");
    const auto cfg = small_run();
    std::ostringstream log;
    const auto summary = cmd_gen_corpus(cfg, a.path.string(), log);
    cmd_gen_corpus(cfg, b.path.string(), log);
    std::vector<std::string> files{corpus_files::kCorpus, corpus_files::kVocab, "config.txt"};
    for (auto t : {TaskKind::tagging, TaskKind::qa, TaskKind::classification}) {
        files.push_back(corpus_files::examples(t));
        files.push_back(corpus_files::documents(t));
        CHECK(summary.task_examples.at(t) == line_count(a / corpus_files::examples(t)));
    }
    for (const auto& f : files) CHECK_MESSAGE(read_file(a / f) == read_file(b / f), f);
    CHECK(summary.pretrain_docs == line_count(a / corpus_files::kCorpus));
    CHECK(summary.vocab_size == Vocab::deserialize(read_file(a / corpus_files::kVocab)).size());
    CHECK(log.str().find("pre-training documents: 24") != std::string::npos);
}

TEST_CASE("gen-corpus: zero documents is an error") {
    TempDir dir("gen-zero");
    auto cfg = small_run();
    cfg.synth.num_docs = 0;
    std::ostringstream log;
    CHECK(error_of<config_error>([&] { cmd_gen_corpus(cfg, dir.path.string(), log); }).find("num_docs") !=
          std::string::npos);
}

TEST_CASE("pretrain and finetune: logs, reports, resume checks") {
    TempDir dir("run");
    auto cfg = small_run();
    std::ostringstream log;
    cmd_gen_corpus(cfg, dir.path.string(), log);

    PretrainPaths pp{dir / "corpus.jsonl", dir / "vocab.txt", dir / "p.ckpt", dir / "p.metrics.jsonl", {}, {}};
    const auto first = cmd_pretrain(cfg, pp, log);
    CHECK(first.log.size() == cfg.pretrain.steps);
    CHECK(first.held_out.has_value());
    CHECK(line_count(pp.metrics) == cfg.pretrain.steps);
    CHECK(read_file(pp.metrics).find("cpc_loss") != std::string::npos);

    auto no_cpc = cfg;
    no_cpc.objective.cpc_enabled = false;
    PretrainPaths np{pp.corpus, pp.vocab, dir / "n.ckpt", dir / "n.metrics.jsonl", {}, {}};
    cmd_pretrain(no_cpc, np, log);
    CHECK(read_file(np.metrics).find("cpc") == std::string::npos);
    const auto n = load_checkpoint(np.checkpoint);
    CHECK_FALSE(n.model.cpc_head);
    CHECK_FALSE(n.params.cpc_w.defined());

    auto wider = cfg;
    wider.model.hidden_d = 32;
    PretrainPaths rp = pp;
    rp.checkpoint = dir / "r.ckpt";
    rp.resume = pp.checkpoint;
    CHECK(error_of<config_error>([&] { cmd_pretrain(wider, rp, log); }).find("model config differs") !=
          std::string::npos);

    FinetunePaths fp{dir / "tagging.jsonl", dir / "tagging_docs.jsonl", dir / "vocab.txt", pp.checkpoint,
                     dir / "t.ckpt", dir / "t.report.txt"};
    const auto pre = cmd_finetune(cfg, TaskKind::tagging, fp, log);
    for (const auto* key : {"precision = ", "recall = ", "f1 = ", "seed = ", "# resolved config", "train.steps = "}) {
        CHECK_MESSAGE(pre.report_text.find(key) != std::string::npos, key);
    }
    const auto f1_line = pre.report_text.substr(pre.report_text.find("f1 = "));
    CHECK(f1_line.find('\n') == 11);  // "f1 = 0.xxxx"

    fp.init.reset();
    fp.report = dir / "t0.report.txt";
    const auto scratch = cmd_finetune(cfg, TaskKind::tagging, fp, log);
    CHECK(scratch.report_text.find("init = none") != std::string::npos);
    CHECK(scratch.report_text != pre.report_text);

    FinetunePaths wrong = fp;
    wrong.dataset = dir / "classification.jsonl";
    wrong.docs = dir / "classification_docs.jsonl";
    CHECK(error_of<data_error>([&] { cmd_finetune(cfg, TaskKind::qa, wrong, log); }).find("question") !=
          std::string::npos);
}

TEST_CASE("ablate: one row per variant and full-length loss series") {
    TempDir dir("ablate");
    auto cfg = small_run();
    cfg.ablate_train_docs = 3;
    cfg.ablate_seeds = 2;
    cfg.ablate_finetune_steps = 2;
    std::ostringstream log;
    cmd_gen_corpus(cfg, dir.path.string(), log);
    const auto out = cmd_ablate(cfg, dir.path.string(), dir / "out", log);
    CHECK(log.str().find("fine-tuning on 3 tagging documents, 2 held out, 2 steps, 2 seed(s)") != std::string::npos);
    REQUIRE(out.rows.size() == cfg.variants.size());
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        CHECK(out.rows[i].variant == cfg.variants[i]);
        CHECK(out.rows[i].ok);
        REQUIRE(out.rows[i].seed_f1.size() == 2);
        CHECK(out.rows[i].metrics.at("f1") == doctest::Approx((out.rows[i].seed_f1[0] + out.rows[i].seed_f1[1]) / 2));
    }
    CHECK(out.ordering_flags.size() == 3);
    const auto series = read_file(dir / "out/loss_series.tsv");
    CHECK(series.starts_with("step\tcell_level\tword_level\n"));
    CHECK(line_count(dir / "out/loss_series.tsv") == cfg.pretrain.steps + 1);
    CHECK(read_file(dir / "out/ablation.txt").find("no_pretrain") != std::string::npos);
}

TEST_CASE("ablate: a failing variant is marked and the rest still run") {
    TempDir dir("ablate-fail");
    auto cfg = small_run();
    cfg.variants = {Variant::full, Variant::no_pretrain};
    std::ostringstream log;
    cmd_gen_corpus(cfg, dir.path.string(), log);
    fs::remove(dir / "corpus.jsonl");
    const auto out = cmd_ablate(cfg, dir.path.string(), dir / "out", log);
    REQUIRE(out.rows.size() == 2);
    CHECK_FALSE(out.rows[0].ok);
    CHECK(out.rows[1].ok);
    CHECK(out.table.find("FAILED") != std::string::npos);
}

TEST_CASE("task names: unknown name lists the valid ones") {
    const auto msg = error_of<config_error>([] { parse_task_kind("ner"); });
    for (const auto* name : {"tagging", "qa", "classification"}) CHECK(msg.find(name) != std::string::npos);
}

TEST_CASE("grad-check: passes on a fresh init, fails with a corrupted GELU backward") {
    RunConfig cfg;
    cfg.model = grad_check_model();
    cfg.model.init_std = cfg.gradcheck_init_std;
    const auto report = run_grad_check(cfg.model, 17);
    CHECK(report.passed());
    std::set<std::string> names;
    for (const auto& g : report.groups) {
        CHECK(names.insert(g.name).second);
        CHECK(g.checked > 0);
    }
    auto p = Parameters::init([&] {
        auto m = cfg.model;
        m.vocab_size = 300;
        return m;
    }(), 1);
    CHECK(names.size() == p.named().size());

    set_gelu_backward_scale(real{1.5});
    const auto faulty = run_grad_check(cfg.model, 17);
    set_gelu_backward_scale(real{1});
    CHECK_FALSE(faulty.passed());

    auto big = cfg.model;
    big.hidden_d = 64;
    CHECK_THROWS_AS(run_grad_check(big, 1), config_error);
}
