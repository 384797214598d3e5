#include "structlm/io.hpp"

#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>

namespace structlm {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(std::string_view where, const std::string& what) {
    throw data_error(std::string(where) + ": " + what);
}

const json& field(const json& obj, const char* name, std::string_view where) {
    if (!obj.is_object()) fail(where, "expected a JSON object");
    auto it = obj.find(name);
    if (it == obj.end()) fail(where, std::string("missing field '") + name + "'");
    return *it;
}

double number(const json& v, const char* name, std::string_view where) {
    if (!v.is_number()) fail(where, std::string("field '") + name + "' must be a number");
    return v.get<double>();
}

std::string text(const json& v, const char* name, std::string_view where) {
    if (!v.is_string()) fail(where, std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

json box_json(const PixelBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

PixelBox box_from(const json& v, const char* name, std::string_view where) {
    if (!v.is_array() || v.size() != 4) fail(where, std::string("field '") + name + "' must be [x0, y0, x1, y1]");
    return {number(v[0], name, where), number(v[1], name, where), number(v[2], name, where), number(v[3], name, where)};
}

json parse_line(std::string_view line, std::string_view where) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        fail(where, std::string("invalid JSON: ") + e.what());
    }
}

template <class F>
void for_each_line(const std::string& path, F f) {
    const auto content = read_file(path);
    std::string_view rest = content;
    std::size_t line_no = 0;
    while (!rest.empty()) {
        ++line_no;
        const auto nl = rest.find('\n');
        const auto line = rest.substr(0, nl);
        rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        f(line, path + ":" + std::to_string(line_no));
    }
}

bool split_flag(const json& obj, std::string_view where) {
    const auto s = text(field(obj, "split", where), "split", where);
    if (s == "train") return false;
    if (s == "eval") return true;
    fail(where, "field 'split' must be \"train\" or \"eval\"");
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error(path + ": cannot open file");
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error(path + ": cannot write file");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw data_error(path + ": write failed");
}

std::string document_to_jsonl(const RawDocument& doc) {
    json cells = json::array();
    for (const auto& c : doc.cells) {
        json cell{{"text", c.text}, {"box", box_json(c.box)}};
        if (!c.word_boxes.empty()) {
            json wb = json::array();
            for (const auto& b : c.word_boxes) wb.push_back(box_json(b));
            cell["word_boxes"] = wb;
        }
        cells.push_back(cell);
    }
    json j{{"doc_id", doc.doc_id}, {"page_width", doc.page_width}, {"page_height", doc.page_height}, {"cells", cells}};
    return j.dump();
}

RawDocument document_from_jsonl(std::string_view line, std::string_view where) {
    const auto j = parse_line(line, where);
    RawDocument doc;
    doc.doc_id = text(field(j, "doc_id", where), "doc_id", where);
    doc.page_width = number(field(j, "page_width", where), "page_width", where);
    doc.page_height = number(field(j, "page_height", where), "page_height", where);
    const auto& cells = field(j, "cells", where);
    if (!cells.is_array()) fail(where, "field 'cells' must be an array");
    for (const auto& c : cells) {
        RawCell cell;
        cell.text = text(field(c, "text", where), "text", where);
        cell.box = box_from(field(c, "box", where), "box", where);
        if (auto it = c.find("word_boxes"); it != c.end()) {
            if (!it->is_array()) fail(where, "field 'word_boxes' must be an array");
            for (const auto& b : *it) cell.word_boxes.push_back(box_from(b, "word_boxes", where));
        }
        doc.cells.push_back(std::move(cell));
    }
    try {
        validate_document(doc);
    } catch (const ingest_error& e) {
        fail(where, e.what());
    }
    return doc;
}

std::string documents_to_jsonl(const std::vector<RawDocument>& docs) {
    std::string out;
    for (const auto& d : docs) out += document_to_jsonl(d) + "\n";
    return out;
}

std::vector<RawDocument> read_documents(const std::string& path) {
    std::vector<RawDocument> out;
    for_each_line(path, [&](std::string_view line, const std::string& where) {
        out.push_back(document_from_jsonl(line, where));
    });
    return out;
}

std::vector<RawDocument> task_documents(const TaskDataset& dataset) {
    std::vector<RawDocument> out;
    for (const auto& e : dataset.tagging) out.push_back(e.doc);
    for (const auto& e : dataset.qa) out.push_back(e.doc);
    for (const auto& e : dataset.classification) out.push_back(e.doc);
    return out;
}

std::string task_examples_to_jsonl(const TaskDataset& dataset) {
    std::string out;
    auto split = [](bool eval) { return eval ? "eval" : "train"; };
    for (const auto& e : dataset.tagging) {
        json labels = json::array();
        for (auto t : e.word_labels) labels.push_back(tag_name(t));
        out += json{{"doc_id", e.doc.doc_id}, {"split", split(e.eval)}, {"word_labels", labels}}.dump() + "\n";
    }
    for (const auto& e : dataset.qa) {
        json span = e.answer_words ? json::array({e.answer_words->first, e.answer_words->second}) : json(nullptr);
        out += json{{"doc_id", e.doc.doc_id}, {"split", split(e.eval)}, {"question", e.question}, {"answers", e.answers},
                    {"span", span}}
                   .dump() +
               "\n";
    }
    for (const auto& e : dataset.classification) {
        out += json{{"doc_id", e.doc.doc_id}, {"split", split(e.eval)}, {"label", e.label}}.dump() + "\n";
    }
    return out;
}

TaskDataset read_task_dataset(TaskKind kind, const std::string& examples_path, const std::string& docs_path) {
    std::map<std::string, RawDocument> docs;
    for (auto& d : read_documents(docs_path)) {
        const auto id = d.doc_id;
        if (!docs.emplace(id, std::move(d)).second) throw data_error(docs_path + ": duplicate doc_id '" + id + "'");
    }
    TaskDataset out;
    out.kind = kind;
    const std::string task = std::string(to_string(kind));
    for_each_line(examples_path, [&](std::string_view line, const std::string& where) {
        const auto j = parse_line(line, where);
        auto req = [&](const char* name) -> const json& {
            if (!j.is_object() || !j.contains(name)) {
                fail(where, std::string("missing field '") + name + "' required by task " + task);
            }
            return j.at(name);
        };
        const auto id = text(req("doc_id"), "doc_id", where);
        auto it = docs.find(id);
        if (it == docs.end()) fail(where, "doc_id '" + id + "' not found in " + docs_path);
        req("split");
        const bool eval = split_flag(j, where);
        const auto& doc = it->second;
        switch (kind) {
        case TaskKind::tagging: {
            const auto& labels = req("word_labels");
            if (!labels.is_array()) fail(where, "field 'word_labels' must be an array");
            TaggingExample e{doc, {}, eval};
            for (const auto& l : labels) {
                try {
                    e.word_labels.push_back(parse_tag(text(l, "word_labels", where)));
                } catch (const std::invalid_argument& err) {
                    fail(where, err.what());
                }
            }
            if (e.word_labels.size() != document_words(doc).size()) {
                fail(where, "word_labels has " + std::to_string(e.word_labels.size()) + " entries but the document has " +
                                std::to_string(document_words(doc).size()) + " words");
            }
            out.tagging.push_back(std::move(e));
            break;
        }
        case TaskKind::qa: {
            QaExample e{doc, text(req("question"), "question", where), {}, std::nullopt, eval};
            const auto& answers = req("answers");
            if (!answers.is_array() || answers.empty()) fail(where, "field 'answers' must be a non-empty array");
            for (const auto& a : answers) e.answers.push_back(text(a, "answers", where));
            const auto& span = req("span");
            if (!span.is_null()) {
                if (!span.is_array() || span.size() != 2 || !span[0].is_number_unsigned() || !span[1].is_number_unsigned()) {
                    fail(where, "field 'span' must be [first, last] or null");
                }
                const auto a = span[0].get<std::size_t>(), b = span[1].get<std::size_t>();
                if (a > b || b >= document_words(doc).size()) fail(where, "field 'span' is outside the document");
                e.answer_words = {a, b};
            }
            out.qa.push_back(std::move(e));
            break;
        }
        case TaskKind::classification: {
            const auto& label = req("label");
            if (!label.is_number_integer()) fail(where, "field 'label' must be an integer");
            out.classification.push_back({doc, label.get<std::int64_t>(), eval});
            break;
        }
        }
    });
    if (out.size() == 0) throw data_error(examples_path + ": no examples");
    return out;
}

std::string metrics_line(const StepRecord& rec) {
    json j{{"step", rec.step}, {"lr", static_cast<double>(rec.lr)}, {"mvlm_loss", static_cast<double>(rec.mvlm_loss)}};
    if (rec.cpc_loss) j["cpc_loss"] = static_cast<double>(*rec.cpc_loss);
    if (rec.cpc_acc) j["cpc_acc"] = static_cast<double>(*rec.cpc_acc);
    return j.dump();
}

StepRecord parse_metrics_line(std::string_view line) {
    const auto j = parse_line(line, "metrics");
    StepRecord rec;
    rec.step = field(j, "step", "metrics").get<std::size_t>();
    rec.lr = static_cast<real>(number(field(j, "lr", "metrics"), "lr", "metrics"));
    rec.mvlm_loss = static_cast<real>(number(field(j, "mvlm_loss", "metrics"), "mvlm_loss", "metrics"));
    if (j.contains("cpc_loss")) rec.cpc_loss = static_cast<real>(j["cpc_loss"].get<double>());
    if (j.contains("cpc_acc")) rec.cpc_acc = static_cast<real>(j["cpc_acc"].get<double>());
    return rec;
}

}  // namespace structlm
