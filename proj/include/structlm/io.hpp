#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "structlm/doc.hpp"
#include "structlm/pretrain.hpp"
#include "structlm/tasks.hpp"

namespace structlm {

// Unreadable or malformed input files. Messages start with "path:line:".
class data_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// cell-JSONL: {doc_id, page_width, page_height, cells: [{text, box, word_boxes?}]}
// with pixel coordinates.
std::string document_to_jsonl(const RawDocument& doc);
RawDocument document_from_jsonl(std::string_view line, std::string_view where);
std::string documents_to_jsonl(const std::vector<RawDocument>& docs);
std::vector<RawDocument> read_documents(const std::string& path);

// task-JSONL, one example per line, with a "split" field of "train" or
// "eval". Documents live in a separate cell-JSONL file keyed by doc_id.
//   tagging:        {doc_id, split, word_labels: ["B-question", ...]}
//   qa:             {doc_id, split, question, answers, span: [first, last] | null}
//   classification: {doc_id, split, label}
// `span` is the file-order word range of the gold answer.
std::string task_examples_to_jsonl(const TaskDataset& dataset);
std::vector<RawDocument> task_documents(const TaskDataset& dataset);
TaskDataset read_task_dataset(TaskKind kind, const std::string& examples_path, const std::string& docs_path);

// {step, lr, mvlm_loss, cpc_loss, cpc_acc}; the CPC fields are omitted when
// CPC is off.
std::string metrics_line(const StepRecord& rec);
StepRecord parse_metrics_line(std::string_view line);

}  // namespace structlm
