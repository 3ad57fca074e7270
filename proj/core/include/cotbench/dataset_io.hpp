#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/model.hpp"

namespace cotbench {

// Malformed dataset file: names the 1-based line or the duplicate id.
class DatasetError : public DataError {
 public:
  using DataError::DataError;
};

// Reads a JSONL file, calling fn(line_number, parsed) for each non-blank line.
// Parse errors are reported as DatasetError naming the line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const Json&)>& fn);

// Writes the file through a temporary sibling and renames it into place, so a
// crash never leaves a half-written output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::string dataset_to_jsonl(const Dataset& dataset);

// Maps the layout of the publicly released benchmark files onto the canonical
// schema. Accepts a JSON array or JSONL; fields it does not recognise land in
// EvaluationSample::extra. See README for the accepted field aliases.
Dataset import_released(const std::filesystem::path& path);
EvaluationSample import_released_record(const Json& record, std::size_t ordinal);

}  // namespace cotbench
