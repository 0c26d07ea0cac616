#pragma once

#include "flowinv/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace flowinv {

// Binary blob layout (checkpoints, cache dumps):
//   u64 little-endian  header byte length n
//   n bytes            UTF-8 JSON header
//   rest               little-endian f64 values
struct BinaryBlob {
  nlohmann::json header;
  std::vector<double> values;
};

void write_binary(const std::filesystem::path& path, const BinaryBlob& blob);
BinaryBlob read_binary(const std::filesystem::path& path);

// Shortest round-trip-safe text for a double.
std::string format_double(double v);

// RFC-4180 CSV with '\n' line endings. Fields are quoted only when needed.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  void add_row(std::vector<std::string> fields);
  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Matrix rows as CSV with columns prefix0..prefix{d-1}.
CsvWriter matrix_csv(const MatrixXd& m, const std::string& prefix = "x");

// Reads the numeric columns prefix0..prefix{d-1} of a CSV written by
// matrix_csv or gen-data. Other columns are ignored; fields must be unquoted.
MatrixXd read_matrix_csv(const std::filesystem::path& path, const std::string& prefix = "x");

// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Key-order independent hash of a JSON value: FNV-1a 64 over the
// sorted-key compact dump, as 16 hex digits.
std::string json_hash(const nlohmann::json& value);

}  // namespace flowinv
