#include "flowinv/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace flowinv {

namespace {

static_assert(std::endian::native == std::endian::little, "binary IO assumes a little-endian host");

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("binary file truncated in length prefix");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_binary(const std::filesystem::path& path, const BinaryBlob& blob) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  const std::string header = blob.header.dump();
  put_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(blob.values.data()),
           static_cast<std::streamsize>(blob.values.size() * sizeof(double)));
  if (!os) throw Error("write failed for " + path.string());
}

BinaryBlob read_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  const std::uint64_t n = get_u64(is);
  const auto total = std::filesystem::file_size(path);
  if (n > total - 8) throw Error("binary header length exceeds file size in " + path.string());
  std::string header(n, '\0');
  is.read(header.data(), static_cast<std::streamsize>(n));
  const std::uint64_t rest = total - 8 - n;
  if (rest % sizeof(double) != 0) throw Error("payload of " + path.string() + " is not a whole number of f64");
  BinaryBlob blob;
  blob.header = nlohmann::json::parse(header);
  blob.values.resize(rest / sizeof(double));
  is.read(reinterpret_cast<char*>(blob.values.data()), static_cast<std::streamsize>(rest));
  if (!is) throw Error("read failed for " + path.string());
  return blob;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {
  if (header_.empty()) throw InvalidArgument("CsvWriter: empty header");
}

void CsvWriter::add_row(std::vector<std::string> fields) {
  if (fields.size() != header_.size())
    throw InvalidArgument("CsvWriter: row has " + std::to_string(fields.size()) + " fields, header has " +
                          std::to_string(header_.size()));
  rows_.push_back(std::move(fields));
}

std::string CsvWriter::str() const {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << csv_field(f[i]);
    os << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return os.str();
}

void CsvWriter::save(const std::filesystem::path& path) const { write_text(path, str()); }

CsvWriter matrix_csv(const MatrixXd& m, const std::string& prefix) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < m.cols(); ++j) header.push_back(prefix + std::to_string(j));
  CsvWriter csv(header);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(format_double(m(i, j)));
    csv.add_row(std::move(row));
  }
  return csv;
}

MatrixXd read_matrix_csv(const std::filesystem::path& path, const std::string& prefix) {
  std::istringstream is(read_text(path));
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  };
  std::string line;
  if (!std::getline(is, line)) throw Error(path.string() + ": empty CSV");
  const auto header = split(line);
  std::vector<std::size_t> cols;
  for (std::size_t d = 0;; ++d) {
    const auto it = std::find(header.begin(), header.end(), prefix + std::to_string(d));
    if (it == header.end()) break;
    cols.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  if (cols.empty()) throw Error(path.string() + ": no " + prefix + "0 column");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size())
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                  " fields");
    std::vector<double> row;
    for (std::size_t c : cols) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(fields[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != fields[c].size())
        throw Error(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + fields[c] + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(path.string() + ": no data rows");
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string json_hash(const nlohmann::json& value) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  const std::string s = value.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace flowinv
