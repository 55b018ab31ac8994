#include "snell/dataset.hpp"
#include "snell/format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace snell {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

RaggedRowError::RaggedRowError(std::size_t row, std::size_t expected, std::size_t got)
    : DatasetError("csv row " + std::to_string(row) + " has " + std::to_string(got) + " cells, expected " +
                   std::to_string(expected)),
      row(row) {}

CsvParseError::CsvParseError(std::size_t row, std::size_t column, const std::string& cell)
    : DatasetError("csv row " + std::to_string(row) + ", column " + std::to_string(column) + ": cannot parse '" + cell +
                   "'"),
      row(row),
      column(column) {}

void Dataset::validate() const {
  if (features.rows() < 1) throw DatasetError("dataset is empty");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows())
    throw DatasetError("dataset label count differs from row count");
  for (int label : labels)
    if (label < 0 || label >= class_count) throw DatasetError("dataset label outside [0, class_count)");
}

Dataset make_blobs(std::uint64_t seed, Eigen::Index n, Eigen::Index d, int classes, double separation) {
  if (classes < 2) throw DomainError("make_blobs: need at least two classes");
  if (n < 1 || d < 1) throw DomainError("make_blobs: n and d must be positive");
  if (!(separation >= 0.0)) throw DomainError("make_blobs: separation must be non-negative");

  Matrix centers = Matrix::Zero(classes, d);
  for (int c = 0; c < classes; ++c) {
    const double ring = 1.0 + static_cast<double>(c / d);
    centers(c, c % d) = separation / std::sqrt(2.0) * ring;
  }

  RngStream rng(seed);
  Dataset data{randn(rng, n, d, 1.0), std::vector<int>(static_cast<std::size_t>(n)), classes};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    data.labels[static_cast<std::size_t>(i)] = label;
    data.features.row(i) += centers.row(label);
  }
  return data;
}

Dataset load_csv_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open dataset file " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DatasetError("dataset file " + path.string() + " has no header");
  const std::size_t width = split_csv_line(line).size();
  if (width < 2) throw DatasetError("dataset header needs at least one feature and a label column");

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != width) throw RaggedRowError(row, width, cells.size());
    for (std::size_t c = 0; c + 1 < width; ++c) {
      const std::string_view cell = trim(cells[c]);
      double v = 0.0;
      auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || end != cell.data() + cell.size() || cell.empty() || !std::isfinite(v))
        throw CsvParseError(row, c + 1, cells[c]);
      values.push_back(v);
    }
    const std::string_view label_cell = trim(cells[width - 1]);
    int label = 0;
    auto [end, ec] = std::from_chars(label_cell.data(), label_cell.data() + label_cell.size(), label);
    if (ec != std::errc() || end != label_cell.data() + label_cell.size() || label_cell.empty() || label < 0)
      throw CsvParseError(row, width, cells[width - 1]);
    labels.push_back(label);
  }
  if (labels.empty()) throw DatasetError("dataset file " + path.string() + " has no data rows");

  const auto n = static_cast<Eigen::Index>(labels.size());
  const auto d = static_cast<Eigen::Index>(width - 1);
  Dataset data{Eigen::Map<const Matrix>(values.data(), n, d), std::move(labels), 0};
  data.class_count = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  return data;
}

void write_csv_dataset(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write dataset file " + path.string());
  for (Eigen::Index c = 0; c < data.dim(); ++c) out << 'x' << c << ',';
  out << "label\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index c = 0; c < data.dim(); ++c) out << format_double(data.features(i, c)) << ',';
    out << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

Dataset take_rows(const Dataset& data, std::span<const Eigen::Index> indices) {
  Dataset out{Matrix(static_cast<Eigen::Index>(indices.size()), data.dim()), {}, data.class_count};
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.features.row(static_cast<Eigen::Index>(k)) = data.features.row(indices[k]);
    out.labels.push_back(data.labels[static_cast<std::size_t>(indices[k])]);
  }
  return out;
}

}  // namespace snell
