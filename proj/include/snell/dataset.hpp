#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "snell/numkit.hpp"

namespace snell {

struct Dataset {
  Matrix features;          // N x d
  std::vector<int> labels;  // length N, each in [0, class_count)
  int class_count = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  void validate() const;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class RaggedRowError : public DatasetError {
 public:
  RaggedRowError(std::size_t row, std::size_t expected, std::size_t got);
  std::size_t row;
};

/// A cell that is not a number (or a label that is not a non-negative
/// integer). Row and column are 1-based, counting the header as row 1.
class CsvParseError : public DatasetError {
 public:
  CsvParseError(std::size_t row, std::size_t column, const std::string& cell);
  std::size_t row;
  std::size_t column;
};

/// Gaussian blobs with unit variance. Class c is centered at
/// (separation / sqrt 2) * (1 + c / d) * e_{c mod d}, so the first d centers
/// are pairwise `separation` apart. Labels cycle 0, 1, ..., classes-1.
Dataset make_blobs(std::uint64_t seed, Eigen::Index n, Eigen::Index d, int classes, double separation);

/// Reads a CSV with a header row whose final column is the integer label.
Dataset load_csv_dataset(const std::filesystem::path& path);

/// Writes features with shortest round-trip formatting, so reloading is
/// bit-exact.
void write_csv_dataset(const Dataset& data, const std::filesystem::path& path);

/// Rows `indices` of `data`, in that order.
Dataset take_rows(const Dataset& data, std::span<const Eigen::Index> indices);

}  // namespace snell
