#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "snell/numkit.hpp"
#include "snell/tiny_model.hpp"

namespace snell {

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary matrix file, all integers little-endian:
///
///   offset  size  field
///   0       4     magic "SNLM"
///   4       4     uint32 format version (1)
///   8       8     uint64 rows
///   16      8     uint64 cols
///   24      8*N   IEEE-754 binary64 entries, row-major, N = rows * cols
void write_matrix(const Matrix& m, const std::filesystem::path& path);
Matrix read_matrix(const std::filesystem::path& path);

/// Metadata written next to an exported dense weight as `<name>.json`.
struct ExportSidecar {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  KernelSpec kernel;
  double sparsity = 0.0;
  SoftThreshold soft_threshold = SoftThreshold::Product;
  std::uint64_t seed = 0;
  int layer = 0;
};
void write_sidecar(const ExportSidecar& meta, const std::filesystem::path& path);
ExportSidecar read_sidecar(const std::filesystem::path& path);

/// Checkpoint directory layout:
///   checkpoint.json                 shapes, kernels, sparsity, seed
///   layer<k>_w0.bin layer<k>_a.bin layer<k>_b.bin
///   head_w.bin head_b.bin
void save_checkpoint(const TinyModel& model, std::uint64_t seed, const std::filesystem::path& dir);

struct LoadedCheckpoint {
  TinyModel model;
  std::uint64_t seed;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

std::string soft_threshold_name(SoftThreshold form);
SoftThreshold parse_soft_threshold(const std::string& name);
std::string threshold_grad_name(ThresholdGrad g);
ThresholdGrad parse_threshold_grad(const std::string& name);

}  // namespace snell
