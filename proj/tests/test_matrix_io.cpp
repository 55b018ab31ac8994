#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "doctest.h"
#include "snell/matrix_io.hpp"

using namespace snell;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "snell_test_matrix_io";
  fs::create_directories(dir);
  return dir;
}

std::vector<unsigned char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matrix file layout byte by byte") {
  Matrix m(2, 3);
  m << 1.0, 2.0, 3.0, -0.5, 0.0, 1e300;
  const fs::path path = scratch_dir() / "layout.bin";
  write_matrix(m, path);
  const auto bytes = slurp(path);
  REQUIRE(bytes.size() == 24 + 6 * 8);
  CHECK(std::memcmp(bytes.data(), "SNLM", 4) == 0);
  const std::vector<unsigned char> header{1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0};
  CHECK(std::equal(header.begin(), header.end(), bytes.begin() + 4));
  // 1.0 = 0x3FF0000000000000, little-endian
  const std::vector<unsigned char> one{0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  CHECK(std::equal(one.begin(), one.end(), bytes.begin() + 24));
  // -0.5 is the fourth entry in row-major order
  const std::vector<unsigned char> minus_half{0, 0, 0, 0, 0, 0, 0xE0, 0xBF};
  CHECK(std::equal(minus_half.begin(), minus_half.end(), bytes.begin() + 24 + 3 * 8));
  CHECK(bitwise_equal(read_matrix(path), m));
}

TEST_CASE("matrix round trip is bitwise") {
  RngStream rng(1);
  for (auto [r, c] : {std::pair{1, 1}, std::pair{7, 3}, std::pair{0, 4}}) {
    const Matrix m = randn(rng, r, c);
    const fs::path path = scratch_dir() / "roundtrip.bin";
    write_matrix(m, path);
    CHECK(bitwise_equal(read_matrix(path), m));
  }
}

TEST_CASE("corrupt matrix files are rejected") {
  const fs::path dir = scratch_dir();
  CHECK_THROWS_AS(read_matrix(dir / "missing.bin"), IoError);
  {
    std::ofstream out(dir / "magic.bin", std::ios::binary);
    out << "NOPE and some more bytes to fill a header.";
  }
  CHECK_THROWS_AS(read_matrix(dir / "magic.bin"), IoError);
  write_matrix(Matrix::Ones(4, 4), dir / "short.bin");
  fs::resize_file(dir / "short.bin", 24 + 8 * 15);
  CHECK_THROWS_AS(read_matrix(dir / "short.bin"), IoError);
}

TEST_CASE("sidecar round trip") {
  ExportSidecar meta;
  meta.rows = 16;
  meta.cols = 8;
  Vector alphas(2);
  alphas << 0.25, -1.5;
  meta.kernel = KernelSpec::piecewise_linear(alphas);
  meta.sparsity = 0.9;
  meta.soft_threshold = SoftThreshold::Standard;
  meta.seed = 0xFFFFFFFFFFFFFFFFull;
  meta.layer = 1;
  const fs::path path = scratch_dir() / "meta.json";
  write_sidecar(meta, path);
  const ExportSidecar back = read_sidecar(path);
  CHECK(back.rows == 16);
  CHECK(back.cols == 8);
  CHECK(back.kernel.variant == KernelVariant::PiecewiseLinear);
  CHECK(back.kernel.params == alphas);
  CHECK(back.sparsity == 0.9);
  CHECK(back.soft_threshold == SoftThreshold::Standard);
  CHECK(back.seed == meta.seed);
  CHECK(back.layer == 1);
}

TEST_CASE("checkpoint round trip restores the model exactly") {
  ModelShape shape;
  shape.input_dim = 5;
  shape.hidden_dim = 4;
  shape.classes = 3;
  shape.rank = 2;
  shape.kernel = KernelSpec::zero_init(KernelVariant::Rbf);
  shape.sparsity = 0.5;
  shape.threshold_grad = ThresholdGrad::Exact;
  TinyModel model = TinyModel::create(shape, 21);
  model.head_b()(1) = 0.125;
  const fs::path dir = scratch_dir() / "ckpt";
  fs::remove_all(dir);
  save_checkpoint(model, 21, dir);
  const LoadedCheckpoint loaded = load_checkpoint(dir);
  CHECK(loaded.seed == 21);
  REQUIRE(loaded.model.layers().size() == model.layers().size());
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& x = model.layers()[l];
    const auto& y = loaded.model.layers()[l];
    CHECK(bitwise_equal(x.w0(), y.w0()));
    CHECK(bitwise_equal(x.a(), y.a()));
    CHECK(bitwise_equal(x.b(), y.b()));
    CHECK(x.kernel().params == y.kernel().params);
    CHECK(x.kernel().variant == y.kernel().variant);
    CHECK(x.sparsity() == y.sparsity());
    CHECK(x.threshold_grad() == y.threshold_grad());
  }
  CHECK(bitwise_equal(model.head_w(), loaded.model.head_w()));
  CHECK(model.head_b() == loaded.model.head_b());
  CHECK(frozen_weights_hash(model) == frozen_weights_hash(loaded.model));
  CHECK_THROWS_AS(load_checkpoint(scratch_dir() / "nowhere"), IoError);
}

TEST_CASE("enum names round trip") {
  for (auto f : {SoftThreshold::Product, SoftThreshold::Standard}) CHECK(parse_soft_threshold(soft_threshold_name(f)) == f);
  for (auto g : {ThresholdGrad::Constant, ThresholdGrad::Exact}) CHECK(parse_threshold_grad(threshold_grad_name(g)) == g);
  CHECK_THROWS(parse_soft_threshold("hard"));
}
