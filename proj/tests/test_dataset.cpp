#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "snell/dataset.hpp"

using namespace snell;
namespace fs = std::filesystem;

namespace {

fs::path fixture(const char* name) { return fs::path(SNELL_TEST_DATA_DIR) / name; }

fs::path scratch_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "snell_test_dataset";
  fs::create_directories(dir);
  return dir / name;
}

// Nearest class mean, with means estimated from the data itself.
double nearest_centroid_accuracy(const Dataset& data) {
  Matrix centroids = Matrix::Zero(data.class_count, data.dim());
  Vector counts = Vector::Zero(data.class_count);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    centroids.row(data.labels[i]) += data.features.row(i);
    counts(data.labels[i]) += 1;
  }
  for (int c = 0; c < data.class_count; ++c) centroids.row(c) /= counts(c);
  int correct = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - data.features.row(i)).rowwise().squaredNorm().minCoeff(&best);
    correct += best == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("three-row fixture loads") {
  const Dataset data = load_csv_dataset(fixture("three_rows.csv"));
  CHECK(data.size() == 3);
  CHECK(data.dim() == 2);
  CHECK(data.class_count == 2);
  CHECK(data.features(0, 1) == -1.25);
  CHECK(data.features(1, 1) == 3e-2);
  CHECK(data.features(2, 0) == -7.5);
  CHECK(data.labels == std::vector<int>{0, 1, 1});
}

TEST_CASE("non-numeric cell names row and column") {
  try {
    load_csv_dataset(fixture("bad_cell.csv"));
    FAIL("expected a parse error");
  } catch (const CsvParseError& e) {
    CHECK(e.row == 3);
    CHECK(e.column == 2);
    CHECK(std::string(e.what()).find("abc") != std::string::npos);
  }
}

TEST_CASE("loader errors are distinct") {
  CHECK_THROWS_AS(load_csv_dataset(fixture("ragged.csv")), RaggedRowError);
  CHECK_THROWS_AS(load_csv_dataset(fixture("does_not_exist.csv")), MissingFileError);
  try {
    load_csv_dataset(fixture("ragged.csv"));
  } catch (const RaggedRowError& e) {
    CHECK(e.row == 3);
  }
}

TEST_CASE("csv round trip is bit exact") {
  const Dataset data = make_blobs(3, 200, 5, 3, 2.5);
  const fs::path path = scratch_file("roundtrip.csv");
  write_csv_dataset(data, path);
  const Dataset back = load_csv_dataset(path);
  REQUIRE(back.size() == data.size());
  REQUIRE(back.dim() == data.dim());
  CHECK(std::memcmp(back.features.data(), data.features.data(),
                    static_cast<std::size_t>(data.features.size()) * sizeof(double)) == 0);
  CHECK(back.labels == data.labels);
  CHECK(back.class_count == data.class_count);
}

TEST_CASE("blobs are deterministic and balanced") {
  const Dataset a = make_blobs(9, 301, 4, 3, 4.0);
  const Dataset b = make_blobs(9, 301, 4, 3, 4.0);
  const Dataset c = make_blobs(10, 301, 4, 3, 4.0);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK(a.features != c.features);
  std::vector<int> counts(3, 0);
  for (int label : a.labels) counts[label]++;
  CHECK(counts == std::vector<int>{101, 100, 100});
  CHECK_THROWS_AS(make_blobs(0, 10, 2, 1, 1.0), DomainError);
}

TEST_CASE("well separated blobs are nearly perfectly classified by centroids") {
  CHECK(nearest_centroid_accuracy(make_blobs(1, 1000, 2, 2, 6.0)) >= 0.99);
}

TEST_CASE("zero separation gives identical class distributions") {
  // Same per-row noise stream, so changing only the separation moves nothing.
  const Dataset d = make_blobs(4, 4000, 3, 2, 0.0);
  Vector mean0 = Vector::Zero(3), mean1 = Vector::Zero(3);
  for (Eigen::Index i = 0; i < d.size(); ++i) (d.labels[i] == 0 ? mean0 : mean1) += d.features.row(i).transpose();
  mean0 /= 2000.0;
  mean1 /= 2000.0;
  CHECK((mean0 - mean1).cwiseAbs().maxCoeff() < 0.15);
  CHECK(nearest_centroid_accuracy(d) < 0.6);
}

TEST_CASE("blob centers sit separation apart") {
  // With unit noise averaged out, class means approach the stated centers.
  const Dataset d = make_blobs(5, 20000, 2, 2, 6.0);
  Vector mean0 = Vector::Zero(2), mean1 = Vector::Zero(2);
  for (Eigen::Index i = 0; i < d.size(); ++i) (d.labels[i] == 0 ? mean0 : mean1) += d.features.row(i).transpose();
  mean0 /= 10000.0;
  mean1 /= 10000.0;
  CHECK((mean0 - mean1).norm() == doctest::Approx(6.0).epsilon(0.03));
}

TEST_CASE("take_rows preserves order") {
  const Dataset d = make_blobs(6, 10, 2, 2, 1.0);
  const std::vector<Eigen::Index> idx{7, 2, 2};
  const Dataset sub = take_rows(d, idx);
  CHECK(sub.size() == 3);
  CHECK(sub.features.row(0) == d.features.row(7));
  CHECK(sub.labels[1] == d.labels[2]);
}
