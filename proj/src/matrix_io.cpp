#include "snell/matrix_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace snell {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'N', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "matrix files are written in native little-endian order");

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw IoError("truncated matrix file " + path.string());
  return value;
}

nlohmann::json kernel_to_json(const KernelSpec& k) {
  nlohmann::json params = nlohmann::json::array();
  for (Eigen::Index i = 0; i < k.params.size(); ++i) params.push_back(k.params(i));
  return {{"variant", std::string(to_string(k.variant))}, {"segments", k.segments}, {"params", params}};
}

KernelSpec kernel_from_json(const nlohmann::json& j) {
  const auto variant = parse_kernel_variant(j.at("variant").get<std::string>());
  if (!variant) throw IoError("unknown kernel variant in metadata");
  const auto params = j.at("params").get<std::vector<double>>();
  KernelSpec k{*variant, j.at("segments").get<int>(), Eigen::Map<const Vector>(params.data(), params.size())};
  return k;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed json in " + path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string layer_file(int layer, const char* what) { return "layer" + std::to_string(layer) + "_" + what + ".bin"; }

}  // namespace

std::string soft_threshold_name(SoftThreshold form) {
  return form == SoftThreshold::Product ? "product" : "standard";
}

SoftThreshold parse_soft_threshold(const std::string& name) {
  if (name == "product") return SoftThreshold::Product;
  if (name == "standard") return SoftThreshold::Standard;
  throw DomainError("soft_threshold must be 'product' or 'standard', got '" + name + "'");
}

std::string threshold_grad_name(ThresholdGrad g) { return g == ThresholdGrad::Constant ? "constant" : "exact"; }

ThresholdGrad parse_threshold_grad(const std::string& name) {
  if (name == "constant") return ThresholdGrad::Constant;
  if (name == "exact") return ThresholdGrad::Exact;
  throw DomainError("threshold_grad must be 'constant' or 'exact', got '" + name + "'");
}

void write_matrix(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw IoError("failed writing " + path.string());
}

Matrix read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw IoError(path.string() + " is not a matrix file");
  if (get<std::uint32_t>(in, path) != kVersion) throw IoError(path.string() + " has an unsupported format version");
  const auto rows = get<std::uint64_t>(in, path);
  const auto cols = get<std::uint64_t>(in, path);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
    throw IoError("truncated matrix file " + path.string());
  return m;
}

void write_sidecar(const ExportSidecar& meta, const std::filesystem::path& path) {
  write_json({{"format", "SNLM"},
              {"version", kVersion},
              {"dtype", "float64"},
              {"byte_order", "little"},
              {"layout", "row-major"},
              {"rows", meta.rows},
              {"cols", meta.cols},
              {"layer", meta.layer},
              {"kernel", kernel_to_json(meta.kernel)},
              {"sparsity", meta.sparsity},
              {"soft_threshold", soft_threshold_name(meta.soft_threshold)},
              {"seed", meta.seed}},
             path);
}

ExportSidecar read_sidecar(const std::filesystem::path& path) {
  const auto j = read_json(path);
  try {
    return {j.at("rows").get<Eigen::Index>(),
            j.at("cols").get<Eigen::Index>(),
            kernel_from_json(j.at("kernel")),
            j.at("sparsity").get<double>(),
            parse_soft_threshold(j.at("soft_threshold").get<std::string>()),
            j.at("seed").get<std::uint64_t>(),
            j.at("layer").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad sidecar " + path.string() + ": " + e.what());
  }
}

void save_checkpoint(const TinyModel& model, std::uint64_t seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& layer = model.layers()[l];
    const int k = static_cast<int>(l);
    write_matrix(layer.w0(), dir / layer_file(k, "w0"));
    write_matrix(layer.a(), dir / layer_file(k, "a"));
    write_matrix(layer.b(), dir / layer_file(k, "b"));
    layers.push_back({{"out_dim", layer.out_dim()},
                      {"in_dim", layer.in_dim()},
                      {"rank", layer.rank()},
                      {"kernel", kernel_to_json(layer.kernel())},
                      {"sparsity", layer.sparsity()},
                      {"soft_threshold", soft_threshold_name(layer.soft_threshold())},
                      {"threshold_grad", threshold_grad_name(layer.threshold_grad())},
                      {"mode", layer.mode() == MemoryMode::Store ? "store" : "recompute"}});
  }
  write_matrix(model.head_w(), dir / "head_w.bin");
  write_matrix(Matrix(model.head_b().transpose()), dir / "head_b.bin");
  write_json({{"seed", seed}, {"layers", layers}, {"classes", model.class_count()}}, dir / "checkpoint.json");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = dir / "checkpoint.json";
  if (!std::filesystem::exists(manifest)) throw IoError("no checkpoint found at " + dir.string());
  const auto j = read_json(manifest);
  try {
    std::vector<KernelizedAdapter> layers;
    int k = 0;
    for (const auto& entry : j.at("layers")) {
      const auto mode = entry.at("mode").get<std::string>() == "store" ? MemoryMode::Store : MemoryMode::Recompute;
      layers.emplace_back(read_matrix(dir / layer_file(k, "w0")), read_matrix(dir / layer_file(k, "b")),
                          read_matrix(dir / layer_file(k, "a")), kernel_from_json(entry.at("kernel")),
                          entry.at("sparsity").get<double>(),
                          mode, parse_soft_threshold(entry.at("soft_threshold").get<std::string>()));
      layers.back().set_threshold_grad(parse_threshold_grad(entry.value("threshold_grad", std::string("constant"))));
      ++k;
    }
    Matrix head_b = read_matrix(dir / "head_b.bin");
    return {TinyModel(std::move(layers), read_matrix(dir / "head_w.bin"), Vector(head_b.transpose())),
            j.at("seed").get<std::uint64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest " + manifest.string() + ": " + e.what());
  }
}

}  // namespace snell
