#include "mlcc/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fs = std::filesystem;

namespace mlcc::io {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const fs::path& path) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  require(is.good(), ErrorCode::kIo, "truncated file " + path.string());
  return value;
}

}  // namespace

void write_blob(const fs::path& path, const std::string& kind, const Json& header,
                const std::vector<const Matrix*>& arrays) {
  Json h = header;
  h["num_arrays"] = arrays.size();
  const std::string text = h.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.good(), ErrorCode::kIo, "cannot write " + path.string());
  os << kind << " v" << kFormatVersion << '\n';
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Matrix* m : arrays) {
    put<std::int64_t>(os, m->rows());
    put<std::int64_t>(os, m->cols());
    os.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(Real)));
  }
  require(os.good(), ErrorCode::kIo, "failed writing " + path.string());
}

Blob read_blob(const fs::path& path, const std::string& kind) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorCode::kMissingPath, "cannot open " + path.string());
  std::string magic;
  std::getline(is, magic);
  const std::string expected = kind + " v" + std::to_string(kFormatVersion);
  require(magic == expected, ErrorCode::kIo,
          path.string() + ": expected header '" + expected + "', found '" + magic + "'");
  const auto len = get<std::uint64_t>(is, path);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  require(is.good(), ErrorCode::kIo, "truncated header in " + path.string());

  Blob blob;
  try {
    blob.header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIo, path.string() + ": bad header: " + e.what());
  }
  const auto count = blob.header.at("num_arrays").get<std::size_t>();
  blob.arrays.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto rows = get<std::int64_t>(is, path);
    const auto cols = get<std::int64_t>(is, path);
    require(rows >= 0 && cols >= 0, ErrorCode::kIo, "negative array shape in " + path.string());
    Matrix m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Real)));
    require(is.good() || (m.size() == 0), ErrorCode::kIo, "truncated array in " + path.string());
    blob.arrays.push_back(std::move(m));
  }
  return blob;
}

Json to_json(const EncoderConfig& cfg) {
  return Json{{"arch", to_string(cfg.arch)},
              {"embed_dim", cfg.embed_dim},
              {"width", cfg.width},
              {"input_shape", cfg.input_shape},
              {"init_seed", cfg.init_seed}};
}

EncoderConfig encoder_config_from_json(const Json& j) {
  EncoderConfig cfg;
  cfg.arch = parse_arch(j.at("arch").get<std::string>());
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.width = j.at("width").get<int>();
  cfg.input_shape = j.at("input_shape").get<std::vector<int>>();
  cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  return cfg;
}

Json save_split(const DatasetSplit& split, const fs::path& dir) {
  const std::string file = std::string(to_string(split.role)) + ".split";
  Matrix labels(static_cast<Index>(split.labels.size()), 1);
  for (std::size_t i = 0; i < split.labels.size(); ++i) labels(static_cast<Index>(i), 0) = split.labels[i];
  Json header{{"role", to_string(split.role)},
              {"num_classes", split.num_classes},
              {"input_shape", split.input_shape},
              {"class_names", split.class_names}};
  write_blob(dir / file, "MLCC-SPLIT", header, {&split.samples, &labels});
  return Json{{"file", file},
              {"num_classes", split.num_classes},
              {"num_items", split.size()},
              {"input_shape", split.input_shape}};
}

DatasetSplit load_split(const fs::path& file) {
  Blob blob = read_blob(file, "MLCC-SPLIT");
  require(blob.arrays.size() == 2, ErrorCode::kIo, file.string() + ": expected samples and labels");
  DatasetSplit split;
  split.role = parse_split_role(blob.header.at("role").get<std::string>());
  split.num_classes = blob.header.at("num_classes").get<int>();
  split.input_shape = blob.header.at("input_shape").get<std::vector<int>>();
  split.class_names = blob.header.at("class_names").get<std::vector<std::string>>();
  split.samples = std::move(blob.arrays[0]);
  for (Index i = 0; i < blob.arrays[1].rows(); ++i) split.labels.push_back(static_cast<int>(blob.arrays[1](i, 0)));
  validate_split(split);
  return split;
}

SplitSet load_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  require(fs::exists(manifest), ErrorCode::kMissingPath, "no manifest.json in " + dir.string());
  std::ifstream in(manifest);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIo, manifest.string() + ": " + e.what());
  }
  SplitSet set;
  set.base = load_split(dir / j.at("splits").at("base").at("file").get<std::string>());
  set.val = load_split(dir / j.at("splits").at("val").at("file").get<std::string>());
  set.novel = load_split(dir / j.at("splits").at("novel").at("file").get<std::string>());
  validate_splits(set);
  return set;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  require(os.good(), ErrorCode::kIo, "cannot write " + path.string());
  os << text;
  require(os.good(), ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace mlcc::io
