#pragma once

#include "mlcc/encoder.hpp"
#include "mlcc/episodes.hpp"
#include "mlcc/types.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mlcc::io {

using Json = nlohmann::json;

/// Self-describing binary container used by checkpoints and split files:
///   "<kind> v<version>\n" | u64 header length | header JSON | arrays
/// where each array is i64 rows, i64 cols, then rows*cols float64 in
/// column-major order. All integers and floats are little-endian.
struct Blob {
  Json header;
  std::vector<Matrix> arrays;
};

inline constexpr int kFormatVersion = 1;

void write_blob(const std::filesystem::path& path, const std::string& kind, const Json& header,
                const std::vector<const Matrix*>& arrays);
Blob read_blob(const std::filesystem::path& path, const std::string& kind);

Json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const Json& j);

/// Writes a split as "<dir>/<role>.split" and returns its manifest record.
Json save_split(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit load_split(const std::filesystem::path& file);

/// Reads "<dir>/manifest.json" and the three split files it lists.
SplitSet load_dataset(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mlcc::io
