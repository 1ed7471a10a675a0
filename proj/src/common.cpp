#include "mlcc/random.hpp"
#include "mlcc/types.hpp"

#include <sstream>

namespace mlcc {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kInsufficientClasses: return "insufficient-classes";
    case ErrorCode::kInsufficientSamples: return "insufficient-samples-per-class";
    case ErrorCode::kMissingPath: return "missing-path";
    case ErrorCode::kOverlappingSplits: return "overlapping-split-classes";
    case ErrorCode::kDecodeFailure: return "undecodable-image";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kUnknownEpisode: return "unknown-episode";
    case ErrorCode::kConfigMismatch: return "config-mismatch";
    case ErrorCode::kIo: return "io-error";
  }
  return "error";
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stream) {
  return splitmix64(splitmix64(root_seed) ^ fnv1a(stream));
}

Rng make_rng(std::uint64_t root_seed, std::string_view stream) {
  return Rng(derive_seed(root_seed, stream));
}

std::string save_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng load_rng(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw Error(ErrorCode::kIo, "corrupt generator state");
  return rng;
}

}  // namespace mlcc
