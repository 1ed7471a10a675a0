#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mlcc {

using Real = double;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<Real>;
using Vector = VectorX<Real>;

using Index = Eigen::Index;
using EpisodeId = std::uint64_t;

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kInsufficientClasses,
  kInsufficientSamples,
  kMissingPath,
  kOverlappingSplits,
  kDecodeFailure,
  kDivergence,
  kUnknownEpisode,
  kConfigMismatch,
  kIo,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace mlcc
