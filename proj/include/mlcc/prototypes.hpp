#pragma once

#include "mlcc/types.hpp"

#include <span>
#include <string>

namespace mlcc {

/// Row n is the mean of the support embeddings labelled n. Exactly `k_shot`
/// rows per label are required.
template <typename Derived>
MatrixX<typename Derived::Scalar> class_prototypes(const Eigen::MatrixBase<Derived>& support,
                                                   std::span<const int> labels, int n_way, int k_shot) {
  using Scalar = typename Derived::Scalar;
  require(n_way >= 1 && k_shot >= 1, ErrorCode::kInvalidArgument, "n_way and k_shot must be positive");
  require(support.rows() == static_cast<Index>(labels.size()), ErrorCode::kShapeMismatch,
          "support rows and labels differ in length");
  MatrixX<Scalar> protos = MatrixX<Scalar>::Zero(n_way, support.cols());
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_way);
  for (Index i = 0; i < support.rows(); ++i) {
    const int y = labels[i];
    require(y >= 0 && y < n_way, ErrorCode::kInvalidArgument, "support label out of range");
    protos.row(y) += support.row(i);
    ++counts(y);
  }
  for (int n = 0; n < n_way; ++n) {
    require(counts(n) == k_shot, ErrorCode::kShapeMismatch,
            "class " + std::to_string(n) + " has " + std::to_string(counts(n)) + " supports, expected " +
                std::to_string(k_shot));
  }
  return protos / static_cast<Scalar>(k_shot);
}

/// Pulls a prototype gradient back onto the support rows.
template <typename Derived>
MatrixX<typename Derived::Scalar> class_prototypes_backward(const Eigen::MatrixBase<Derived>& grad_protos,
                                                            std::span<const int> labels, int k_shot) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> grad(static_cast<Index>(labels.size()), grad_protos.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    grad.row(static_cast<Index>(i)) = grad_protos.row(labels[i]) / static_cast<Scalar>(k_shot);
  }
  return grad;
}

/// Mixup prototypes: alpha * P1 + (1 - alpha) * P2, rowwise.
template <typename D1, typename D2>
MatrixX<typename D1::Scalar> hybrid_prototypes(const Eigen::MatrixBase<D1>& p1, const Eigen::MatrixBase<D2>& p2,
                                               typename D1::Scalar alpha) {
  require(alpha >= 0 && alpha <= 1, ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  require(p1.rows() == p2.rows() && p1.cols() == p2.cols(), ErrorCode::kShapeMismatch,
          "per-view prototype shapes differ");
  return alpha * p1 + (1 - alpha) * p2;
}

}  // namespace mlcc
