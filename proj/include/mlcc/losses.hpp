#pragma once

#include "mlcc/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mlcc {

/// Which denominator the inter-class loss uses. `kAsPrinted` sums over every
/// j != i in both views (the positive pair is absent); `kInfoNce` adds the
/// positive pair back in.
enum class InterDenominator { kAsPrinted, kInfoNce };

/// How the forget loss normalizes prediction rows before the dot product.
enum class ForgetNorm { kRow, kGlobal };

struct LossConfig {
  Real kappa = 0.1;  // inter-class temperature
  Real tau = 0.1;    // intra-class temperature
  Real lambda1 = 2.0;
  Real lambda2 = 1.0;
  Real delta = 0.1;
  Real cos_floor = 1e-6;
  InterDenominator inter_denominator = InterDenominator::kAsPrinted;
  ForgetNorm forget_norm = ForgetNorm::kRow;
  /// Use the hybrid prototypes for the classification loss instead of each
  /// view's own prototypes.
  bool ce_on_hybrid = false;

  void validate() const;
};

namespace detail {

template <typename Scalar>
Scalar log_sum_exp(std::span<const Scalar> xs) {
  const Scalar m = *std::max_element(xs.begin(), xs.end());
  Scalar s = 0;
  for (Scalar x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

/// Row-normalizes `x`, returning the norms; zero rows are an error.
template <typename Scalar>
MatrixX<Scalar> normalize_rows(const MatrixX<Scalar>& x, VectorX<Scalar>& norms, const char* what) {
  norms = x.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    require(norms(i) > 0, ErrorCode::kInvalidArgument, std::string("zero vector in ") + what);
  }
  return norms.cwiseInverse().asDiagonal() * x;
}

/// Gradient through u = x / |x| applied row by row.
template <typename Scalar>
MatrixX<Scalar> normalize_rows_backward(const MatrixX<Scalar>& grad_u, const MatrixX<Scalar>& u,
                                        const VectorX<Scalar>& norms) {
  const VectorX<Scalar> radial = (grad_u.cwiseProduct(u)).rowwise().sum();
  return norms.cwiseInverse().asDiagonal() * (grad_u - radial.asDiagonal() * u);
}

/// Lower bound on prediction-matrix entries. A softmax probability can
/// underflow to 0; the bound keeps every row nonzero while its square and
/// reciprocal stay finite.
template <typename Scalar>
Scalar probability_floor() {
  return std::sqrt(std::numeric_limits<Scalar>::min());
}

template <typename Scalar>
Scalar clamp_unit(Scalar c) {
  return std::clamp(c, Scalar(-1), Scalar(1));
}

/// Squared euclidean distances, M x N, computed from explicit differences.
template <typename Scalar>
MatrixX<Scalar> squared_distances(const MatrixX<Scalar>& x, const MatrixX<Scalar>& protos) {
  MatrixX<Scalar> d(x.rows(), protos.rows());
  for (Index n = 0; n < protos.rows(); ++n) {
    d.col(n) = (x.rowwise() - protos.row(n)).rowwise().squaredNorm();
  }
  return d;
}

template <typename Scalar>
MatrixX<Scalar> softmax_rows(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  const VectorX<Scalar> z = p.rowwise().sum();
  return z.cwiseInverse().asDiagonal() * p;
}

/// Backprop of logits z(i, n) = -|x_i - p_n|^2 given dL/dz.
template <typename Scalar>
void squared_distance_logits_backward(const MatrixX<Scalar>& grad_z, const MatrixX<Scalar>& x,
                                      const MatrixX<Scalar>& protos, MatrixX<Scalar>* grad_x,
                                      MatrixX<Scalar>* grad_protos) {
  if (grad_x) {
    *grad_x = Scalar(-2) * (grad_z.rowwise().sum().asDiagonal() * x - grad_z * protos);
  }
  if (grad_protos) {
    const VectorX<Scalar> col_sums = grad_z.colwise().sum().transpose();
    *grad_protos = Scalar(2) * (grad_z.transpose() * x - col_sums.asDiagonal() * protos);
  }
}

inline void check_labels(std::span<const int> labels, Index rows, Index n_classes) {
  require(rows == static_cast<Index>(labels.size()), ErrorCode::kShapeMismatch,
          "embedding rows and labels differ in length");
  for (int y : labels) {
    require(y >= 0 && y < n_classes, ErrorCode::kInvalidArgument,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(n_classes) + ")");
  }
}

}  // namespace detail

/// dot(a, b) / (|a| |b|), clamped to [-1, 1].
template <typename D1, typename D2>
typename D1::Scalar cosine_sim(const Eigen::MatrixBase<D1>& a, const Eigen::MatrixBase<D2>& b) {
  using Scalar = typename D1::Scalar;
  require(a.size() == b.size(), ErrorCode::kShapeMismatch, "cosine of vectors with different lengths");
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  require(na > 0 && nb > 0, ErrorCode::kInvalidArgument, "cosine of a zero vector");
  return detail::clamp_unit(a.cwiseProduct(b).sum() / (na * nb));
}

/// Inter-class contrastive loss over the two views' prototypes:
///   -sum_i log( exp(cos(P1_i, P2_i)/kappa) / sum_v sum_{j != i} exp(cos(P1_i, Pv_j)/kappa) )
/// With `kAsPrinted` the positive pair is not in the denominator, so the value
/// may be negative.
template <typename Scalar>
Scalar inter_class_loss(const MatrixX<Scalar>& p1, const MatrixX<Scalar>& p2, Scalar kappa,
                        InterDenominator denom = InterDenominator::kAsPrinted, MatrixX<Scalar>* grad_p1 = nullptr,
                        MatrixX<Scalar>* grad_p2 = nullptr) {
  const Index n = p1.rows();
  require(n >= 2, ErrorCode::kInvalidArgument, "inter-class loss needs at least 2 classes");
  require(kappa > 0, ErrorCode::kInvalidArgument, "kappa must be positive");
  require(p2.rows() == n && p2.cols() == p1.cols(), ErrorCode::kShapeMismatch, "prototype shapes differ");

  VectorX<Scalar> n1, n2;
  const MatrixX<Scalar> u1 = detail::normalize_rows(p1, n1, "view-1 prototypes");
  const MatrixX<Scalar> u2 = detail::normalize_rows(p2, n2, "view-2 prototypes");
  const MatrixX<Scalar> c11 = (u1 * u1.transpose()).unaryExpr(&detail::clamp_unit<Scalar>);
  const MatrixX<Scalar> c12 = (u1 * u2.transpose()).unaryExpr(&detail::clamp_unit<Scalar>);

  const bool want_grad = grad_p1 || grad_p2;
  MatrixX<Scalar> g11, g12;
  if (want_grad) {
    g11 = MatrixX<Scalar>::Zero(n, n);
    g12 = MatrixX<Scalar>::Zero(n, n);
  }

  Scalar loss = 0;
  std::vector<Scalar> logits;
  logits.reserve(2 * n);
  for (Index i = 0; i < n; ++i) {
    logits.clear();
    for (Index j = 0; j < n; ++j) {
      if (j != i) logits.push_back(c11(i, j) / kappa);
    }
    for (Index j = 0; j < n; ++j) {
      if (j != i || denom == InterDenominator::kInfoNce) logits.push_back(c12(i, j) / kappa);
    }
    const Scalar lse = detail::log_sum_exp<Scalar>(logits);
    loss += lse - c12(i, i) / kappa;

    if (want_grad) {
      g12(i, i) -= 1 / kappa;
      std::size_t k = 0;
      for (Index j = 0; j < n; ++j) {
        if (j != i) g11(i, j) += std::exp(logits[k++] - lse) / kappa;
      }
      for (Index j = 0; j < n; ++j) {
        if (j != i || denom == InterDenominator::kInfoNce) g12(i, j) += std::exp(logits[k++] - lse) / kappa;
      }
    }
  }

  if (want_grad) {
    const MatrixX<Scalar> gu1 = g12 * u2 + (g11 + g11.transpose()) * u1;
    const MatrixX<Scalar> gu2 = g12.transpose() * u1;
    if (grad_p1) *grad_p1 = detail::normalize_rows_backward(gu1, u1, n1);
    if (grad_p2) *grad_p2 = detail::normalize_rows_backward(gu2, u2, n2);
  }
  return loss;
}

/// Intra-class loss: mean over queries of -log softmax_y(cos(x, P~_n) / tau).
template <typename Scalar>
Scalar intra_class_loss(const MatrixX<Scalar>& queries, std::span<const int> labels,
                        const MatrixX<Scalar>& hybrid, Scalar tau, MatrixX<Scalar>* grad_queries = nullptr,
                        MatrixX<Scalar>* grad_hybrid = nullptr) {
  require(tau > 0, ErrorCode::kInvalidArgument, "tau must be positive");
  require(queries.cols() == hybrid.cols(), ErrorCode::kShapeMismatch, "embedding widths differ");
  detail::check_labels(labels, queries.rows(), hybrid.rows());
  const Index m = queries.rows();
  if (m == 0) {
    if (grad_queries) *grad_queries = MatrixX<Scalar>::Zero(0, queries.cols());
    if (grad_hybrid) *grad_hybrid = MatrixX<Scalar>::Zero(hybrid.rows(), hybrid.cols());
    return 0;
  }

  VectorX<Scalar> nq, nh;
  const MatrixX<Scalar> uq = detail::normalize_rows(queries, nq, "query embeddings");
  const MatrixX<Scalar> uh = detail::normalize_rows(hybrid, nh, "hybrid prototypes");
  const MatrixX<Scalar> logits = (uq * uh.transpose()).unaryExpr(&detail::clamp_unit<Scalar>) / tau;
  const MatrixX<Scalar> probs = detail::softmax_rows(logits);

  Scalar loss = 0;
  for (Index i = 0; i < m; ++i) {
    const auto row = logits.row(i);
    const Scalar mx = row.maxCoeff();
    loss += mx + std::log((row.array() - mx).exp().sum()) - row(labels[i]);
  }
  loss /= static_cast<Scalar>(m);

  if (grad_queries || grad_hybrid) {
    MatrixX<Scalar> g = probs;
    for (Index i = 0; i < m; ++i) g(i, labels[i]) -= 1;
    g /= tau * static_cast<Scalar>(m);
    if (grad_queries) *grad_queries = detail::normalize_rows_backward<Scalar>(g * uh, uq, nq);
    if (grad_hybrid) *grad_hybrid = detail::normalize_rows_backward<Scalar>(g.transpose() * uq, uh, nh);
  }
  return loss;
}

namespace detail {

/// Position of each query inside its class group (order of appearance), and
/// the common per-class count.
inline std::vector<Index> class_slots(std::span<const int> labels, Index n_classes, Index& per_class) {
  std::vector<Index> counts(static_cast<std::size_t>(n_classes), 0);
  std::vector<Index> slots(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) slots[i] = counts[labels[i]]++;
  per_class = n_classes > 0 ? counts[0] : 0;
  for (Index c : counts) {
    require(c == per_class, ErrorCode::kShapeMismatch, "ragged query counts across classes");
  }
  return slots;
}

}  // namespace detail

/// Entry (n, q) is the euclidean-softmax probability the q-th query of class n
/// assigns to its own class n.
template <typename Scalar>
MatrixX<Scalar> prediction_matrix(const MatrixX<Scalar>& queries, std::span<const int> labels,
                                  const MatrixX<Scalar>& protos) {
  require(queries.cols() == protos.cols(), ErrorCode::kShapeMismatch, "embedding widths differ");
  detail::check_labels(labels, queries.rows(), protos.rows());
  Index per_class = 0;
  const auto slots = detail::class_slots(labels, protos.rows(), per_class);
  const MatrixX<Scalar> probs = detail::softmax_rows<Scalar>(-detail::squared_distances(queries, protos));
  const Scalar floor = detail::probability_floor<Scalar>();
  MatrixX<Scalar> a(protos.rows(), per_class);
  for (std::size_t i = 0; i < labels.size(); ++i)
    a(labels[i], slots[i]) = std::max(probs(static_cast<Index>(i), labels[i]), floor);
  return a;
}

template <typename Scalar>
void prediction_matrix_backward(const MatrixX<Scalar>& queries, std::span<const int> labels,
                                const MatrixX<Scalar>& protos, const MatrixX<Scalar>& grad_a,
                                MatrixX<Scalar>* grad_queries, MatrixX<Scalar>* grad_protos) {
  Index per_class = 0;
  const auto slots = detail::class_slots(labels, protos.rows(), per_class);
  const MatrixX<Scalar> probs = detail::softmax_rows<Scalar>(-detail::squared_distances(queries, protos));
  const Scalar floor = detail::probability_floor<Scalar>();
  MatrixX<Scalar> gz(probs.rows(), probs.cols());
  for (Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    const Scalar g = probs(i, y) > floor ? grad_a(y, slots[i]) * probs(i, y) : Scalar(0);
    gz.row(i) = -g * probs.row(i);
    gz(i, y) += g;
  }
  detail::squared_distance_logits_backward(gz, queries, protos, grad_queries, grad_protos);
}

/// Against-forgetting loss between the current prediction matrix A and the
/// historical one H (both N x Q):
///   (1/N) sum_n [ -log(clamp(cos(A_n, H_n), floor, 1)) - p_n log p_n ] + delta
/// with p_n = sum(A_n) / sum(A). `kGlobal` replaces the row cosine by
/// dot(A_n, H_n) / (|A|_F |H|_F). H is treated as a constant.
template <typename Scalar>
Scalar forget_loss(const MatrixX<Scalar>& a, const MatrixX<Scalar>& h, Scalar delta, Scalar cos_floor,
                   ForgetNorm norm = ForgetNorm::kRow, MatrixX<Scalar>* grad_a = nullptr) {
  require(a.rows() == h.rows() && a.cols() == h.cols(), ErrorCode::kShapeMismatch,
          "current and historical prediction matrices differ in shape");
  require(cos_floor > 0 && cos_floor < 1, ErrorCode::kInvalidArgument, "cos_floor must lie in (0, 1)");
  require(delta >= 0, ErrorCode::kInvalidArgument, "delta must be non-negative");
  const Index n = a.rows();
  require(n >= 1 && a.cols() >= 1, ErrorCode::kInvalidArgument, "empty prediction matrix");

  // stableNorm and unit vectors keep rows of tiny probabilities usable.
  VectorX<Scalar> a_norms(n), h_norms(n);
  for (Index i = 0; i < n; ++i) {
    a_norms(i) = a.row(i).stableNorm();
    h_norms(i) = h.row(i).stableNorm();
    require(a_norms(i) > 0 && h_norms(i) > 0, ErrorCode::kInvalidArgument,
            "all-zero row " + std::to_string(i) + " in prediction matrix");
  }
  const Scalar a_frob = a.stableNorm();
  const Scalar h_frob = h.stableNorm();
  const MatrixX<Scalar> ua = norm == ForgetNorm::kRow ? MatrixX<Scalar>(a_norms.cwiseInverse().asDiagonal() * a)
                                                       : MatrixX<Scalar>(a / a_frob);
  const MatrixX<Scalar> uh = norm == ForgetNorm::kRow ? MatrixX<Scalar>(h_norms.cwiseInverse().asDiagonal() * h)
                                                       : MatrixX<Scalar>(h / h_frob);

  VectorX<Scalar> sim(n);
  for (Index i = 0; i < n; ++i) sim(i) = ua.row(i).dot(uh.row(i));
  const VectorX<Scalar> mass = a.rowwise().sum();
  const Scalar total = mass.sum();
  require(total > 0, ErrorCode::kInvalidArgument, "prediction matrix has no mass");

  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar c = std::clamp(sim(i), cos_floor, Scalar(1));
    const Scalar p = mass(i) / total;
    loss += -std::log(c) - (p > 0 ? p * std::log(p) : Scalar(0));
  }
  loss = loss / static_cast<Scalar>(n) + delta;

  if (grad_a) {
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    MatrixX<Scalar> g = MatrixX<Scalar>::Zero(n, a.cols());

    // Alignment term; no gradient where the floor is active.
    VectorX<Scalar> coef(n);
    for (Index i = 0; i < n; ++i) coef(i) = sim(i) > cos_floor ? -inv_n / std::min(sim(i), Scalar(1)) : Scalar(0);
    if (norm == ForgetNorm::kRow) {
      for (Index i = 0; i < n; ++i) {
        if (coef(i) == 0) continue;
        g.row(i) += coef(i) / a_norms(i) * (uh.row(i) - sim(i) * ua.row(i));
      }
    } else {
      g += (coef.asDiagonal() * uh - coef.cwiseProduct(sim).sum() * ua) / a_frob;
    }

    // Entropy term: d/dA(n,q) = (1 / (N S)) (-log p_n + sum_m p_m log p_m).
    const Scalar tiny = std::numeric_limits<Scalar>::min();
    Scalar plogp = 0;
    VectorX<Scalar> logp(n);
    for (Index i = 0; i < n; ++i) {
      const Scalar p = mass(i) / total;
      logp(i) = std::log(std::max(p, tiny));
      if (p > 0) plogp += p * logp(i);
    }
    for (Index i = 0; i < n; ++i) g.row(i).array() += inv_n / total * (plogp - logp(i));
    *grad_a = std::move(g);
  }
  return loss;
}

/// Mean cross-entropy of the softmax over negative squared euclidean distances.
template <typename Scalar>
Scalar episode_ce_loss(const MatrixX<Scalar>& queries, std::span<const int> labels, const MatrixX<Scalar>& protos,
                       MatrixX<Scalar>* grad_queries = nullptr, MatrixX<Scalar>* grad_protos = nullptr) {
  require(queries.cols() == protos.cols(), ErrorCode::kShapeMismatch, "embedding widths differ");
  detail::check_labels(labels, queries.rows(), protos.rows());
  const Index m = queries.rows();
  if (m == 0) {
    if (grad_queries) *grad_queries = MatrixX<Scalar>::Zero(0, queries.cols());
    if (grad_protos) *grad_protos = MatrixX<Scalar>::Zero(protos.rows(), protos.cols());
    return 0;
  }
  const MatrixX<Scalar> logits = -detail::squared_distances(queries, protos);
  Scalar loss = 0;
  for (Index i = 0; i < m; ++i) {
    const auto row = logits.row(i);
    const Scalar mx = row.maxCoeff();
    loss += mx + std::log((row.array() - mx).exp().sum()) - row(labels[i]);
  }
  loss /= static_cast<Scalar>(m);

  if (grad_queries || grad_protos) {
    MatrixX<Scalar> gz = detail::softmax_rows(logits);
    for (Index i = 0; i < m; ++i) gz(i, labels[i]) -= 1;
    gz /= static_cast<Scalar>(m);
    detail::squared_distance_logits_backward(gz, queries, protos, grad_queries, grad_protos);
  }
  return loss;
}

/// Nearest prototype by euclidean distance; ties go to the lowest class index.
template <typename Scalar>
std::vector<int> nearest_prototype(const MatrixX<Scalar>& queries, const MatrixX<Scalar>& protos) {
  require(queries.cols() == protos.cols(), ErrorCode::kShapeMismatch, "embedding widths differ");
  const MatrixX<Scalar> d = detail::squared_distances(queries, protos);
  std::vector<int> out(static_cast<std::size_t>(queries.rows()));
  for (Index i = 0; i < d.rows(); ++i) {
    Index best = 0;
    for (Index n = 1; n < d.cols(); ++n) {
      if (d(i, n) < d(i, best)) best = n;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// Weighted sum ce + lambda1 * inter + lambda2 * intra + forget.
Real total_loss(Real ce, Real inter, Real intra, Real forget, const LossConfig& cfg);

}  // namespace mlcc
