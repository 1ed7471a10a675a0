#pragma once

// Scalar-loop reference implementations used only by the tests. They read
// matrix entries one at a time and share no code with the library.

#include "mlcc/types.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace mlcc::oracle {

inline double dot(const Matrix& a, Index i, const Matrix& b, Index j) {
  double s = 0;
  for (Index c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
  return s;
}

inline double cos_rows(const Matrix& a, Index i, const Matrix& b, Index j) {
  const double c = dot(a, i, b, j) / (std::sqrt(dot(a, i, a, i)) * std::sqrt(dot(b, j, b, j)));
  return c > 1 ? 1 : (c < -1 ? -1 : c);
}

inline double sqdist(const Matrix& a, Index i, const Matrix& b, Index j) {
  double s = 0;
  for (Index c = 0; c < a.cols(); ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
  return s;
}

inline Matrix class_means(const Matrix& x, const std::vector<int>& labels, int n) {
  Matrix out(n, x.cols());
  for (int cls = 0; cls < n; ++cls) {
    for (Index c = 0; c < x.cols(); ++c) {
      double s = 0;
      int count = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == cls) {
          s += x(static_cast<Index>(i), c);
          ++count;
        }
      }
      out(cls, c) = s / count;
    }
  }
  return out;
}

inline double inter(const Matrix& p1, const Matrix& p2, double kappa, bool include_positive = false) {
  double loss = 0;
  const Index n = p1.rows();
  for (Index i = 0; i < n; ++i) {
    const double num = std::exp(cos_rows(p1, i, p2, i) / kappa);
    double den = 0;
    for (int v = 0; v < 2; ++v) {
      const Matrix& pv = v == 0 ? p1 : p2;
      for (Index j = 0; j < n; ++j) {
        if (j == i && !(include_positive && v == 1)) continue;
        den += std::exp(cos_rows(p1, i, pv, j) / kappa);
      }
    }
    loss += -std::log(num / den);
  }
  return loss;
}

inline double intra(const Matrix& q, const std::vector<int>& labels, const Matrix& hybrid, double tau) {
  double loss = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double den = 0;
    for (Index n = 0; n < hybrid.rows(); ++n) den += std::exp(cos_rows(q, static_cast<Index>(i), hybrid, n) / tau);
    loss += -std::log(std::exp(cos_rows(q, static_cast<Index>(i), hybrid, labels[i]) / tau) / den);
  }
  return loss / static_cast<double>(labels.size());
}

inline Matrix prediction(const Matrix& q, const std::vector<int>& labels, const Matrix& protos, int per_class) {
  Matrix a(protos.rows(), per_class);
  std::vector<int> slot(static_cast<std::size_t>(protos.rows()), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double den = 0;
    for (Index n = 0; n < protos.rows(); ++n) den += std::exp(-sqdist(q, static_cast<Index>(i), protos, n));
    a(labels[i], slot[labels[i]]++) = std::exp(-sqdist(q, static_cast<Index>(i), protos, labels[i])) / den;
  }
  return a;
}

inline double ce(const Matrix& q, const std::vector<int>& labels, const Matrix& protos) {
  double loss = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double den = 0;
    for (Index n = 0; n < protos.rows(); ++n) den += std::exp(-sqdist(q, static_cast<Index>(i), protos, n));
    loss += -std::log(std::exp(-sqdist(q, static_cast<Index>(i), protos, labels[i])) / den);
  }
  return loss / static_cast<double>(labels.size());
}

inline double forget(const Matrix& a, const Matrix& h, double delta, double floor, bool global_norm = false) {
  const Index n = a.rows();
  double a_tot = 0, a_sq = 0, h_sq = 0;
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < a.cols(); ++c) {
      a_tot += a(r, c);
      a_sq += a(r, c) * a(r, c);
      h_sq += h(r, c) * h(r, c);
    }
  double loss = 0;
  for (Index r = 0; r < n; ++r) {
    double d = 0, ar = 0, hr = 0, mass = 0;
    for (Index c = 0; c < a.cols(); ++c) {
      d += a(r, c) * h(r, c);
      ar += a(r, c) * a(r, c);
      hr += h(r, c) * h(r, c);
      mass += a(r, c);
    }
    double sim = global_norm ? d / (std::sqrt(a_sq) * std::sqrt(h_sq)) : d / (std::sqrt(ar) * std::sqrt(hr));
    if (sim < floor) sim = floor;
    if (sim > 1) sim = 1;
    const double p = mass / a_tot;
    loss += -std::log(sim) - (p > 0 ? p * std::log(p) : 0.0);
  }
  return loss / static_cast<double>(n) + delta;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

/// Random row-stochastic-looking positive matrix in (0, 1].
inline Matrix random_probabilities(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

inline std::vector<int> grouped_labels(int n, int per_class) {
  std::vector<int> labels;
  for (int c = 0; c < n; ++c)
    for (int i = 0; i < per_class; ++i) labels.push_back(c);
  return labels;
}

inline double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

/// Central differences of a scalar function of a matrix.
template <typename F>
Matrix numeric_gradient(F f, Matrix x, double eps = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + eps;
    const double up = f(x);
    x.data()[i] = saved - eps;
    const double down = f(x);
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double max_rel_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-6) {
  double worst = 0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

}  // namespace mlcc::oracle
