#include "mlcc/losses.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace mlcc {
namespace {

using oracle::grouped_labels;
using oracle::random_matrix;
using oracle::random_probabilities;
using oracle::rel_error;

Matrix rows2(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

TEST(Cosine, BasicCases) {
  Eigen::Vector2d e1(1, 0), e2(0, 1), neg(-1, 0);
  EXPECT_DOUBLE_EQ(cosine_sim(e1, e1), 1.0);
  EXPECT_DOUBLE_EQ(cosine_sim(e1, e2), 0.0);
  EXPECT_DOUBLE_EQ(cosine_sim(e1, neg), -1.0);
}

TEST(Cosine, ZeroVectorIsAnError) {
  Eigen::Vector2d e1(1, 0), zero(0, 0);
  EXPECT_THROW(cosine_sim(e1, zero), Error);
}

TEST(Cosine, ClampedAgainstRounding) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    Vector v = random_matrix(7, 1, rng);
    const double c = cosine_sim(v, Vector(v * 3.7));
    EXPECT_LE(c, 1.0);
    EXPECT_GE(c, -1.0);
  }
}

TEST(InterClass, TwoByTwoIdentityIsNegative) {
  const Matrix p = rows2({{1, 0}, {0, 1}});
  const double loss = inter_class_loss<double>(p, p, 1.0);
  EXPECT_NEAR(loss, 2 * (std::log(2.0) - 1), 1e-12);
  EXPECT_LT(loss, 0);
}

TEST(InterClass, MatchesOracleOnRandomInputs) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const Matrix p1 = random_matrix(5, 8, rng);
    const Matrix p2 = random_matrix(5, 8, rng);
    EXPECT_LT(rel_error(inter_class_loss<double>(p1, p2, 0.3), oracle::inter(p1, p2, 0.3)), 1e-9);
    EXPECT_LT(rel_error(inter_class_loss<double>(p1, p2, 0.3, InterDenominator::kInfoNce),
                        oracle::inter(p1, p2, 0.3, true)),
              1e-9);
  }
}

TEST(InterClass, ScaleInvariant) {
  std::mt19937_64 rng(12);
  const Matrix p1 = random_matrix(5, 8, rng);
  const Matrix p2 = random_matrix(5, 8, rng);
  const Matrix s1 = 3 * p1;
  const Matrix s2 = 3 * p2;
  EXPECT_NEAR(inter_class_loss<double>(s1, s2, 0.1), inter_class_loss<double>(p1, p2, 0.1), 1e-9);
}

TEST(InterClass, Errors) {
  const Matrix one = rows2({{1, 0}});
  EXPECT_THROW(inter_class_loss<double>(one, one, 1.0), Error);
  const Matrix p = rows2({{1, 0}, {0, 1}});
  EXPECT_THROW(inter_class_loss<double>(p, p, 0.0), Error);
  EXPECT_THROW(inter_class_loss<double>(p, p, -1.0), Error);
}

TEST(IntraClass, SingleAlignedQuery) {
  const Matrix hybrid = rows2({{1, 0}, {0, 1}});
  const Matrix q = rows2({{1, 0}});
  const std::vector<int> labels{0};
  EXPECT_NEAR(intra_class_loss<double>(q, labels, hybrid, 1.0), -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(intra_class_loss<double>(q, labels, hybrid, 1.0), 0.3133, 1e-4);
}

TEST(IntraClass, IdenticalPrototypesGiveLogN) {
  std::mt19937_64 rng(5);
  Matrix hybrid(4, 6);
  const Matrix row = random_matrix(1, 6, rng);
  for (Index i = 0; i < 4; ++i) hybrid.row(i) = row;
  const Matrix q = random_matrix(12, 6, rng);
  EXPECT_NEAR(intra_class_loss<double>(q, grouped_labels(4, 3), hybrid, 0.1), std::log(4.0), 1e-12);
}

TEST(IntraClass, MatchesOracleAndNonNegative) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 50; ++t) {
    const Matrix q = random_matrix(15, 8, rng);
    const Matrix h = random_matrix(5, 8, rng);
    const auto labels = grouped_labels(5, 3);
    const double v = intra_class_loss<double>(q, labels, h, 0.2);
    EXPECT_LT(rel_error(v, oracle::intra(q, labels, h, 0.2)), 1e-9);
    EXPECT_GE(v, 0);
  }
}

TEST(IntraClass, LabelOutOfRange) {
  const Matrix hybrid = rows2({{1, 0}, {0, 1}});
  const Matrix q = rows2({{1, 0}});
  const std::vector<int> labels{2};
  EXPECT_THROW(intra_class_loss<double>(q, labels, hybrid, 1.0), Error);
}

TEST(PredictionMatrix, DominantAndUniform) {
  const Matrix protos = rows2({{0, 0}, {100, 0}, {0, 100}});
  const Matrix q = rows2({{0, 0}, {100, 0}, {0, 100}});
  const Matrix a = prediction_matrix<double>(q, grouped_labels(3, 1), protos);
  ASSERT_EQ(a.rows(), 3);
  ASSERT_EQ(a.cols(), 1);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(a(i, 0), 1.0, 1e-12);

  const Matrix same = rows2({{1, 2}, {1, 2}, {1, 2}});
  std::mt19937_64 rng(1);
  const Matrix u = prediction_matrix<double>(random_matrix(6, 2, rng), grouped_labels(3, 2), same);
  for (Index i = 0; i < u.size(); ++i) EXPECT_DOUBLE_EQ(u.data()[i], 1.0 / 3.0);
}

TEST(PredictionMatrix, RaggedQueriesRejected) {
  const Matrix protos = rows2({{0, 0}, {1, 1}});
  const Matrix q = rows2({{0, 0}, {1, 1}, {1, 0}});
  const std::vector<int> labels{0, 1, 1};
  EXPECT_THROW(prediction_matrix<double>(q, labels, protos), Error);
}

TEST(PredictionMatrix, MatchesOracle) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 50; ++t) {
    const Matrix q = random_matrix(20, 6, rng, 0.5);
    const Matrix p = random_matrix(4, 6, rng, 0.5);
    const auto labels = grouped_labels(4, 5);
    const Matrix a = prediction_matrix<double>(q, labels, p);
    const Matrix o = oracle::prediction(q, labels, p, 5);
    for (Index i = 0; i < a.size(); ++i) EXPECT_LT(rel_error(a.data()[i], o.data()[i]), 1e-9);
  }
}

TEST(Forget, IdenticalConcentratedMassGivesDelta) {
  Matrix a = Matrix::Zero(3, 4);
  a.row(0).setConstant(0.9);
  // Other rows carry vanishing mass but stay non-zero.
  a.row(1).setConstant(1e-150);
  a.row(2).setConstant(1e-150);
  EXPECT_NEAR(forget_loss<double>(a, a, 0.1, 1e-6), 0.1, 1e-12);
  const Matrix single = Matrix::Constant(1, 5, 0.7);
  EXPECT_NEAR(forget_loss<double>(single, single, 0.1, 1e-6), 0.1, 1e-15);
}

TEST(Forget, IdenticalUniformMass) {
  for (int n : {2, 3, 5}) {
    Matrix a = Matrix::Constant(n, 4, 0.3);
    EXPECT_NEAR(forget_loss<double>(a, a, 0.1, 1e-6), std::log(double(n)) / n + 0.1, 1e-12);
  }
}

TEST(Forget, MatchesOracleBothNorms) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = random_probabilities(5, 15, rng);
    const Matrix h = random_probabilities(5, 15, rng);
    EXPECT_LT(rel_error(forget_loss<double>(a, h, 0.1, 1e-6), oracle::forget(a, h, 0.1, 1e-6)), 1e-9);
    EXPECT_LT(rel_error(forget_loss<double>(a, h, 0.1, 1e-6, ForgetNorm::kGlobal), oracle::forget(a, h, 0.1, 1e-6, true)),
              1e-9);
  }
}

TEST(Forget, BoundedBelowByDelta) {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 100; ++t) {
    const Matrix a = random_probabilities(4, 6, rng);
    const Matrix h = random_probabilities(4, 6, rng);
    EXPECT_GE(forget_loss<double>(a, h, 0.25, 1e-6), 0.25);
  }
}

TEST(Forget, Errors) {
  const Matrix a = Matrix::Constant(2, 3, 0.5);
  const Matrix h = Matrix::Constant(3, 3, 0.5);
  EXPECT_THROW(forget_loss<double>(a, h, 0.1, 1e-6), Error);
  Matrix z = a;
  z.row(1).setZero();
  EXPECT_THROW(forget_loss<double>(z, a, 0.1, 1e-6), Error);
}

TEST(EpisodeCe, ClosedForms) {
  const Matrix protos = rows2({{0, 0}, {10, 0}, {0, 10}});
  const Matrix q = rows2({{0, 0}, {10, 0}, {0, 10}});
  EXPECT_NEAR(episode_ce_loss<double>(q, grouped_labels(3, 1), protos), 0.0, 1e-12);
  const Matrix same = rows2({{1, 1}, {1, 1}, {1, 1}});
  EXPECT_NEAR(episode_ce_loss<double>(q, grouped_labels(3, 1), same), std::log(3.0), 1e-12);
}

TEST(EpisodeCe, MatchesOracleAndNonNegative) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 50; ++t) {
    const Matrix q = random_matrix(10, 5, rng);
    const Matrix p = random_matrix(5, 5, rng);
    const auto labels = grouped_labels(5, 2);
    const double v = episode_ce_loss<double>(q, labels, p);
    EXPECT_LT(rel_error(v, oracle::ce(q, labels, p)), 1e-9);
    EXPECT_GE(v, 0);
  }
}

TEST(TotalLoss, WeightedSum) {
  const LossConfig cfg;
  EXPECT_DOUBLE_EQ(total_loss(1, 0, 0, 0, cfg), 1.0);
  EXPECT_DOUBLE_EQ(total_loss(0, 1, 1, 0, cfg), 3.0);
  EXPECT_NEAR(total_loss(0.5, 0.2, 0.3, 0.1, cfg), 1.3, 1e-15);
  EXPECT_THROW(total_loss(std::nan(""), 0, 0, 0, cfg), Error);
}

TEST(Invariance, ClassPermutation) {
  std::mt19937_64 rng(18);
  const int n = 5, per = 3;
  const Matrix p1 = random_matrix(n, 8, rng);
  const Matrix p2 = random_matrix(n, 8, rng);
  const Matrix q = random_matrix(n * per, 8, rng);
  const auto labels = grouped_labels(n, per);
  const Matrix a = random_probabilities(n, per, rng);
  const Matrix h = random_probabilities(n, per, rng);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix pp1(n, 8), pp2(n, 8), pa(n, per), ph(n, per);
  std::vector<int> plabels(labels.size());
  for (int c = 0; c < n; ++c) {
    pp1.row(perm[c]) = p1.row(c);
    pp2.row(perm[c]) = p2.row(c);
    pa.row(perm[c]) = a.row(c);
    ph.row(perm[c]) = h.row(c);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) plabels[i] = perm[labels[i]];

  EXPECT_NEAR(inter_class_loss<double>(pp1, pp2, 0.1), inter_class_loss<double>(p1, p2, 0.1), 1e-9);
  EXPECT_NEAR(intra_class_loss<double>(q, plabels, pp1, 0.1), intra_class_loss<double>(q, labels, p1, 0.1), 1e-9);
  EXPECT_NEAR(episode_ce_loss<double>(q, plabels, pp1), episode_ce_loss<double>(q, labels, p1), 1e-9);
  EXPECT_NEAR(forget_loss<double>(pa, ph, 0.1, 1e-6), forget_loss<double>(a, h, 0.1, 1e-6), 1e-12);
}

TEST(Invariance, TranslationOfEuclideanTerms) {
  std::mt19937_64 rng(19);
  const Matrix q = random_matrix(15, 6, rng);
  const Matrix p = random_matrix(5, 6, rng);
  const auto labels = grouped_labels(5, 3);
  const RowVectorX<double> shift = random_matrix(1, 6, rng, 10.0);
  const Matrix qs = q.rowwise() + shift;
  const Matrix ps = p.rowwise() + shift;
  EXPECT_NEAR(episode_ce_loss<double>(qs, labels, ps), episode_ce_loss<double>(q, labels, p), 1e-9);
  const Matrix a = prediction_matrix<double>(q, labels, p);
  const Matrix b = prediction_matrix<double>(qs, labels, ps);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(NearestPrototype, TieGoesToLowerIndex) {
  const Matrix protos = rows2({{-1, 0}, {1, 0}, {0, 5}});
  const Matrix q = rows2({{0, 0}});
  EXPECT_EQ(nearest_prototype<double>(q, protos)[0], 0);
  const Matrix swapped = rows2({{0, 5}, {1, 0}, {-1, 0}});
  EXPECT_EQ(nearest_prototype<double>(q, swapped)[0], 1);
}

// Analytic embedding gradients against central differences.
class LossGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{21};
  static constexpr double kTol = 1e-6;
};

TEST_F(LossGradient, InterClass) {
  for (auto denom : {InterDenominator::kAsPrinted, InterDenominator::kInfoNce}) {
    const Matrix p1 = random_matrix(4, 6, rng);
    const Matrix p2 = random_matrix(4, 6, rng);
    Matrix g1, g2;
    inter_class_loss<double>(p1, p2, 0.5, denom, &g1, &g2);
    const Matrix n1 = oracle::numeric_gradient([&](const Matrix& x) { return inter_class_loss<double>(x, p2, 0.5, denom); }, p1);
    const Matrix n2 = oracle::numeric_gradient([&](const Matrix& x) { return inter_class_loss<double>(p1, x, 0.5, denom); }, p2);
    EXPECT_LT(oracle::max_rel_error(g1, n1), kTol);
    EXPECT_LT(oracle::max_rel_error(g2, n2), kTol);
  }
}

TEST_F(LossGradient, IntraClass) {
  const Matrix q = random_matrix(8, 5, rng);
  const Matrix h = random_matrix(4, 5, rng);
  const auto labels = grouped_labels(4, 2);
  Matrix gq, gh;
  intra_class_loss<double>(q, labels, h, 0.5, &gq, &gh);
  EXPECT_LT(oracle::max_rel_error(gq, oracle::numeric_gradient([&](const Matrix& x) { return intra_class_loss<double>(x, labels, h, 0.5); }, q)), kTol);
  EXPECT_LT(oracle::max_rel_error(gh, oracle::numeric_gradient([&](const Matrix& x) { return intra_class_loss<double>(q, labels, x, 0.5); }, h)), kTol);
}

TEST_F(LossGradient, EpisodeCe) {
  const Matrix q = random_matrix(9, 4, rng);
  const Matrix p = random_matrix(3, 4, rng);
  const auto labels = grouped_labels(3, 3);
  Matrix gq, gp;
  episode_ce_loss<double>(q, labels, p, &gq, &gp);
  EXPECT_LT(oracle::max_rel_error(gq, oracle::numeric_gradient([&](const Matrix& x) { return episode_ce_loss<double>(x, labels, p); }, q)), kTol);
  EXPECT_LT(oracle::max_rel_error(gp, oracle::numeric_gradient([&](const Matrix& x) { return episode_ce_loss<double>(q, labels, x); }, p)), kTol);
}

TEST_F(LossGradient, ForgetThroughPredictionMatrix) {
  for (auto norm : {ForgetNorm::kRow, ForgetNorm::kGlobal}) {
    const Matrix q = random_matrix(12, 4, rng, 0.5);
    const Matrix p = random_matrix(3, 4, rng, 0.5);
    const auto labels = grouped_labels(3, 4);
    const Matrix h = random_probabilities(3, 4, rng);
    const auto f = [&](const Matrix& qq, const Matrix& pp) {
      return forget_loss<double>(prediction_matrix<double>(qq, labels, pp), h, 0.1, 1e-6, norm);
    };
    Matrix ga;
    const Matrix a = prediction_matrix<double>(q, labels, p);
    forget_loss<double>(a, h, 0.1, 1e-6, norm, &ga);
    EXPECT_LT(oracle::max_rel_error(ga, oracle::numeric_gradient([&](const Matrix& x) { return forget_loss<double>(x, h, 0.1, 1e-6, norm); }, a)), kTol);
    Matrix gq, gp;
    prediction_matrix_backward<double>(q, labels, p, ga, &gq, &gp);
    EXPECT_LT(oracle::max_rel_error(gq, oracle::numeric_gradient([&](const Matrix& x) { return f(x, p); }, q)), 1e-5);
    EXPECT_LT(oracle::max_rel_error(gp, oracle::numeric_gradient([&](const Matrix& x) { return f(q, x); }, p)), 1e-5);
  }
}

TEST(Forget, UnderflowingSoftmaxStaysFinite) {
  // Queries far from every prototype: exp of the distance gap is exactly 0.
  Matrix p = Matrix::Zero(3, 2);
  p(1, 0) = 40;
  p(2, 1) = 40;
  Matrix q(6, 2);
  q << 40, 0, 40, 0, 0, 0, 0, 0, 0, 0, 0, 0;
  const auto labels = grouped_labels(3, 2);
  const Matrix a = prediction_matrix<double>(q, labels, p);
  EXPECT_GT(a.minCoeff(), 0.0);
  const Matrix h = Matrix::Constant(3, 2, 0.5);
  for (auto norm : {ForgetNorm::kRow, ForgetNorm::kGlobal}) {
    Matrix ga;
    const double loss = forget_loss<double>(a, h, 0.1, 1e-6, norm, &ga);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_TRUE(ga.allFinite());
    Matrix gq, gp;
    prediction_matrix_backward<double>(q, labels, p, ga, &gq, &gp);
    EXPECT_TRUE(gq.allFinite());
    EXPECT_TRUE(gp.allFinite());
  }
  const Matrix tiny = Matrix::Constant(2, 3, 1e-300);
  EXPECT_NEAR(forget_loss<double>(tiny, tiny, 0.1, 1e-6), std::log(2.0) / 2 + 0.1, 1e-12);
}

TEST(LossConfigDefaults, MatchDocumentedValues) {
  const LossConfig cfg;
  EXPECT_EQ(cfg.lambda1, 2.0);
  EXPECT_EQ(cfg.lambda2, 1.0);
  EXPECT_EQ(cfg.kappa, 0.1);
  EXPECT_EQ(cfg.tau, 0.1);
  EXPECT_EQ(cfg.delta, 0.1);
  EXPECT_EQ(cfg.cos_floor, 1e-6);
  LossConfig bad;
  bad.tau = 0;
  EXPECT_THROW(bad.validate(), Error);
}

}  // namespace
}  // namespace mlcc
