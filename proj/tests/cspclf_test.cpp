#include "saliency_bci/cspclf.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "csp_oracle.hpp"
#include "test_util.hpp"

namespace sbci {
namespace {

TrialSet synth(int n_c, int per_class, double snr_db, std::uint64_t seed, Session session = Session::Train) {
  SynthSpec spec;
  spec.n_channels = n_c;
  spec.n_samples = 250;
  spec.trials_per_class = per_class;
  spec.intervals = {{0, 250}};
  spec.snr_db = snr_db;
  spec.seed = seed;
  spec.session = session;
  return generate_synthetic(spec);
}

Trial make_trial(const std::string& id, Label label, Matrix data) {
  Trial t;
  t.trial_id = id;
  t.label = label;
  t.data = std::move(data);
  return t;
}

TEST(ClassCovariance, WhiteDataNearScaledIdentity) {
  std::mt19937_64 rng(1);
  const Matrix x = test::random_matrix(4, 20000, rng);
  const TrialSet set({make_trial("a", Label::Left, x)});
  const Matrix c = class_covariance(set, Label::Left);
  EXPECT_TRUE(c.isApprox(Matrix::Identity(4, 4) / 4.0, 0.05));
  // Direct evaluation with explicit loops.
  Matrix direct = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double mi = x.row(i).mean(), mj = x.row(j).mean();
      for (int t = 0; t < 20000; ++t) direct(i, j) += (x(i, t) - mi) * (x(j, t) - mj);
    }
  }
  direct /= direct.trace();
  EXPECT_TRUE(c.isApprox(direct, 1e-12));
}

TEST(ClassCovariance, TraceOneSymmetricAndMeanIdempotent) {
  const auto set = synth(5, 6, 0.0, 2);
  const Matrix c = class_covariance(set, Label::Right);
  EXPECT_NEAR(c.trace(), 1.0, 1e-12);
  EXPECT_EQ(c, c.transpose());
  std::vector<Trial> doubled(set.begin(), set.end());
  for (const auto& t : set) {
    Trial copy = t;
    copy.trial_id += "_dup";
    doubled.push_back(copy);
  }
  EXPECT_TRUE(class_covariance(TrialSet(doubled), Label::Right).isApprox(c, 1e-13));
}

TEST(ClassCovariance, Errors) {
  const TrialSet only_left({make_trial("a", Label::Left, Matrix::Identity(2, 5))});
  try {
    class_covariance(only_left, Label::Right);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoTrialsForLabel);
  }
  const TrialSet flat({make_trial("a", Label::Left, Matrix::Constant(2, 5, 3.0))});
  try {
    class_covariance(flat, Label::Left);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVariance);
  }
}

TEST(CspDecompose, EqualCovariancesGiveHalf) {
  std::mt19937_64 rng(3);
  const Matrix c = test::random_spd(5, rng);
  const auto dec = csp_decompose(c, c);
  EXPECT_TRUE(dec.eigenvalues.isApproxToConstant(0.5, 1e-12));
}

TEST(CspDecompose, AxisAlignedTwoChannels) {
  Matrix c1(2, 2), c2(2, 2);
  c1 << 0.9, 0.0, 0.0, 0.1;
  c2 << 0.1, 0.0, 0.0, 0.9;
  const auto dec = csp_decompose(c1, c2);
  EXPECT_NEAR(dec.eigenvalues(0), 0.9, 1e-12);
  EXPECT_NEAR(dec.eigenvalues(1), 0.1, 1e-12);
  EXPECT_NEAR(std::abs(dec.filters(0, 1)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(dec.filters(1, 0)), 0.0, 1e-12);
  EXPECT_GT(dec.filters(0, 0), 0.0);
  EXPECT_GT(dec.filters(1, 1), 0.0);
}

TEST(CspDecompose, PairedEigenvaluesSumToOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix c1 = test::random_spd(6, rng), c2 = test::random_spd(6, rng);
    const Vector a = csp_decompose(c1, c2).eigenvalues;
    const Vector b = csp_decompose(c2, c1).eigenvalues;
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a(i) + b(5 - i), 1.0, 1e-10);
  }
}

TEST(CspDecompose, DiagonalizesBothCovariances) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix c1 = test::random_spd(7, rng), c2 = test::random_spd(7, rng);
    const auto dec = csp_decompose(c1, c2);
    const Matrix d1 = dec.filters * c1 * dec.filters.transpose();
    const Matrix d2 = dec.filters * c2 * dec.filters.transpose();
    const Matrix off1 = d1 - Matrix(d1.diagonal().asDiagonal());
    const Matrix off2 = d2 - Matrix(d2.diagonal().asDiagonal());
    EXPECT_LT(off1.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(off2.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_TRUE((d1 + d2).isApprox(Matrix::Identity(7, 7), 1e-10));
    EXPECT_TRUE(d1.diagonal().isApprox(dec.eigenvalues, 1e-10));
  }
}

TEST(CspDecompose, MatchesBruteForceOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 2 + trial % 3;
    const Matrix c1 = test::random_spd(n, rng), c2 = test::random_spd(n, rng);
    const auto dec = csp_decompose(c1, c2);
    const auto oracle = test::brute_force_csp(c1, c2);
    ASSERT_EQ(oracle.values.size(), static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      EXPECT_NEAR(dec.eigenvalues(i), oracle.values[static_cast<std::size_t>(i)], 1e-8);
      const Vector w = dec.filters.row(i).transpose();
      EXPECT_LT((w - oracle.vectors[static_cast<std::size_t>(i)]).cwiseAbs().maxCoeff(), 1e-8 * (1.0 + w.norm()));
    }
  }
}

TEST(CspDecompose, ShrinkageRescuesRankDeficiency) {
  std::mt19937_64 rng(7);
  Matrix a = test::random_matrix(3, 50, rng);
  Matrix x(4, 50);
  x << a, a.row(0);  // duplicate channel
  const Matrix c = x * x.transpose() / (x * x.transpose()).trace();
  Matrix b = test::random_matrix(3, 50, rng);
  Matrix y(4, 50);
  y << b, b.row(0);
  const Matrix d = y * y.transpose() / (y * y.transpose()).trace();
  const auto dec = csp_decompose(c, d);
  EXPECT_GT(dec.shrinkage, 0.0);
  EXPECT_TRUE(dec.filters.allFinite());
  try {
    csp_decompose(Matrix::Zero(3, 3), Matrix::Zero(3, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularComposite);
  }
}

TEST(FitCsp, ShapeAndOrdering) {
  const auto set = synth(8, 10, 0.0, 8);
  const auto m = fit_csp(set, 3);
  EXPECT_EQ(m.w.rows(), 6);
  EXPECT_EQ(m.w.cols(), 8);
  const auto dec = csp_decompose(class_covariance(set, Label::Left), class_covariance(set, Label::Right));
  EXPECT_EQ(m.w.topRows(3), dec.filters.topRows(3));
  EXPECT_EQ(m.w.bottomRows(3), dec.filters.bottomRows(3));
  EXPECT_EQ(csp_features(m, set[0]).size(), 6);
  EXPECT_THROW(fit_csp(set, 5), Error);
}

TEST(CspFeatures, HandExampleAndInvariances) {
  CspModel m;
  m.k = 1;
  m.w = Matrix::Identity(2, 2);
  Matrix x(2, 4);
  x << std::sqrt(3.0), -std::sqrt(3.0), std::sqrt(3.0), -std::sqrt(3.0),
       1.0, -1.0, 1.0, -1.0;
  const Vector f = csp_features(m, make_trial("a", Label::Left, x));
  EXPECT_NEAR(f(0), std::log(0.75), 1e-14);
  EXPECT_NEAR(f(1), std::log(0.25), 1e-14);

  const auto set = synth(6, 4, 0.0, 9);
  const auto model = fit_csp(set, 2);
  const Vector base = csp_features(model, set[1]);
  Matrix shifted = 7.5 * set[1].data;
  for (Eigen::Index c = 0; c < shifted.rows(); ++c) shifted.row(c).array() += static_cast<double>(c) * 3.0 - 4.0;
  EXPECT_TRUE(csp_features(model, set[1].with_data(shifted)).isApprox(base, 1e-10));

  try {
    csp_features(m, make_trial("z", Label::Left, Matrix::Constant(2, 4, 1.0)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVariance);
  }
}

TEST(Lda, OneDimensionalBoundaryAtZero) {
  LabelledFeatures data;
  for (double v : {0.5, 1.5}) data.emplace_back(Vector::Constant(1, v), Label::Left);
  for (double v : {-0.5, -1.5}) data.emplace_back(Vector::Constant(1, v), Label::Right);
  const auto m = fit_lda(data);
  EXPECT_NEAR(m.b, 0.0, 1e-14);
  EXPECT_GT(m.w(0), 0.0);
  EXPECT_EQ(m.predict(Vector::Constant(1, 0.01)), Label::Left);
  EXPECT_EQ(m.predict(Vector::Constant(1, -0.01)), Label::Right);
  EXPECT_EQ(m.predict(Vector::Constant(1, 0.0)), Label::Left);  // tie
  // Closed form: pooled variance 0.5, w = (1 - (-1)) / 0.5.
  EXPECT_NEAR(m.w(0), 4.0, 1e-12);
}

TEST(Lda, SeparableAndClassOrderSwap) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g(0.0, 0.1);
  LabelledFeatures data;
  for (int i = 0; i < 20; ++i) {
    Vector f(3);
    f << 5.0 + g(rng), g(rng), -2.0 + g(rng);
    data.emplace_back(f, Label::Left);
    Vector h(3);
    h << -5.0 + g(rng), g(rng), 2.0 + g(rng);
    data.emplace_back(h, Label::Right);
  }
  const auto m = fit_lda(data);
  const auto s = fit_lda(data, {Label::Right, Label::Left});
  EXPECT_TRUE(s.w.isApprox(-m.w, 1e-12));
  EXPECT_NEAR(s.b, -m.b, 1e-9);
  for (const auto& [f, label] : data) {
    EXPECT_EQ(m.predict(f), label);
    EXPECT_EQ(s.predict(f), label);
  }
}

TEST(Lda, DegenerateFits) {
  LabelledFeatures one_class{{Vector::Ones(2), Label::Left}, {Vector::Zero(2), Label::Left}};
  EXPECT_THROW(fit_lda(one_class), Error);
  LabelledFeatures same_means{{Vector::Ones(2), Label::Left}, {Vector::Ones(2), Label::Right}};
  try {
    fit_lda(same_means);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateFit);
  }
}

TEST(Evaluate, ResubstitutionOnSeparableData) {
  const auto set = synth(6, 20, 10.0, 11);
  const auto rec = evaluate(set, set, 3);
  EXPECT_EQ(rec.accuracy, 1.0);
  EXPECT_EQ(rec.n_test, 40);
  EXPECT_EQ(rec.confusion[0][0], 20);
  EXPECT_EQ(rec.per_class[1], 1.0);
}

TEST(Evaluate, PermutedLabelsNearChance) {
  const auto train = synth(6, 20, 10.0, 12);
  const auto test = synth(6, 30, 10.0, 13, Session::Test);
  std::vector<Trial> shuffled(test.begin(), test.end());
  std::vector<std::optional<Label>> labels;
  for (const auto& t : shuffled) labels.push_back(t.label);
  std::mt19937_64 rng(14);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].label = labels[i];
  const auto rec = evaluate(train, TrialSet(shuffled), 3);
  EXPECT_NEAR(rec.accuracy, 0.5, 0.15);
}

TEST(Evaluate, DeterministicAndScaleInvariant) {
  const auto train = synth(6, 15, -3.0, 15);
  const auto test = synth(6, 15, -3.0, 16, Session::Test);
  const auto model = fit_csp_lda(train, 3);
  std::vector<Trial> scaled;
  for (const auto& t : test) scaled.push_back(t.with_data(4.0 * t.data));
  for (std::size_t i = 0; i < test.size(); ++i) EXPECT_EQ(model.predict(test[i]), model.predict(scaled[i]));
  const auto a = evaluate(train, test, 3), b = evaluate(train, test, 3);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.confusion, b.confusion);
}

}  // namespace
}  // namespace sbci
