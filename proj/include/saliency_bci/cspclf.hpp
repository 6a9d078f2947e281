#ifndef SALIENCY_BCI_CSPCLF_HPP
#define SALIENCY_BCI_CSPCLF_HPP

// Common spatial patterns (normalized log-variance features) and a binary
// linear discriminant with equal priors.

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "saliency_bci/common.hpp"
#include "saliency_bci/trialio.hpp"

namespace sbci {

using ClassOrder = std::pair<Label, Label>;
inline constexpr ClassOrder kDefaultClassOrder{Label::Left, Label::Right};

inline Matrix center_channels(const Matrix& x) {
  return x.colwise() - x.rowwise().mean();
}

/// Mean over trials of the trace-normalized spatial scatter.
inline Matrix class_covariance(const TrialSet& trials, Label label) {
  const Eigen::Index n_c = trials.n_channels();
  Matrix acc = Matrix::Zero(n_c, n_c);
  int count = 0;
  for (const auto& t : trials) {
    if (t.label != label) continue;
    const Matrix xc = center_channels(t.data);
    Matrix s = xc * xc.transpose();
    const double tr = s.trace();
    if (!(tr > 0.0)) throw Error(ErrorCode::ZeroVariance, "trial '" + t.trial_id + "' has zero variance");
    acc += s / tr;
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::NoTrialsForLabel, std::string("no trials labelled ") + to_string(label));
  acc /= static_cast<double>(count);
  return (acc + acc.transpose()) / 2.0;
}

/// Full solution of C1 w = lambda (C1 + C2) w by whitening.
struct CspDecomposition {
  Vector eigenvalues;  // descending
  Matrix filters;      // row i is the eigenvector for eigenvalues(i), w (C1+C2) w^T = 1
  double shrinkage = 0.0;
};

inline constexpr double kMaxCondition = 1e10;

/// Whitening route. Blends both covariances toward (trace/n) I, escalating
/// from 1e-6 to 1e-2, when C1 + C2 is ill-conditioned.
inline CspDecomposition csp_decompose(const Matrix& c1_in, const Matrix& c2_in) {
  const Eigen::Index n = c1_in.rows();
  if (c1_in.cols() != n || c2_in.rows() != n || c2_in.cols() != n || n < 1) {
    throw Error(ErrorCode::ShapeMismatch, "csp_decompose: covariances must be square and equal-sized");
  }
  auto shrink = [n](const Matrix& c, double w) {
    return Matrix((1.0 - w) * c + w * (c.trace() / static_cast<double>(n)) * Matrix::Identity(n, n));
  };
  const std::array<double, 6> weights{0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  for (double w : weights) {
    const Matrix c1 = shrink(c1_in, w);
    const Matrix c2 = shrink(c2_in, w);
    Eigen::SelfAdjointEigenSolver<Matrix> comp(c1 + c2);
    if (comp.info() != Eigen::Success) continue;
    const Vector d = comp.eigenvalues();
    if (!(d.minCoeff() > 0.0) || d.maxCoeff() / d.minCoeff() > kMaxCondition) continue;

    const Matrix whiten = d.cwiseInverse().cwiseSqrt().asDiagonal() * comp.eigenvectors().transpose();
    Matrix s1 = whiten * c1 * whiten.transpose();
    s1 = (s1 + s1.transpose()) / 2.0;
    Eigen::SelfAdjointEigenSolver<Matrix> inner(s1);
    if (inner.info() != Eigen::Success) continue;

    CspDecomposition out;
    out.shrinkage = w;
    out.eigenvalues = inner.eigenvalues().reverse();
    out.filters = inner.eigenvectors().rowwise().reverse().transpose() * whiten;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      out.filters.row(i).cwiseAbs().maxCoeff(&arg);
      if (out.filters(i, arg) < 0.0) out.filters.row(i) *= -1.0;
    }
    return out;
  }
  throw Error(ErrorCode::SingularComposite, "composite covariance stays singular after shrinkage 1e-2");
}

struct CspModel {
  Matrix w;  // 2k x n_c: top-k rows then bottom-k rows
  int k = 0;
  ClassOrder class_order = kDefaultClassOrder;
  Vector eigenvalues;  // full spectrum, descending
};

inline CspModel fit_csp(const TrialSet& train, int k, ClassOrder order = kDefaultClassOrder) {
  const Eigen::Index n_c = train.n_channels();
  if (k < 1 || 2 * k > n_c) {
    throw Error(ErrorCode::InvalidArgument, std::to_string(k) + " filter pairs need at least " +
                                                std::to_string(2 * k) + " channels, have " + std::to_string(n_c));
  }
  const auto dec = csp_decompose(class_covariance(train, order.first), class_covariance(train, order.second));
  CspModel m;
  m.k = k;
  m.class_order = order;
  m.eigenvalues = dec.eigenvalues;
  m.w.resize(2 * k, n_c);
  m.w.topRows(k) = dec.filters.topRows(k);
  m.w.bottomRows(k) = dec.filters.bottomRows(k);
  return m;
}

/// f_j = log(var(z_j) / sum_j' var(z_j')) with z = W x.
inline Vector csp_features(const CspModel& model, const Trial& t) {
  if (t.n_channels() != model.w.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "trial '" + t.trial_id + "' has " + std::to_string(t.n_channels()) +
                                              " channels, CSP model expects " + std::to_string(model.w.cols()));
  }
  const Matrix z = model.w * center_channels(t.data);
  const Vector var = z.rowwise().squaredNorm();
  const double total = var.sum();
  if (!(total > 0.0) || !(var.minCoeff() > 0.0)) {
    throw Error(ErrorCode::ZeroVariance, "trial '" + t.trial_id + "' has a zero-variance CSP component");
  }
  return (var / total).array().log().matrix();
}

struct LdaModel {
  Vector w;
  double b = 0.0;
  ClassOrder class_order = kDefaultClassOrder;

  double score(const Vector& f) const { return w.dot(f) + b; }
  /// Ties go to the first class.
  Label predict(const Vector& f) const { return score(f) >= 0.0 ? class_order.first : class_order.second; }
};

using LabelledFeatures = std::vector<std::pair<Vector, Label>>;

inline LdaModel fit_lda(const LabelledFeatures& data, ClassOrder order = kDefaultClassOrder) {
  if (data.empty()) throw Error(ErrorCode::DegenerateFit, "no training features");
  const Eigen::Index p = data.front().first.size();
  Vector mu1 = Vector::Zero(p), mu2 = Vector::Zero(p);
  int n1 = 0, n2 = 0;
  for (const auto& [f, label] : data) {
    if (f.size() != p) throw Error(ErrorCode::ShapeMismatch, "feature vectors differ in length");
    if (label == order.first) {
      mu1 += f;
      ++n1;
    } else if (label == order.second) {
      mu2 += f;
      ++n2;
    }
  }
  if (n1 == 0 || n2 == 0) throw Error(ErrorCode::DegenerateFit, "LDA needs both classes present");
  mu1 /= n1;
  mu2 /= n2;
  Matrix scatter = Matrix::Zero(p, p);
  for (const auto& [f, label] : data) {
    const Vector dev = f - (label == order.first ? mu1 : mu2);
    scatter.noalias() += dev * dev.transpose();
  }
  const int dof = n1 + n2 > 2 ? n1 + n2 - 2 : n1 + n2;
  const Matrix pooled = scatter / static_cast<double>(dof);

  const double scale = std::max(pooled.trace() / static_cast<double>(p), 1e-300);
  const std::array<double, 6> weights{0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  for (double w : weights) {
    const Matrix s = (1.0 - w) * pooled + w * scale * Matrix::Identity(p, p);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    const Vector ev = eig.eigenvalues();
    if (!(ev.minCoeff() > 0.0) || ev.maxCoeff() / ev.minCoeff() > kMaxCondition) continue;
    LdaModel m;
    m.class_order = order;
    m.w = eig.eigenvectors() * (eig.eigenvalues().cwiseInverse().asDiagonal() *
                                (eig.eigenvectors().transpose() * (mu1 - mu2)));
    m.b = -m.w.dot(mu1 + mu2) / 2.0;
    if (!m.w.allFinite() || m.w.isZero(0.0)) break;
    return m;
  }
  throw Error(ErrorCode::DegenerateFit, "pooled covariance singular or class means identical");
}

struct AccuracyRecord {
  double accuracy = 0.0;
  std::array<double, 2> per_class{0.0, 0.0};            // indexed by class_order position
  std::array<std::array<int, 2>, 2> confusion{};       // [true][predicted]
  int n_test = 0;
};

struct CspLdaModel {
  CspModel csp;
  LdaModel lda;

  Label predict(const Trial& t) const { return lda.predict(csp_features(csp, t)); }
};

inline LabelledFeatures labelled_features(const CspModel& csp, const TrialSet& set) {
  LabelledFeatures out;
  out.reserve(set.size());
  for (const auto& t : set) {
    if (!t.label) throw Error(ErrorCode::InvalidArgument, "trial '" + t.trial_id + "' is unlabelled");
    out.emplace_back(csp_features(csp, t), *t.label);
  }
  return out;
}

inline CspLdaModel fit_csp_lda(const TrialSet& train, int k, ClassOrder order = kDefaultClassOrder) {
  CspLdaModel m;
  m.csp = fit_csp(train, k, order);
  m.lda = fit_lda(labelled_features(m.csp, train), order);
  return m;
}

inline AccuracyRecord score(const CspLdaModel& model, const TrialSet& test) {
  AccuracyRecord rec;
  const auto order = model.lda.class_order;
  for (const auto& t : test) {
    if (!t.label) throw Error(ErrorCode::InvalidArgument, "test trial '" + t.trial_id + "' is unlabelled");
    const int truth = *t.label == order.first ? 0 : 1;
    const int pred = model.predict(t) == order.first ? 0 : 1;
    ++rec.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
    ++rec.n_test;
  }
  int correct = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    const int total = rec.confusion[c][0] + rec.confusion[c][1];
    correct += rec.confusion[c][c];
    rec.per_class[c] = total > 0 ? static_cast<double>(rec.confusion[c][c]) / total : 0.0;
  }
  rec.accuracy = rec.n_test > 0 ? static_cast<double>(correct) / rec.n_test : 0.0;
  return rec;
}

/// Fits CSP + LDA on train and scores the test set.
inline AccuracyRecord evaluate(const TrialSet& train, const TrialSet& test, int k) {
  return score(fit_csp_lda(train, k), test);
}

}  // namespace sbci

#endif  // SALIENCY_BCI_CSPCLF_HPP
