#ifndef SALIENCY_BCI_SALIENCY_HPP
#define SALIENCY_BCI_SALIENCY_HPP

// Test-time saliency: attention vector from Lambda, top-r of n equal
// segments, and concatenation of the kept samples. The decoder is unused.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "saliency_bci/attnet.hpp"
#include "saliency_bci/common.hpp"
#include "saliency_bci/trialio.hpp"

namespace sbci {

struct PruneConfig {
  int n = 1;  // segment count
  int r = 1;  // kept segments

  void validate(Eigen::Index T) const {
    if (n < 1 || r < 1 || r > n) {
      throw Error(ErrorCode::InvalidArgument, "prune config needs 1 <= r <= n, got n=" + std::to_string(n) +
                                                  " r=" + std::to_string(r));
    }
    if (T % n != 0) {
      throw Error(ErrorCode::IndivisibleLength, "n=" + std::to_string(n) + " does not divide T=" + std::to_string(T));
    }
  }

  Eigen::Index segment_length(Eigen::Index T) const { return T / n; }
  Eigen::Index kept_length(Eigen::Index T) const { return r * (T / n); }
};

struct AttentionOutput {
  Matrix lambda;  // T x T
  Vector a;       // column means of lambda
};

struct PruneResult {
  std::vector<int> kept_segments;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> kept_sample_ranges;  // [start, end)
  Trial pruned_trial;
};

/// a_t = (1/T) sum_j Lambda(j, t).
inline Vector attention_vector(const Matrix& lambda) {
  if (lambda.rows() != lambda.cols() || lambda.rows() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "attention matrix must be square and nonempty");
  }
  const Vector row_sums = lambda.rowwise().sum();
  for (Eigen::Index i = 0; i < row_sums.size(); ++i) {
    if (!(std::abs(row_sums(i) - 1.0) <= 1e-6) || (lambda.row(i).array() < 0.0).any()) {
      throw Error(ErrorCode::NotRowStochastic, "row " + std::to_string(i) + " sums to " + std::to_string(row_sums(i)));
    }
  }
  return lambda.colwise().mean().transpose();
}

/// Top-r segments by mean attention (ties to the lower index), returned in
/// temporal order.
inline std::vector<int> select_segments(const Vector& a, const PruneConfig& cfg) {
  const Eigen::Index T = a.size();
  cfg.validate(T);
  const Eigen::Index len = cfg.segment_length(T);
  std::vector<double> means(static_cast<std::size_t>(cfg.n));
  for (int s = 0; s < cfg.n; ++s) means[static_cast<std::size_t>(s)] = a.segment(s * len, len).mean();
  std::vector<int> idx(static_cast<std::size_t>(cfg.n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
    return means[static_cast<std::size_t>(x)] > means[static_cast<std::size_t>(y)];
  });
  idx.resize(static_cast<std::size_t>(cfg.r));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Keeps only the listed segments (sorted ascending) of a trial.
inline PruneResult prune_by_segments(const Trial& t, const std::vector<int>& segments, const PruneConfig& cfg) {
  const Eigen::Index T = t.n_samples();
  cfg.validate(T);
  const Eigen::Index len = cfg.segment_length(T);
  PruneResult out;
  out.kept_segments = segments;
  Matrix data(t.n_channels(), len * static_cast<Eigen::Index>(segments.size()));
  Eigen::Index at = 0;
  for (int s : segments) {
    const Eigen::Index start = s * len;
    out.kept_sample_ranges.emplace_back(start, start + len);
    data.middleCols(at, len) = t.data.middleCols(start, len);
    at += len;
  }
  out.pruned_trial = t.with_data(std::move(data));
  return out;
}

inline PruneResult prune_trial(const Trial& t, const Vector& a, const PruneConfig& cfg) {
  if (a.size() != t.n_samples()) {
    throw Error(ErrorCode::LengthMismatch, "attention vector length " + std::to_string(a.size()) +
                                               " differs from trial width " + std::to_string(t.n_samples()));
  }
  return prune_by_segments(t, select_segments(a, cfg), cfg);
}

/// Embedding, encoder and attention only.
inline AttentionOutput compute_attention(const ModelParams& p, const Matrix& x) {
  const auto enc = encode(p, embed(p, x));
  auto att = attend(p, enc.enc_hidden);
  AttentionOutput out;
  out.a = attention_vector(att.lambda);
  out.lambda = std::move(att.lambda);
  return out;
}

inline PruneResult extract_saliency(const ModelParams& p, const Trial& t, const PruneConfig& cfg) {
  cfg.validate(t.n_samples());
  if (t.n_channels() != p.cfg.n_c) {
    throw Error(ErrorCode::ShapeMismatch, "trial '" + t.trial_id + "' has " + std::to_string(t.n_channels()) +
                                              " channels, model expects " + std::to_string(p.cfg.n_c));
  }
  return prune_trial(t, compute_attention(p, t.data).a, cfg);
}

/// Attention vectors for every trial of a set.
inline std::vector<Vector> attention_vectors(const ModelParams& p, const TrialSet& set) {
  std::vector<Vector> out(set.size());
  parallel_for(set.size(), [&](std::size_t i) { out[i] = compute_attention(p, set[i].data).a; });
  return out;
}

/// Prunes each trial with its precomputed attention vector.
inline TrialSet prune_set(const TrialSet& set, const std::vector<Vector>& attention, const PruneConfig& cfg) {
  if (attention.size() != set.size()) {
    throw Error(ErrorCode::LengthMismatch, "one attention vector per trial required");
  }
  std::vector<Trial> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(prune_trial(set[i], attention[i], cfg).pruned_trial);
  return TrialSet(std::move(out));
}

}  // namespace sbci

#endif  // SALIENCY_BCI_SALIENCY_HPP
