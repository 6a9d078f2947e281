#ifndef SALIENCY_BCI_DSP_HPP
#define SALIENCY_BCI_DSP_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "saliency_bci/common.hpp"
#include "saliency_bci/trialio.hpp"

namespace sbci {

/// One second-order section, a0 normalized to 1:
/// H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  std::array<std::complex<double>, 2> poles() const {
    const std::complex<double> disc = std::sqrt(std::complex<double>(a1 * a1 - 4.0 * a2, 0.0));
    return {(-a1 + disc) / 2.0, (-a1 - disc) / 2.0};
  }
};

struct FilterDesign {
  int order = 0;
  double low_hz = 0.0;
  double high_hz = 0.0;
  double sample_rate_hz = 0.0;
};

struct IirFilter {
  std::vector<Biquad> sections;
  FilterDesign design;

  /// Complex response of the cascade (single pass) at frequency f_hz.
  std::complex<double> response(double f_hz) const {
    const double w = 2.0 * std::numbers::pi * f_hz / design.sample_rate_hz;
    const std::complex<double> zi = std::polar(1.0, -w);
    std::complex<double> h{1.0, 0.0};
    for (const auto& s : sections) {
      h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    }
    return h;
  }
};

inline constexpr double kPoleMargin = 1e-12;

/// Butterworth bandpass of the given prototype order (the cascade has order
/// 2*order), via pre-warped bilinear transform, factored into sections.
inline IirFilter design_bandpass(int order, double low_hz, double high_hz, double fs_hz) {
  if (order < 1) throw Error(ErrorCode::InvalidBand, "filter order must be >= 1");
  if (!(fs_hz > 0.0) || !(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs_hz / 2.0)) {
    throw Error(ErrorCode::InvalidBand, "need 0 < low < high < fs/2, got low=" + std::to_string(low_hz) +
                                            " high=" + std::to_string(high_hz) + " fs=" + std::to_string(fs_hz));
  }
  using C = std::complex<double>;
  const double pi = std::numbers::pi;
  const double fs2 = 2.0 * fs_hz;
  const double w_lo = fs2 * std::tan(pi * low_hz / fs_hz);
  const double w_hi = fs2 * std::tan(pi * high_hz / fs_hz);
  const double bw = w_hi - w_lo;
  const double w0 = std::sqrt(w_lo * w_hi);

  std::vector<C> digital;
  for (int k = 0; k < order; ++k) {
    const C proto = std::polar(1.0, pi * (2.0 * k + order + 1) / (2.0 * order));
    const C half = proto * bw / 2.0;
    const C root = std::sqrt(half * half - w0 * w0);
    for (const C s : {half + root, half - root}) digital.push_back((fs2 + s) / (fs2 - s));
  }

  // Conjugate pairs first (upper half-plane representative), then real poles two at a time.
  std::vector<C> complex_poles;
  std::vector<double> real_poles;
  for (const auto& p : digital) {
    if (std::abs(p.imag()) > 1e-10 * std::max(1.0, std::abs(p))) {
      if (p.imag() > 0.0) complex_poles.push_back(p);
    } else {
      real_poles.push_back(p.real());
    }
  }
  std::sort(real_poles.begin(), real_poles.end());

  IirFilter f;
  f.design = {order, low_hz, high_hz, fs_hz};
  for (const auto& p : complex_poles) {
    f.sections.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    f.sections.push_back({1.0, 0.0, -1.0, -(real_poles[i] + real_poles[i + 1]), real_poles[i] * real_poles[i + 1]});
  }
  if (f.sections.size() != static_cast<std::size_t>(order)) {
    throw Error(ErrorCode::UnstableDesign, "pole pairing produced " + std::to_string(f.sections.size()) +
                                               " sections for order " + std::to_string(order));
  }

  // Unit gain where the analog prototype has unit gain (maps to w0 exactly).
  const double center_hz = fs_hz / pi * std::atan(w0 / fs2);
  const double gain = std::abs(f.response(center_hz));
  const double per_section = std::pow(gain, -1.0 / order);
  for (auto& s : f.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
    for (const auto& p : s.poles()) {
      if (!(std::abs(p) < 1.0 - kPoleMargin)) {
        throw Error(ErrorCode::UnstableDesign, "pole magnitude " + std::to_string(std::abs(p)));
      }
    }
  }
  return f;
}

namespace detail {

/// Steady-state transposed direct-form II state for a unit step input.
inline std::array<double, 2> step_state(const Biquad& s) {
  const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  const double z2 = s.b2 - s.a2 * g;
  const double z1 = s.b1 - s.a1 * g + z2;
  return {z1, z2};
}

/// Runs the cascade in place with initial states scaled by the first sample.
inline void sos_filter_inplace(const std::vector<Biquad>& sections, std::vector<double>& x) {
  if (x.empty()) return;
  double scale = x.front();
  for (const auto& s : sections) {
    auto [z1, z2] = step_state(s);
    z1 *= scale;
    z2 *= scale;
    for (auto& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    scale *= (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  }
}

}  // namespace detail

/// Forward-backward (zero-phase) filtering of one channel with odd
/// reflection padding of 6 samples per section at each end.
inline std::vector<double> filtfilt(const IirFilter& f, const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t pad = std::min<std::size_t>(6 * f.sections.size(), n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);

  detail::sos_filter_inplace(f.sections, ext);
  std::reverse(ext.begin(), ext.end());
  detail::sos_filter_inplace(f.sections, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

inline Trial filter_trial(const IirFilter& f, const Trial& t) {
  if (t.sample_rate_hz != f.design.sample_rate_hz) {
    throw Error(ErrorCode::RateMismatch, "trial '" + t.trial_id + "' sampled at " + std::to_string(t.sample_rate_hz) +
                                             " Hz, filter designed for " + std::to_string(f.design.sample_rate_hz) + " Hz");
  }
  Matrix out(t.data.rows(), t.data.cols());
  std::vector<double> channel(static_cast<std::size_t>(t.data.cols()));
  for (Eigen::Index c = 0; c < t.data.rows(); ++c) {
    for (Eigen::Index s = 0; s < t.data.cols(); ++s) channel[static_cast<std::size_t>(s)] = t.data(c, s);
    const auto y = filtfilt(f, channel);
    for (Eigen::Index s = 0; s < t.data.cols(); ++s) out(c, s) = y[static_cast<std::size_t>(s)];
  }
  return t.with_data(std::move(out));
}

inline TrialSet filter_trialset(const IirFilter& f, const TrialSet& set) {
  std::vector<Trial> out(set.size());
  parallel_for(set.size(), [&](std::size_t i) { out[i] = filter_trial(f, set[i]); });
  return TrialSet(std::move(out));
}

}  // namespace sbci

#endif  // SALIENCY_BCI_DSP_HPP
