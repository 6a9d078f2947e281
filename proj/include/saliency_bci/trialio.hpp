#ifndef SALIENCY_BCI_TRIALIO_HPP
#define SALIENCY_BCI_TRIALIO_HPP

// Trial data model, CSV trial/manifest formats and the synthetic generator.
//
// Trial file: headerless CSV, one time sample per row, one channel per column.
// Manifest:   optional "# sample_rate_hz = <fs>" comment line, then the header
//             trial_id,subject,session,label,path
//             with paths relative to the manifest's directory.

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "saliency_bci/common.hpp"

namespace sbci {

enum class Label { Left, Right };
enum class Session { Train, Test };

inline const char* to_string(Label l) { return l == Label::Left ? "left" : "right"; }
inline const char* to_string(Session s) { return s == Session::Train ? "train" : "test"; }

struct Trial {
  Matrix data;  // n_c x T, microvolts
  double sample_rate_hz = 250.0;
  std::optional<Label> label;
  std::string subject_id;
  std::string trial_id;
  Session session = Session::Train;

  Eigen::Index n_channels() const { return data.rows(); }
  Eigen::Index n_samples() const { return data.cols(); }

  /// Copy of this trial's metadata with new sample data.
  Trial with_data(Matrix new_data) const {
    Trial t = *this;
    t.data = std::move(new_data);
    return t;
  }
};

inline bool operator==(const Trial& a, const Trial& b) {
  return a.sample_rate_hz == b.sample_rate_hz && a.label == b.label &&
         a.subject_id == b.subject_id && a.trial_id == b.trial_id && a.session == b.session &&
         a.data.rows() == b.data.rows() && a.data.cols() == b.data.cols() &&
         a.data == b.data;
}

/// Ordered, validated collection of trials sharing channel count and rate.
class TrialSet {
 public:
  TrialSet() = default;

  explicit TrialSet(std::vector<Trial> trials) : trials_(std::move(trials)) {
    if (trials_.empty()) throw Error(ErrorCode::EmptySet, "trial set has no trials");
    n_channels_ = trials_.front().n_channels();
    sample_rate_hz_ = trials_.front().sample_rate_hz;
    std::set<std::string> ids;
    for (const auto& t : trials_) {
      if (t.n_channels() < 1 || t.n_samples() < 1) {
        throw Error(ErrorCode::ShapeMismatch, "trial '" + t.trial_id + "' is empty");
      }
      if (t.n_channels() != n_channels_) {
        throw Error(ErrorCode::InconsistentChannelCount,
                    "trial '" + t.trial_id + "' has " + std::to_string(t.n_channels()) +
                        " channels, expected " + std::to_string(n_channels_));
      }
      if (t.sample_rate_hz != sample_rate_hz_ || !(t.sample_rate_hz > 0.0)) {
        throw Error(ErrorCode::RateMismatch, "trial '" + t.trial_id + "' sample rate differs");
      }
      if (!t.data.allFinite()) {
        throw Error(ErrorCode::NonFiniteSample, "trial '" + t.trial_id + "' has non-finite samples");
      }
      if (!ids.insert(t.trial_id).second) {
        throw Error(ErrorCode::DuplicateId, "duplicate trial_id '" + t.trial_id + "'");
      }
    }
  }

  const std::vector<Trial>& trials() const { return trials_; }
  std::size_t size() const { return trials_.size(); }
  bool empty() const { return trials_.empty(); }
  const Trial& operator[](std::size_t i) const { return trials_[i]; }
  auto begin() const { return trials_.begin(); }
  auto end() const { return trials_.end(); }

  Eigen::Index n_channels() const { return n_channels_; }
  double sample_rate_hz() const { return sample_rate_hz_; }

  /// Common trial width, or nullopt when trials differ in length.
  std::optional<Eigen::Index> uniform_length() const {
    if (trials_.empty()) return std::nullopt;
    const auto T = trials_.front().n_samples();
    for (const auto& t : trials_) {
      if (t.n_samples() != T) return std::nullopt;
    }
    return T;
  }

  TrialSet filter_session(Session s) const {
    std::vector<Trial> out;
    for (const auto& t : trials_) {
      if (t.session == s) out.push_back(t);
    }
    return TrialSet(std::move(out));
  }

  friend bool operator==(const TrialSet& a, const TrialSet& b) { return a.trials_ == b.trials_; }

 private:
  std::vector<Trial> trials_;
  Eigen::Index n_channels_ = 0;
  double sample_rate_hz_ = 0.0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v,
                                       std::chars_format::general, 17);
  return std::string(buf.data(), ptr);
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Writes through a temporary sibling file and renames it into place.
inline void write_atomically(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + tmp.string() + "' for writing");
    out << contents;
    if (!out.flush()) throw Error(ErrorCode::IoError, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename into '" + path.string() + "': " + ec.message());
}

}  // namespace detail

/// Parses one trial CSV (T rows x n_c columns) into an n_c x T matrix.
inline Matrix read_trial_csv(const std::filesystem::path& path,
                             std::optional<Eigen::Index> expected_channels = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open trial file '" + path.string() + "'");
  std::vector<double> values;
  Eigen::Index n_c = -1;
  std::size_t rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    const auto width = static_cast<Eigen::Index>(fields.size());
    if (n_c < 0) n_c = width;
    if (width != n_c) {
      throw Error(ErrorCode::MalformedRow, detail::where(path, lineno) + ": expected " + std::to_string(n_c) +
                      " columns, found " + std::to_string(width));
    }
    for (const auto f : fields) {
      const auto v = detail::parse_double(f);
      if (!v) {
        throw Error(ErrorCode::MalformedRow,
                    detail::where(path, lineno) + ": cannot parse '" + std::string(f) + "'");
      }
      if (!std::isfinite(*v)) {
        throw Error(ErrorCode::NonFiniteSample, detail::where(path, lineno) + ": non-finite sample");
      }
      values.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) throw Error(ErrorCode::MalformedRow, path.string() + ": no samples");
  if (expected_channels && n_c != *expected_channels) {
    throw Error(ErrorCode::InconsistentChannelCount, path.string() + ": " + std::to_string(n_c) +
                                                         " channels, expected " + std::to_string(*expected_channels));
  }
  Matrix data(n_c, static_cast<Eigen::Index>(rows));
  for (std::size_t t = 0; t < rows; ++t) {
    for (Eigen::Index c = 0; c < n_c; ++c) data(c, static_cast<Eigen::Index>(t)) = values[t * n_c + c];
  }
  return data;
}

inline std::string trial_csv_string(const Matrix& data) {
  std::string out;
  out.reserve(static_cast<std::size_t>(data.size()) * 24);
  for (Eigen::Index t = 0; t < data.cols(); ++t) {
    for (Eigen::Index c = 0; c < data.rows(); ++c) {
      if (c) out += ',';
      out += detail::format_double(data(c, t));
    }
    out += '\n';
  }
  return out;
}

inline constexpr std::string_view kManifestHeader = "trial_id,subject,session,label,path";

/// Loads a manifest and every trial it references, in manifest order.
/// `default_rate_hz` applies when the manifest carries no sample-rate comment.
inline TrialSet load_trialset(const std::filesystem::path& manifest_path,
                              double default_rate_hz = 250.0) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open manifest '" + manifest_path.string() + "'");
  const auto base = manifest_path.parent_path();
  double rate = default_rate_hz;
  bool header_seen = false;
  std::optional<Eigen::Index> n_c;
  std::vector<Trial> trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    if (body.front() == '#') {
      auto kv = body.substr(1);
      const auto eq = kv.find('=');
      if (eq != std::string_view::npos && detail::trim(kv.substr(0, eq)) == "sample_rate_hz") {
        const auto v = detail::parse_double(detail::trim(kv.substr(eq + 1)));
        if (!v || !(*v > 0.0)) {
          throw Error(ErrorCode::MalformedRow, detail::where(manifest_path, lineno) + ": bad sample rate");
        }
        rate = *v;
      }
      continue;
    }
    if (!header_seen) {
      if (body != kManifestHeader) {
        throw Error(ErrorCode::MalformedRow, detail::where(manifest_path, lineno) +
                                                 ": expected header '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = detail::split_csv(body);
    if (f.size() != 5) {
      throw Error(ErrorCode::MalformedRow, detail::where(manifest_path, lineno) + ": expected 5 fields, found " +
                                               std::to_string(f.size()));
    }
    Trial t;
    t.trial_id = std::string(f[0]);
    t.subject_id = std::string(f[1]);
    const auto session = detail::lower(f[2]);
    if (session == "train" || session == "t") {
      t.session = Session::Train;
    } else if (session == "test" || session == "e") {
      t.session = Session::Test;
    } else {
      throw Error(ErrorCode::MalformedRow,
                  detail::where(manifest_path, lineno) + ": unknown session '" + std::string(f[2]) + "'");
    }
    const auto label = detail::lower(f[3]);
    if (label == "left") {
      t.label = Label::Left;
    } else if (label == "right") {
      t.label = Label::Right;
    } else if (!label.empty()) {
      throw Error(ErrorCode::MalformedRow,
                  detail::where(manifest_path, lineno) + ": unknown label '" + std::string(f[3]) + "'");
    }
    std::filesystem::path p{std::string(f[4])};
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) {
      throw Error(ErrorCode::MissingFile,
                  detail::where(manifest_path, lineno) + ": trial file '" + p.string() + "' not found");
    }
    t.data = read_trial_csv(p, n_c);
    n_c = t.data.rows();
    t.sample_rate_hz = rate;
    trials.push_back(std::move(t));
  }
  if (trials.empty()) throw Error(ErrorCode::EmptySet, "manifest '" + manifest_path.string() + "' lists no trials");
  return TrialSet(std::move(trials));
}

/// Writes one CSV per trial plus manifest.csv into `dir`; returns the manifest path.
inline std::filesystem::path save_trialset(const TrialSet& set, const std::filesystem::path& dir) {
  if (set.empty()) throw Error(ErrorCode::EmptySet, "refusing to save an empty trial set");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());

  std::set<std::string> used;
  std::ostringstream manifest;
  manifest << "# sample_rate_hz = " << detail::format_double(set.sample_rate_hz()) << '\n'
           << kManifestHeader << '\n';
  std::size_t index = 0;
  for (const auto& t : set) {
    if (t.trial_id.find(',') != std::string::npos || t.subject_id.find(',') != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "trial '" + t.trial_id + "' metadata contains a comma");
    }
    std::string stem;
    for (char c : t.trial_id) {
      stem += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    }
    if (stem.empty() || !used.insert(stem).second) {
      stem += "_" + std::to_string(index);
      used.insert(stem);
    }
    const auto file = stem + ".csv";
    detail::write_atomically(dir / file, trial_csv_string(t.data));
    manifest << t.trial_id << ',' << t.subject_id << ',' << to_string(t.session) << ','
             << (t.label ? to_string(*t.label) : "") << ',' << file << '\n';
    ++index;
  }
  const auto manifest_path = dir / "manifest.csv";
  detail::write_atomically(manifest_path, manifest.str());
  return manifest_path;
}

struct SalientInterval {
  Eigen::Index start = 0;
  Eigen::Index length = 0;
};

struct SynthSpec {
  Eigen::Index n_channels = 22;
  Eigen::Index n_samples = 1000;
  Eigen::Index trials_per_class = 36;
  std::vector<SalientInterval> intervals{{400, 400}};
  std::array<std::pair<double, double>, 2> class_band_hz{{{8.0, 12.0}, {16.0, 24.0}}};
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  double sample_rate_hz = 250.0;
  std::string subject_id = "synth";
  Session session = Session::Train;
};

/// Unit-RMS spatial pattern of the planted source for a class. Left weights
/// fall linearly across channels, Right weights rise.
inline Vector class_pattern(Label label, Eigen::Index n_channels) {
  Vector w(n_channels);
  for (Eigen::Index i = 0; i < n_channels; ++i) {
    w(i) = label == Label::Left ? static_cast<double>(n_channels - i) : static_cast<double>(i + 1);
  }
  return w / std::sqrt(w.squaredNorm() / static_cast<double>(n_channels));
}

inline void validate(const SynthSpec& spec) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidSpec, m); };
  if (spec.n_channels < 1 || spec.n_samples < 1) fail("n_channels and n_samples must be >= 1");
  if (spec.trials_per_class < 1) fail("trials_per_class must be >= 1");
  if (!(spec.sample_rate_hz > 0.0)) fail("sample_rate_hz must be positive");
  if (!std::isfinite(spec.snr_db)) fail("snr_db must be finite");
  for (const auto& iv : spec.intervals) {
    if (iv.start < 0 || iv.length < 0 || iv.start + iv.length > spec.n_samples) {
      fail("salient interval [" + std::to_string(iv.start) + ", " + std::to_string(iv.start + iv.length) +
           ") exceeds trial length " + std::to_string(spec.n_samples));
    }
  }
  for (const auto& [lo, hi] : spec.class_band_hz) {
    if (!(lo > 0.0) || hi < lo || !(hi < spec.sample_rate_hz / 2.0)) fail("class band must lie in (0, fs/2)");
  }
}

/// Gaussian noise everywhere plus, inside each salient interval, a
/// class-specific sinusoid projected through the class spatial pattern.
/// Mean planted power over channels equals 10^(snr_db/10) times the unit
/// noise power. Trials alternate Left, Right.
inline TrialSet generate_synthetic(const SynthSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double amplitude = std::sqrt(2.0 * std::pow(10.0, spec.snr_db / 10.0));
  const std::array<Label, 2> labels{Label::Left, Label::Right};
  std::array<Vector, 2> patterns{class_pattern(Label::Left, spec.n_channels),
                                 class_pattern(Label::Right, spec.n_channels)};

  std::vector<Trial> trials;
  trials.reserve(static_cast<std::size_t>(2 * spec.trials_per_class));
  for (Eigen::Index k = 0; k < spec.trials_per_class; ++k) {
    for (std::size_t cls = 0; cls < 2; ++cls) {
      Trial t;
      t.sample_rate_hz = spec.sample_rate_hz;
      t.label = labels[cls];
      t.subject_id = spec.subject_id;
      t.session = spec.session;
      t.trial_id = spec.subject_id + "_" + to_string(spec.session) + "_" + std::to_string(trials.size());
      t.data.resize(spec.n_channels, spec.n_samples);
      for (Eigen::Index s = 0; s < spec.n_samples; ++s) {
        for (Eigen::Index c = 0; c < spec.n_channels; ++c) t.data(c, s) = noise(rng);
      }
      const auto [lo, hi] = spec.class_band_hz[cls];
      for (const auto& iv : spec.intervals) {
        const double freq = lo + (hi - lo) * unit(rng);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        for (Eigen::Index s = iv.start; s < iv.start + iv.length; ++s) {
          const double v =
              amplitude * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(s) / spec.sample_rate_hz + phase);
          t.data.col(s) += v * patterns[cls];
        }
      }
      trials.push_back(std::move(t));
    }
  }
  return TrialSet(std::move(trials));
}

}  // namespace sbci

#endif  // SALIENCY_BCI_TRIALIO_HPP
