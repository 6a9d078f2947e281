#ifndef SALIENCY_BCI_COMMON_HPP
#define SALIENCY_BCI_COMMON_HPP

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace sbci {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  MissingFile,
  MalformedRow,
  NonFiniteSample,
  InconsistentChannelCount,
  IoError,
  EmptySet,
  DuplicateId,
  InvalidSpec,
  InvalidBand,
  UnstableDesign,
  RateMismatch,
  ShapeMismatch,
  NonFiniteActivation,
  NotRowStochastic,
  IndivisibleLength,
  LengthMismatch,
  NoTrialsForLabel,
  SingularComposite,
  ZeroVariance,
  DegenerateFit,
  GridInvalid,
  InconsistentPair,
  InvalidArgument,
  ModelFormat,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::NonFiniteSample: return "NonFiniteSample";
    case ErrorCode::InconsistentChannelCount: return "InconsistentChannelCount";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidBand: return "InvalidBand";
    case ErrorCode::UnstableDesign: return "UnstableDesign";
    case ErrorCode::RateMismatch: return "RateMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NotRowStochastic: return "NotRowStochastic";
    case ErrorCode::IndivisibleLength: return "IndivisibleLength";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NoTrialsForLabel: return "NoTrialsForLabel";
    case ErrorCode::SingularComposite: return "SingularComposite";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::GridInvalid: return "GridInvalid";
    case ErrorCode::InconsistentPair: return "InconsistentPair";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ModelFormat: return "ModelFormat";
  }
  return "Unknown";
}

/// Errors that indicate a numerical failure rather than bad input data.
inline bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnstableDesign:
    case ErrorCode::NonFiniteActivation:
    case ErrorCode::SingularComposite:
    case ErrorCode::ZeroVariance:
    case ErrorCode::DegenerateFit:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Worker count from SALIENCY_BCI_THREADS (0 or unset = hardware concurrency).
inline std::size_t thread_count() {
  std::size_t n = 0;
  if (const char* env = std::getenv("SALIENCY_BCI_THREADS")) {
    n = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Runs fn(i) for i in [0, n). Work is split into contiguous blocks; callers
/// write results into per-index slots so any reduction stays ordered.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t end = std::min(n, (w + 1) * chunk);
        for (std::size_t i = w * chunk; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sbci

#endif  // SALIENCY_BCI_COMMON_HPP
