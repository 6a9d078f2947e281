#ifndef SALIENCY_BCI_PIPELINE_HPP
#define SALIENCY_BCI_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saliency_bci/attnet.hpp"
#include "saliency_bci/common.hpp"
#include "saliency_bci/cspclf.hpp"
#include "saliency_bci/saliency.hpp"
#include "saliency_bci/trialio.hpp"

namespace sbci {

/// Candidate segment lengths T/n and kept lengths l = r T/n.
struct TuneGrid {
  std::vector<Eigen::Index> segment_lengths;
  std::vector<Eigen::Index> kept_lengths;

  void validate(Eigen::Index T) const {
    if (segment_lengths.empty() || kept_lengths.empty()) throw Error(ErrorCode::GridInvalid, "grid is empty");
    for (auto s : segment_lengths) {
      if (s < 1 || T % s != 0) {
        throw Error(ErrorCode::GridInvalid, "segment length " + std::to_string(s) + " does not divide T=" + std::to_string(T));
      }
    }
    for (auto ell : kept_lengths) {
      const bool ok = ell >= 1 && ell <= T && std::any_of(segment_lengths.begin(), segment_lengths.end(),
                                                          [ell](Eigen::Index s) { return ell % s == 0; });
      if (!ok) {
        throw Error(ErrorCode::GridInvalid, "kept length " + std::to_string(ell) +
                                                " is not r*T/n for any listed segment length (T=" + std::to_string(T) + ")");
      }
    }
  }

  /// Every consistent (n, r), ordered by kept length then segment length.
  std::vector<PruneConfig> candidates(Eigen::Index T) const {
    validate(T);
    std::set<std::pair<Eigen::Index, Eigen::Index>> pairs;  // (ell, seg)
    for (auto ell : kept_lengths) {
      for (auto s : segment_lengths) {
        if (ell % s == 0) pairs.emplace(ell, s);
      }
    }
    std::vector<PruneConfig> out;
    for (const auto& [ell, s] : pairs) out.push_back({static_cast<int>(T / s), static_cast<int>(ell / s)});
    return out;
  }
};

/// At T = 1000: T/n in {25, 50, 100, 125, 200, 250}, l in {250, 350, 500,
/// 550, 750, 1000}. Other lengths scale the same fractions, keeping only
/// values that divide evenly.
inline TuneGrid default_grid(Eigen::Index T) {
  if (T == 1000) return {{25, 50, 100, 125, 200, 250}, {250, 350, 500, 550, 750, 1000}};
  TuneGrid g;
  for (int n : {40, 20, 10, 8, 5, 4}) {
    if (T % n == 0) g.segment_lengths.push_back(T / n);
  }
  if (g.segment_lengths.empty()) g.segment_lengths.push_back(T);
  for (double frac : {0.25, 0.35, 0.5, 0.55, 0.75, 1.0}) {
    const auto ell = static_cast<Eigen::Index>(std::llround(frac * static_cast<double>(T)));
    const bool ok = ell >= 1 && std::any_of(g.segment_lengths.begin(), g.segment_lengths.end(),
                                            [ell](Eigen::Index s) { return ell % s == 0; });
    if (ok && std::find(g.kept_lengths.begin(), g.kept_lengths.end(), ell) == g.kept_lengths.end()) {
      g.kept_lengths.push_back(ell);
    }
  }
  return g;
}

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t seed, const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (char c : s) mix(static_cast<unsigned char>(c));
  return h;
}

}  // namespace detail

/// Stratified fold index for every trial, a function of (seed, trial ids).
inline std::vector<int> stratified_folds(const TrialSet& set, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 folds");
  std::vector<int> fold(set.size(), -1);
  std::size_t offset = 0;
  for (Label label : {Label::Left, Label::Right}) {
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (!set[i].label) throw Error(ErrorCode::InvalidArgument, "trial '" + set[i].trial_id + "' is unlabelled");
      if (*set[i].label == label) keyed.emplace_back(detail::fnv1a(seed, set[i].trial_id), i);
    }
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : set[a.second].trial_id < set[b.second].trial_id;
    });
    for (std::size_t j = 0; j < keyed.size(); ++j) fold[keyed[j].second] = static_cast<int>((offset + j) % folds);
    offset += keyed.size();
  }
  return fold;
}

struct CvRow {
  int n = 0;
  int r = 0;
  Eigen::Index seg_len = 0;
  Eigen::Index ell = 0;
  double mean_accuracy = 0.0;
  std::vector<double> fold_accuracy;
};

struct TuneResult {
  PruneConfig best;
  std::vector<CvRow> table;
};

/// Highest mean accuracy; ties go to smaller l, then smaller T/n.
inline std::size_t choose_candidate(const std::vector<CvRow>& table) {
  if (table.empty()) throw Error(ErrorCode::GridInvalid, "no candidates evaluated");
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& a = table[i];
    const auto& b = table[best];
    if (a.mean_accuracy != b.mean_accuracy) {
      if (a.mean_accuracy > b.mean_accuracy) best = i;
    } else if (a.ell != b.ell) {
      if (a.ell < b.ell) best = i;
    } else if (a.seg_len < b.seg_len) {
      best = i;
    }
  }
  return best;
}

/// k-fold CV accuracy of CSP + LDA on one (already pruned) set.
inline std::vector<double> cross_validate(const TrialSet& set, const std::vector<int>& fold, int folds, int csp_pairs) {
  std::vector<double> acc;
  for (int f = 0; f < folds; ++f) {
    std::vector<Trial> tr, te;
    for (std::size_t i = 0; i < set.size(); ++i) (fold[i] == f ? te : tr).push_back(set[i]);
    if (te.empty()) continue;
    acc.push_back(evaluate(TrialSet(std::move(tr)), TrialSet(std::move(te)), csp_pairs).accuracy);
  }
  return acc;
}

/// Tunes (n, r) with a frozen saliency model whose attention vectors for
/// `train` are already computed.
inline TuneResult tune_rn(const TrialSet& train, const std::vector<Vector>& attention, const TuneGrid& grid, int folds,
                          std::uint64_t seed, int csp_pairs) {
  const auto T = train.uniform_length();
  if (!T) throw Error(ErrorCode::GridInvalid, "training trials differ in length");
  const auto fold = stratified_folds(train, folds, seed);
  const auto cands = grid.candidates(*T);
  TuneResult out;
  out.table.resize(cands.size());
  parallel_for(cands.size(), [&](std::size_t c) {
    const auto& cfg = cands[c];
    CvRow row;
    row.n = cfg.n;
    row.r = cfg.r;
    row.seg_len = cfg.segment_length(*T);
    row.ell = cfg.kept_length(*T);
    row.fold_accuracy = cross_validate(prune_set(train, attention, cfg), fold, folds, csp_pairs);
    double sum = 0.0;
    for (double a : row.fold_accuracy) sum += a;
    row.mean_accuracy = sum / static_cast<double>(row.fold_accuracy.size());
    out.table[c] = std::move(row);
  });
  const auto& best = out.table[choose_candidate(out.table)];
  out.best = {best.n, best.r};
  return out;
}

inline TuneResult tune_rn(const ModelParams& model, const TrialSet& train, const TuneGrid& grid, int folds,
                          std::uint64_t seed, int csp_pairs) {
  return tune_rn(train, attention_vectors(model, train), grid, folds, seed, csp_pairs);
}

struct ComparisonResult {
  std::string subject;
  AccuracyRecord unpruned;  // scenario 2
  AccuracyRecord pruned;    // scenario 1
  PruneConfig tuned;
  Eigen::Index trial_length = 0;
  std::vector<CvRow> cv_table;
  std::vector<double> loss_curve;
  ModelParams model;

  double pruned_length_ratio() const { return static_cast<double>(tuned.r) / static_cast<double>(tuned.n); }
  double improvement() const { return pruned.accuracy - unpruned.accuracy; }
};

struct ComparisonOptions {
  TuneGrid grid;  // empty = default_grid(T)
  int folds = 5;
  int csp_pairs = 3;
  std::uint64_t cv_seed = 0;
  std::function<void(int, double)> on_epoch;
};

/// Scenario 2 evaluates CSP + LDA on the raw trials; scenario 1 trains the
/// attention network on the (unlabelled) training trials, tunes (n, r) by
/// cross-validation, prunes both sets and evaluates again. n_c is taken from
/// the data.
inline ComparisonResult run_comparison(const TrialSet& train, const TrialSet& test, NetConfig net_cfg,
                                       const TrainConfig& train_cfg, const ComparisonOptions& opt) {
  const auto T = train.uniform_length();
  if (!T || test.uniform_length() != T) throw Error(ErrorCode::LengthMismatch, "train and test trials must share one length");
  ComparisonResult out;
  out.subject = train[0].subject_id;
  out.trial_length = *T;
  out.unpruned = evaluate(train, test, opt.csp_pairs);

  net_cfg.n_c = static_cast<int>(train.n_channels());
  auto trained = sbci::train(train, net_cfg, train_cfg, opt.on_epoch);
  out.model = std::move(trained.params);
  out.loss_curve = std::move(trained.loss_curve);

  const TuneGrid grid = opt.grid.segment_lengths.empty() ? default_grid(*T) : opt.grid;
  const auto train_att = attention_vectors(out.model, train);
  auto tuned = tune_rn(train, train_att, grid, opt.folds, opt.cv_seed, opt.csp_pairs);
  out.tuned = tuned.best;
  out.cv_table = std::move(tuned.table);
  out.pruned = evaluate(prune_set(train, train_att, out.tuned),
                        prune_set(test, attention_vectors(out.model, test), out.tuned), opt.csp_pairs);
  return out;
}

struct SweepRow {
  Eigen::Index ell = 0;
  Eigen::Index seg_len = 0;  // 0 marks the unpruned baseline
  double accuracy = 0.0;
};

/// Accuracy for every compatible (l, T/n) pair, preceded by the unpruned
/// baseline row.
inline std::vector<SweepRow> sweep_segment_lengths(const ModelParams& model, const TrialSet& train, const TrialSet& test,
                                                   const std::vector<Eigen::Index>& kept_lengths,
                                                   const std::vector<Eigen::Index>& segment_lengths, int csp_pairs) {
  const auto T = train.uniform_length();
  if (!T || test.uniform_length() != T) throw Error(ErrorCode::LengthMismatch, "train and test trials must share one length");
  for (auto s : segment_lengths) {
    if (s < 1 || *T % s != 0) {
      throw Error(ErrorCode::InconsistentPair, "segment length " + std::to_string(s) + " does not divide T=" + std::to_string(*T));
    }
  }
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (auto ell : kept_lengths) {
    if (ell < 1 || ell > *T) {
      throw Error(ErrorCode::InconsistentPair, "kept length " + std::to_string(ell) + " outside [1, " + std::to_string(*T) + "]");
    }
    bool any = false;
    for (auto s : segment_lengths) {
      if (ell % s == 0) {
        pairs.emplace_back(ell, s);
        any = true;
      }
    }
    if (!any) throw Error(ErrorCode::InconsistentPair, "no listed segment length divides kept length " + std::to_string(ell));
  }
  const auto train_att = attention_vectors(model, train);
  const auto test_att = attention_vectors(model, test);
  std::vector<SweepRow> rows(pairs.size() + 1);
  rows[0] = {*T, 0, evaluate(train, test, csp_pairs).accuracy};
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto [ell, s] = pairs[i];
    const PruneConfig cfg{static_cast<int>(*T / s), static_cast<int>(ell / s)};
    rows[i + 1] = {ell, s, evaluate(prune_set(train, train_att, cfg), prune_set(test, test_att, cfg), csp_pairs).accuracy};
  });
  return rows;
}

// ---- report files ---------------------------------------------------------

inline constexpr std::string_view kReportHeader = "subject,scenario,accuracy,n,r,ell_over_T";
inline constexpr std::string_view kSweepHeader = "ell,seg_len,accuracy";

struct ReportRow {
  std::string subject;
  std::string scenario;  // "unpruned" or "pruned"
  double accuracy = 0.0;
  int n = 1;
  int r = 1;
  double ell_over_T = 1.0;
};

inline std::vector<ReportRow> report_rows(const ComparisonResult& c) {
  return {{c.subject, "unpruned", c.unpruned.accuracy, 1, 1, 1.0},
          {c.subject, "pruned", c.pruned.accuracy, c.tuned.n, c.tuned.r, c.pruned_length_ratio()}};
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    out << r.subject << ',' << r.scenario << ',' << detail::format_double(r.accuracy) << ',' << r.n << ',' << r.r << ','
        << detail::format_double(r.ell_over_T) << '\n';
  }
  return out.str();
}

inline std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open report '" + path.string() + "'");
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    if (!header) {
      if (body != kReportHeader) throw Error(ErrorCode::MalformedRow, detail::where(path, lineno) + ": unexpected header");
      header = true;
      continue;
    }
    const auto f = detail::split_csv(body);
    const auto acc = f.size() == 6 ? detail::parse_double(f[2]) : std::nullopt;
    const auto n = f.size() == 6 ? detail::parse_double(f[3]) : std::nullopt;
    const auto r = f.size() == 6 ? detail::parse_double(f[4]) : std::nullopt;
    const auto ratio = f.size() == 6 ? detail::parse_double(f[5]) : std::nullopt;
    if (!acc || !n || !r || !ratio) throw Error(ErrorCode::MalformedRow, detail::where(path, lineno) + ": bad report row");
    rows.push_back({std::string(f[0]), std::string(f[1]), *acc, static_cast<int>(*n), static_cast<int>(*r), *ratio});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << kSweepHeader << '\n';
  for (const auto& r : rows) out << r.ell << ',' << r.seg_len << ',' << detail::format_double(r.accuracy) << '\n';
  return out.str();
}

inline std::string cv_table_csv(const std::vector<CvRow>& rows) {
  std::ostringstream out;
  out << "n,r,seg_len,ell,mean_accuracy\n";
  for (const auto& r : rows) {
    out << r.n << ',' << r.r << ',' << r.seg_len << ',' << r.ell << ',' << detail::format_double(r.mean_accuracy) << '\n';
  }
  return out.str();
}

struct SubjectSummary {
  std::string subject;
  double unpruned = 0.0;
  double pruned = 0.0;
  double ell_over_T = 1.0;
};

/// Pairs unpruned/pruned rows per subject, in first-seen order.
inline std::vector<SubjectSummary> summarize(const std::vector<ReportRow>& rows) {
  std::vector<SubjectSummary> out;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, fresh] = index.emplace(r.subject, out.size());
    if (fresh) out.push_back({r.subject});
    auto& s = out[it->second];
    if (r.scenario == "pruned") {
      s.pruned = r.accuracy;
      s.ell_over_T = r.ell_over_T;
    } else if (r.scenario == "unpruned") {
      s.unpruned = r.accuracy;
    } else {
      throw Error(ErrorCode::MalformedRow, "unknown scenario '" + r.scenario + "'");
    }
  }
  return out;
}

}  // namespace sbci

#endif  // SALIENCY_BCI_PIPELINE_HPP
