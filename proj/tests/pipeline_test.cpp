#include "saliency_bci/pipeline.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "test_util.hpp"

namespace sbci {
namespace {

TrialSet synth(int n_c, int T, int per_class, double snr_db, std::uint64_t seed, Session session = Session::Train) {
  SynthSpec spec;
  spec.n_channels = n_c;
  spec.n_samples = T;
  spec.trials_per_class = per_class;
  spec.intervals = {{T / 4, T / 2}};
  spec.snr_db = snr_db;
  spec.seed = seed;
  spec.session = session;
  return generate_synthetic(spec);
}

std::vector<Vector> random_attention(const TrialSet& set, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vector> out;
  for (const auto& t : set) {
    Vector a(t.n_samples());
    for (auto& v : a) v = u(rng);
    out.push_back(a / a.sum());
  }
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no sbci::Error thrown";
  return ErrorCode::InvalidArgument;
}

TEST(TuneGrid, CandidatesAndValidation) {
  const TuneGrid g{{25, 50, 100}, {250, 350, 1000}};
  const auto c = g.candidates(1000);
  // 250: 25, 50; 350: 25, 50; 1000: 25, 50, 100.
  ASSERT_EQ(c.size(), 7u);
  EXPECT_EQ(c.front().n, 40);
  EXPECT_EQ(c.front().r, 10);
  EXPECT_EQ(c.back().n, 10);
  EXPECT_EQ(c.back().r, 10);
  EXPECT_EQ(code_of([&] { TuneGrid{{30}, {300}}.validate(1000); }), ErrorCode::GridInvalid);
  EXPECT_EQ(code_of([&] { TuneGrid{{100}, {250}}.validate(1000); }), ErrorCode::GridInvalid);
  EXPECT_EQ(code_of([&] { TuneGrid{{100}, {}}.validate(1000); }), ErrorCode::GridInvalid);
}

TEST(TuneGrid, DefaultGrid) {
  const auto g = default_grid(1000);
  EXPECT_EQ(g.segment_lengths, (std::vector<Eigen::Index>{25, 50, 100, 125, 200, 250}));
  EXPECT_EQ(g.kept_lengths, (std::vector<Eigen::Index>{250, 350, 500, 550, 750, 1000}));
  EXPECT_NO_THROW(g.validate(1000));
  for (Eigen::Index T : {500, 200, 120, 97}) {
    const auto d = default_grid(T);
    EXPECT_NO_THROW(d.validate(T)) << T;
    EXPECT_EQ(d.kept_lengths.back(), T);
  }
}

TEST(StratifiedFolds, BalancedDeterministicAndOrderFree) {
  const auto set = synth(3, 20, 13, 0.0, 1);
  const auto f = stratified_folds(set, 5, 42);
  EXPECT_EQ(f, stratified_folds(set, 5, 42));
  std::map<int, std::array<int, 2>> counts;
  for (std::size_t i = 0; i < set.size(); ++i) {
    ASSERT_GE(f[i], 0);
    ASSERT_LT(f[i], 5);
    counts[f[i]][*set[i].label == Label::Left ? 0 : 1]++;
  }
  for (int c = 0; c < 2; ++c) {
    int lo = 1 << 30, hi = 0;
    for (int k = 0; k < 5; ++k) {
      lo = std::min(lo, counts[k][static_cast<std::size_t>(c)]);
      hi = std::max(hi, counts[k][static_cast<std::size_t>(c)]);
    }
    EXPECT_LE(hi - lo, 1);
  }
  int total_lo = 1 << 30, total_hi = 0;
  for (int k = 0; k < 5; ++k) {
    total_lo = std::min(total_lo, counts[k][0] + counts[k][1]);
    total_hi = std::max(total_hi, counts[k][0] + counts[k][1]);
  }
  EXPECT_LE(total_hi - total_lo, 1);

  std::vector<Trial> reversed(set.trials().rbegin(), set.trials().rend());
  const TrialSet rset(reversed);
  const auto rf = stratified_folds(rset, 5, 42);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(rf[set.size() - 1 - i], f[i]);
  EXPECT_NE(stratified_folds(set, 5, 43), f);
}

TEST(ChooseCandidate, TieBreaks) {
  std::vector<CvRow> t(3);
  t[0] = {8, 6, 125, 750, 0.8, {}};
  t[1] = {20, 11, 50, 550, 0.8, {}};
  t[2] = {40, 22, 25, 550, 0.8, {}};
  EXPECT_EQ(choose_candidate(t), 2u);  // smaller l, then smaller T/n
  t[0].mean_accuracy = 0.81;
  EXPECT_EQ(choose_candidate(t), 0u);
}

TEST(TuneRn, SingletonGridAndIdentityCandidate) {
  const auto set = synth(6, 40, 10, 0.0, 2);
  const auto att = random_attention(set, 3);
  const auto single = tune_rn(set, att, TuneGrid{{10}, {20}}, 5, 0, 3);
  EXPECT_EQ(single.best.n, 4);
  EXPECT_EQ(single.best.r, 2);
  ASSERT_EQ(single.table.size(), 1u);

  const auto full = tune_rn(set, att, TuneGrid{{10}, {40}}, 5, 0, 3);
  const auto fold = stratified_folds(set, 5, 0);
  const auto direct = cross_validate(set, fold, 5, 3);
  EXPECT_EQ(full.table[0].fold_accuracy, direct);
}

TEST(TuneRn, TableAccountsForEveryCandidate) {
  const auto set = synth(4, 40, 10, 0.0, 4);
  const auto att = random_attention(set, 5);
  const TuneGrid g{{5, 10, 20}, {10, 20, 30, 40}};
  const auto res = tune_rn(set, att, g, 3, 1, 2);
  EXPECT_EQ(res.table.size(), g.candidates(40).size());
  const auto& best = res.table[choose_candidate(res.table)];
  EXPECT_EQ(res.best.n, best.n);
  for (const auto& row : res.table) {
    EXPECT_EQ(row.ell, row.r * row.seg_len);
    EXPECT_EQ(row.fold_accuracy.size(), 3u);
    EXPECT_GE(row.mean_accuracy, 0.0);
    EXPECT_LE(row.mean_accuracy, 1.0);
  }
}

TEST(RunComparison, EndToEndSmall) {
  const auto train = synth(4, 40, 8, 10.0, 6);
  const auto test = synth(4, 40, 8, 10.0, 7, Session::Test);
  NetConfig net;
  TrainConfig tc;
  tc.epochs = 2;
  ComparisonOptions opt;
  opt.grid = TuneGrid{{10, 20}, {20, 40}};
  opt.folds = 3;
  opt.csp_pairs = 2;
  const auto res = run_comparison(train, test, net, tc, opt);
  EXPECT_EQ(res.model.cfg.n_c, 4);
  EXPECT_EQ(res.loss_curve.size(), 2u);
  EXPECT_EQ(res.trial_length, 40);
  EXPECT_DOUBLE_EQ(res.pruned_length_ratio(), static_cast<double>(res.tuned.r) / res.tuned.n);
  // Strong planted signal everywhere it matters: ceiling in both scenarios.
  EXPECT_EQ(res.unpruned.accuracy, 1.0);
  EXPECT_GE(res.pruned.accuracy, 0.0);
  const auto rows = report_rows(res);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].scenario, "unpruned");
  EXPECT_EQ(rows[1].scenario, "pruned");
  EXPECT_DOUBLE_EQ(rows[1].ell_over_T, static_cast<double>(rows[1].r) / rows[1].n);
}

TEST(RunComparison, IdentityGridReproducesUnpruned) {
  const auto train = synth(4, 40, 8, -5.0, 8);
  const auto test = synth(4, 40, 8, -5.0, 9, Session::Test);
  TrainConfig tc;
  tc.epochs = 1;
  ComparisonOptions opt;
  opt.grid = TuneGrid{{10}, {40}};
  opt.folds = 3;
  opt.csp_pairs = 2;
  const auto res = run_comparison(train, test, NetConfig{}, tc, opt);
  EXPECT_EQ(res.tuned.r, res.tuned.n);
  EXPECT_EQ(res.pruned.accuracy, res.unpruned.accuracy);
  EXPECT_EQ(res.pruned.confusion, res.unpruned.confusion);
}

TEST(Sweep, RowCountBaselineAndErrors) {
  const auto train = synth(4, 40, 8, 0.0, 10);
  const auto test = synth(4, 40, 8, 0.0, 11, Session::Test);
  NetConfig cfg;
  cfg.n_c = 4;
  const auto model = init_params(cfg, 1);
  const std::vector<Eigen::Index> kept{40, 30, 20, 10}, segs{5, 10, 20};
  const auto rows = sweep_segment_lengths(model, train, test, kept, segs, 2);
  // Baseline + (40: 3) + (30: 2) + (20: 3) + (10: 2).
  ASSERT_EQ(rows.size(), 11u);
  EXPECT_EQ(rows[0].seg_len, 0);
  for (const auto& r : rows) {
    if (r.ell == 40) EXPECT_EQ(r.accuracy, rows[0].accuracy);
  }
  EXPECT_EQ(code_of([&] { sweep_segment_lengths(model, train, test, {40}, {7}, 2); }), ErrorCode::InconsistentPair);
  EXPECT_EQ(code_of([&] { sweep_segment_lengths(model, train, test, {15}, {10, 20}, 2); }), ErrorCode::InconsistentPair);
  EXPECT_EQ(code_of([&] { sweep_segment_lengths(model, train, test, {50}, {10}, 2); }), ErrorCode::InconsistentPair);
}

TEST(Report, CsvRoundTripAndSummary) {
  const std::vector<ReportRow> rows{{"A01", "unpruned", 0.625, 1, 1, 1.0},
                                    {"A01", "pruned", 0.75, 20, 11, 0.55},
                                    {"A02", "unpruned", 1.0 / 3.0, 1, 1, 1.0},
                                    {"A02", "pruned", 0.5, 8, 6, 0.75}};
  const auto csv = report_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kReportHeader);
  test::TempDir dir;
  test::write_file(dir / "r.csv", csv);
  const auto back = read_report_csv(dir / "r.csv");
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[2].accuracy, 1.0 / 3.0);
  EXPECT_EQ(back[1].n, 20);
  const auto sum = summarize(back);
  ASSERT_EQ(sum.size(), 2u);
  EXPECT_EQ(sum[0].subject, "A01");
  EXPECT_EQ(sum[0].pruned, 0.75);
  EXPECT_EQ(sum[1].ell_over_T, 0.75);
  test::write_file(dir / "bad.csv", "a,b\n");
  EXPECT_EQ(code_of([&] { read_report_csv(dir / "bad.csv"); }), ErrorCode::MalformedRow);
}

}  // namespace
}  // namespace sbci
