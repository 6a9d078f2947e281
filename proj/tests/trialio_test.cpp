#include "saliency_bci/trialio.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

namespace sbci {
namespace {

using test::TempDir;
using test::write_file;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an sbci::Error";
  return ErrorCode::InvalidArgument;
}

constexpr const char* k3x4 = "1,2,3\n4,5,6\n7,8,9\n10,11,12\n";

TEST(LoadTrialset, TwoFilesOfThreeByFour) {
  TempDir dir;
  write_file(dir / "a.csv", k3x4);
  write_file(dir / "b.csv", "0.5,-1e-3,2\n0,0,0\n1,1,1\n-2,3.25,4\n");
  write_file(dir / "m.csv", "trial_id,subject,session,label,path\n"
                            "a,s1,train,left,a.csv\n"
                            "b,s1,test,,b.csv\n");
  const auto set = load_trialset(dir / "m.csv");
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set.n_channels(), 3);
  EXPECT_EQ(set[0].n_samples(), 4);
  EXPECT_EQ(set[0].data(2, 1), 6.0);  // channel 2, sample 1
  EXPECT_EQ(set[0].label, Label::Left);
  EXPECT_FALSE(set[1].label.has_value());
  EXPECT_EQ(set[1].session, Session::Test);
  EXPECT_EQ(set[1].data(1, 0), -1e-3);
  EXPECT_EQ(set.sample_rate_hz(), 250.0);
}

TEST(LoadTrialset, SampleRateComment) {
  TempDir dir;
  write_file(dir / "a.csv", k3x4);
  write_file(dir / "m.csv", "# sample_rate_hz = 128\ntrial_id,subject,session,label,path\na,s,train,right,a.csv\n");
  EXPECT_EQ(load_trialset(dir / "m.csv").sample_rate_hz(), 128.0);
}

TEST(LoadTrialset, MissingTrialFile) {
  TempDir dir;
  write_file(dir / "m.csv", "trial_id,subject,session,label,path\na,s,train,left,nope.csv\n");
  EXPECT_EQ(code_of([&] { load_trialset(dir / "m.csv"); }), ErrorCode::MissingFile);
  EXPECT_EQ(code_of([&] { load_trialset(dir / "absent.csv"); }), ErrorCode::MissingFile);
}

TEST(LoadTrialset, ShortRowIsMalformed) {
  TempDir dir;
  write_file(dir / "a.csv", k3x4);
  write_file(dir / "b.csv", "1,2,3\n4,5\n7,8,9\n");
  write_file(dir / "m.csv", "trial_id,subject,session,label,path\na,s,train,left,a.csv\nb,s,train,left,b.csv\n");
  try {
    load_trialset(dir / "m.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRow);
    EXPECT_NE(std::string(e.what()).find("b.csv:2"), std::string::npos) << e.what();
  }
}

TEST(LoadTrialset, ChannelCountMustAgree) {
  TempDir dir;
  write_file(dir / "a.csv", k3x4);
  write_file(dir / "b.csv", "1,2\n3,4\n");
  write_file(dir / "m.csv", "trial_id,subject,session,label,path\na,s,train,left,a.csv\nb,s,train,left,b.csv\n");
  EXPECT_EQ(code_of([&] { load_trialset(dir / "m.csv"); }), ErrorCode::InconsistentChannelCount);
}

TEST(LoadTrialset, NonFiniteSample) {
  TempDir dir;
  write_file(dir / "a.csv", "1,2,3\nnan,5,6\n");
  write_file(dir / "m.csv", "trial_id,subject,session,label,path\na,s,train,left,a.csv\n");
  EXPECT_EQ(code_of([&] { load_trialset(dir / "m.csv"); }), ErrorCode::NonFiniteSample);
}

TEST(LoadTrialset, BadManifestRows) {
  TempDir dir;
  write_file(dir / "a.csv", k3x4);
  write_file(dir / "m1.csv", "id,path\n");
  write_file(dir / "m2.csv", "trial_id,subject,session,label,path\na,s,train,left\n");
  write_file(dir / "m3.csv", "trial_id,subject,session,label,path\na,s,train,up,a.csv\n");
  for (const char* m : {"m1.csv", "m2.csv", "m3.csv"}) {
    EXPECT_EQ(code_of([&] { load_trialset(dir / m); }), ErrorCode::MalformedRow) << m;
  }
}

TEST(TrialSet, RejectsEmptyAndDuplicates) {
  EXPECT_EQ(code_of([] { TrialSet(std::vector<Trial>{}); }), ErrorCode::EmptySet);
  Trial t;
  t.data = Matrix::Ones(2, 3);
  t.trial_id = "x";
  EXPECT_EQ(code_of([&] { TrialSet({t, t}); }), ErrorCode::DuplicateId);
  TempDir dir;
  EXPECT_EQ(code_of([&] { save_trialset(TrialSet{}, dir.path()); }), ErrorCode::EmptySet);
}

TEST(SaveTrialset, RoundTripIsBitExact) {
  SynthSpec spec;
  spec.n_channels = 4;
  spec.n_samples = 60;
  spec.trials_per_class = 3;
  spec.intervals = {{10, 20}};
  spec.sample_rate_hz = 200.0;
  auto set = generate_synthetic(spec);
  std::vector<Trial> trials(set.begin(), set.end());
  trials[0].data(0, 0) = 1.0 / 3.0;
  trials[0].data(1, 0) = std::numeric_limits<double>::denorm_min();
  trials[0].data(2, 0) = -1.7976931348623157e308;
  trials[1].label.reset();
  trials[2].session = Session::Test;
  trials[3].trial_id = "odd/name with spaces";
  const TrialSet original(std::move(trials));

  TempDir dir;
  const auto manifest = save_trialset(original, dir / "out");
  const auto loaded = load_trialset(manifest);
  EXPECT_TRUE(loaded == original);
  EXPECT_EQ(loaded.sample_rate_hz(), 200.0);
}

TEST(Synthetic, DeterministicAndBalanced) {
  SynthSpec spec;
  spec.n_channels = 3;
  spec.n_samples = 100;
  spec.trials_per_class = 5;
  spec.intervals = {{20, 30}};
  spec.seed = 42;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_TRUE(a == b);
  int left = 0, right = 0;
  for (const auto& t : a) (*t.label == Label::Left ? left : right)++;
  EXPECT_EQ(left, 5);
  EXPECT_EQ(right, 5);
  spec.seed = 43;
  EXPECT_FALSE(generate_synthetic(spec) == a);
}

TEST(Synthetic, InvalidSpec) {
  SynthSpec spec;
  spec.n_samples = 100;
  spec.intervals = {{90, 20}};
  EXPECT_EQ(code_of([&] { generate_synthetic(spec); }), ErrorCode::InvalidSpec);
  spec.intervals = {{0, 10}};
  spec.trials_per_class = 0;
  EXPECT_EQ(code_of([&] { generate_synthetic(spec); }), ErrorCode::InvalidSpec);
}

TEST(Synthetic, MultipleIntervals) {
  SynthSpec spec;
  spec.n_channels = 2;
  spec.n_samples = 200;
  spec.trials_per_class = 20;
  spec.intervals = {{0, 50}, {150, 50}};
  spec.snr_db = 20.0;
  const auto set = generate_synthetic(spec);
  double inside = 0.0, outside = 0.0;
  for (const auto& t : set) {
    inside += t.data.leftCols(50).squaredNorm() + t.data.rightCols(50).squaredNorm();
    outside += t.data.middleCols(50, 100).squaredNorm();
  }
  EXPECT_GT(inside / outside, 50.0);  // 20 dB planted power in 100 of 200 samples
}

// Planted component isolated by subtracting the noise-only first trial (the
// generator draws a trial's noise before its sinusoid parameters).
TEST(Synthetic, VeryLowSnrPlantsNegligiblePower) {
  SynthSpec spec;
  spec.n_channels = 3;
  spec.n_samples = 256;
  spec.trials_per_class = 1;
  spec.intervals = {{0, 256}};
  spec.snr_db = -100.0;
  spec.seed = 7;
  const auto with = generate_synthetic(spec);
  spec.intervals.clear();
  const auto without = generate_synthetic(spec);
  double planted = 0.0, noise = 0.0;
  for (Eigen::Index c = 0; c < 3; ++c) {
    std::vector<double> p(256), n(256);
    for (Eigen::Index s = 0; s < 256; ++s) {
      p[static_cast<std::size_t>(s)] = with[0].data(c, s) - without[0].data(c, s);
      n[static_cast<std::size_t>(s)] = without[0].data(c, s);
    }
    for (double v : test::periodogram(p)) planted += v;
    for (double v : test::periodogram(n)) noise += v;
  }
  EXPECT_LT(planted / noise, 1e-6);
}

TEST(Synthetic, SpectrumPeaksInClassBand) {
  SynthSpec spec;
  spec.n_channels = 3;
  spec.n_samples = 250;
  spec.trials_per_class = 8;
  spec.intervals = {{0, 250}};
  spec.snr_db = 0.0;
  const auto set = generate_synthetic(spec);
  for (Label label : {Label::Left, Label::Right}) {
    std::vector<double> avg(126, 0.0);
    for (const auto& t : set) {
      if (t.label != label) continue;
      for (Eigen::Index c = 0; c < 3; ++c) {
        std::vector<double> x(250);
        for (Eigen::Index s = 0; s < 250; ++s) x[static_cast<std::size_t>(s)] = t.data(c, s);
        const auto p = test::periodogram(x);
        for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += p[k];
      }
    }
    const auto peak = static_cast<double>(std::max_element(avg.begin() + 1, avg.end()) - avg.begin());
    const double peak_hz = peak * 250.0 / 250.0;  // 1 Hz bins
    const auto [lo, hi] = spec.class_band_hz[label == Label::Left ? 0 : 1];
    EXPECT_GE(peak_hz, lo - 1.0) << to_string(label);
    EXPECT_LE(peak_hz, hi + 1.0) << to_string(label);
  }
}

}  // namespace
}  // namespace sbci
