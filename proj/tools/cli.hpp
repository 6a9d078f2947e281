#ifndef SALIENCY_BCI_TOOLS_CLI_HPP
#define SALIENCY_BCI_TOOLS_CLI_HPP

// saliency_bci command-line driver. Each subcommand is its own CLI11 app so
// that `--config FILE` keys are exactly the flag names.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 numerical failure.

#include <iostream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "saliency_bci/attnet.hpp"
#include "saliency_bci/cspclf.hpp"
#include "saliency_bci/dsp.hpp"
#include "saliency_bci/pipeline.hpp"
#include "saliency_bci/saliency.hpp"
#include "saliency_bci/trialio.hpp"

namespace sbci::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct FilterOptions {
  double low = 4.0;
  double high = 40.0;
  int order = 5;
};

struct GridOptions {
  std::vector<Eigen::Index> segment_lengths;
  std::vector<Eigen::Index> kept_lengths;
};

struct SplitOptions {
  std::string in;
  std::string train;
  std::string test;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  double fs = 250.0;
};

inline void add_config(CLI::App& app) {
  app.set_help_flag("--help", "Print this help message and exit");  // -h would clash with --h
  app.set_config("--config", "", "Read `flag = value` lines from this file (flags on the command line win)");
  app.allow_config_extras(false);
  app.footer("Config-file keys are the long flag names above, e.g. `epochs = 300`.");
}

inline void add_fs(CLI::App& app, Context& ctx) {
  app.add_option("--fs", ctx.fs, "Sample rate for manifests without a sample_rate_hz comment")->capture_default_str();
}

inline void add_net_options(CLI::App& app, NetConfig& c) {
  app.add_option("--m", c.m, "Embedding kernels")->capture_default_str();
  app.add_option("--d", c.d, "Embedding kernel width (samples)")->capture_default_str();
  app.add_option("--h", c.h, "LSTM hidden size")->capture_default_str();
  app.add_option("--nk", c.n_k, "Query/key dimension")->capture_default_str();
  app.add_option("--nv", c.n_v, "Value dimension")->capture_default_str();
  app.add_option("--p1", c.p1, "Fraction of time samples masked during training")->capture_default_str();
  app.add_option("--p2", c.p2, "Fraction of channels zeroed at a masked sample")->capture_default_str();
  app.add_option("--dense", c.dense_hidden, "Dense hidden layer widths")->delimiter(',')->capture_default_str();
}

inline void add_train_options(CLI::App& app, TrainConfig& c, std::string& optimizer) {
  app.add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  app.add_option("--lr", c.learning_rate, "Learning rate")->capture_default_str();
  app.add_option("--batch", c.batch_size, "Mini-batch size")->capture_default_str();
  app.add_option("--seed", c.seed, "Seed for initialization, shuffling and masks")->capture_default_str();
  app.add_option("--optimizer", optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  app.add_option("--beta1", c.moment_decays.first, "First-moment decay")->capture_default_str();
  app.add_option("--beta2", c.moment_decays.second, "Second-moment decay")->capture_default_str();
  app.add_option("--eps-hat", c.epsilon_hat, "Adam denominator epsilon")->capture_default_str();
}

inline void add_filter_options(CLI::App& app, FilterOptions& f) {
  app.add_option("--low", f.low, "Bandpass low cutoff (Hz)")->capture_default_str();
  app.add_option("--high", f.high, "Bandpass high cutoff (Hz)")->capture_default_str();
  app.add_option("--order", f.order, "Butterworth prototype order")->capture_default_str();
}

inline void add_grid_options(CLI::App& app, GridOptions& g) {
  app.add_option("--seg-lengths", g.segment_lengths, "Candidate segment lengths T/n (default: built-in grid)")
      ->delimiter(',');
  app.add_option("--kept-lengths", g.kept_lengths, "Candidate kept lengths r*T/n (default: built-in grid)")
      ->delimiter(',');
}

inline void add_split_options(CLI::App& app, SplitOptions& s) {
  app.add_option("--in", s.in, "Manifest split by its session column");
  app.add_option("--train", s.train, "Training manifest (with --test, instead of --in)");
  app.add_option("--test", s.test, "Test manifest (with --train, instead of --in)");
}

inline std::pair<TrialSet, TrialSet> load_split(const SplitOptions& s, const Context& ctx) {
  if (!s.in.empty() && s.train.empty() && s.test.empty()) {
    const auto all = load_trialset(s.in, ctx.fs);
    return {all.filter_session(Session::Train), all.filter_session(Session::Test)};
  }
  if (s.in.empty() && !s.train.empty() && !s.test.empty()) {
    return {load_trialset(s.train, ctx.fs), load_trialset(s.test, ctx.fs)};
  }
  throw CLI::ValidationError("--in", "give either --in or both --train and --test");
}

inline TuneGrid make_grid(const GridOptions& g, Eigen::Index T) {
  TuneGrid grid = default_grid(T);
  if (!g.segment_lengths.empty()) grid.segment_lengths = g.segment_lengths;
  if (!g.kept_lengths.empty()) grid.kept_lengths = g.kept_lengths;
  return grid;
}

inline Optimizer parse_optimizer(const std::string& s) {
  return s == "sgd" ? Optimizer::PlainSgd : Optimizer::AdaptiveMoments;
}

inline std::string join(const std::vector<Eigen::Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string accuracy_csv(const AccuracyRecord& r) {
  std::ostringstream out;
  out << "accuracy,left_accuracy,right_accuracy,n_test,left_as_left,left_as_right,right_as_left,right_as_right\n"
      << detail::format_double(r.accuracy) << ',' << detail::format_double(r.per_class[0]) << ','
      << detail::format_double(r.per_class[1]) << ',' << r.n_test << ',' << r.confusion[0][0] << ','
      << r.confusion[0][1] << ',' << r.confusion[1][0] << ',' << r.confusion[1][1] << '\n';
  return out.str();
}

inline std::vector<std::string> subjects_of(const TrialSet& set) {
  std::vector<std::string> out;
  for (const auto& t : set) {
    if (std::find(out.begin(), out.end(), t.subject_id) == out.end()) out.push_back(t.subject_id);
  }
  return out;
}

inline TrialSet subject_subset(const TrialSet& set, const std::string& subject) {
  std::vector<Trial> out;
  for (const auto& t : set) {
    if (t.subject_id == subject) out.push_back(t);
  }
  return TrialSet(std::move(out));
}

/// Thrown after CLI11 has printed help or a usage error.
struct ParseExit {
  int code;
};

inline void parse(CLI::App& app, std::vector<std::string> args, Context& ctx) {
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, ctx.out, ctx.err);
    throw ParseExit{rc == 0 ? kOk : kUsage};
  }
}

inline void log_config(const CLI::App& app, const Context& ctx) {
  ctx.err << "# " << app.get_name() << " resolved configuration\n" << app.config_to_str(true, false);
}

// ---- subcommands ------------------------------------------------------------

inline int cmd_synth(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Generate a synthetic trial set with planted salient intervals", "synth"};
  add_config(app);
  SynthSpec spec;
  std::string out_dir, session = "train";
  std::vector<std::string> intervals{"400:400"};
  std::vector<double> band_left{8.0, 12.0}, band_right{16.0, 24.0};
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--channels", spec.n_channels, "Channels")->capture_default_str();
  app.add_option("--samples", spec.n_samples, "Samples per trial")->capture_default_str();
  app.add_option("--trials-per-class", spec.trials_per_class, "Trials per class")->capture_default_str();
  app.add_option("--interval", intervals, "Planted interval start:length (repeatable)")->capture_default_str();
  app.add_option("--snr-db", spec.snr_db, "Planted-to-noise power ratio (dB)")->capture_default_str();
  app.add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  app.add_option("--fs", spec.sample_rate_hz, "Sample rate (Hz)")->capture_default_str();
  app.add_option("--subject", spec.subject_id, "Subject id")->capture_default_str();
  app.add_option("--session", session, "train, test, or both (test uses seed + 1)")
      ->check(CLI::IsMember({"train", "test", "both"}))
      ->capture_default_str();
  app.add_option("--band-left", band_left, "Left-class band lo,hi (Hz)")->delimiter(',')->expected(2)->capture_default_str();
  app.add_option("--band-right", band_right, "Right-class band lo,hi (Hz)")->delimiter(',')->expected(2)->capture_default_str();
  parse(app, std::move(args), ctx);
  log_config(app, ctx);

  spec.intervals.clear();
  for (const auto& iv : intervals) {
    const auto colon = iv.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--interval", "expected start:length, got '" + iv + "'");
    try {
      spec.intervals.push_back({std::stol(iv.substr(0, colon)), std::stol(iv.substr(colon + 1))});
    } catch (const std::exception&) {
      throw CLI::ValidationError("--interval", "expected start:length, got '" + iv + "'");
    }
  }
  spec.class_band_hz = {{{band_left[0], band_left[1]}, {band_right[0], band_right[1]}}};

  std::vector<Trial> trials;
  auto append = [&](Session s, std::uint64_t seed) {
    SynthSpec one = spec;
    one.session = s;
    one.seed = seed;
    for (const auto& t : generate_synthetic(one)) trials.push_back(t);
  };
  if (session != "test") append(Session::Train, spec.seed);
  if (session != "train") append(Session::Test, spec.seed + 1);
  const auto manifest = save_trialset(TrialSet(std::move(trials)), out_dir);
  ctx.out << manifest.string() << '\n';
  return kOk;
}

inline int cmd_filter(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Zero-phase Butterworth bandpass filtering of every trial", "filter"};
  add_config(app);
  add_fs(app, ctx);
  FilterOptions f;
  std::string in, out_dir;
  app.add_option("--in", in, "Input manifest")->required();
  app.add_option("--out", out_dir, "Output directory")->required();
  add_filter_options(app, f);
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  const auto set = load_trialset(in, ctx.fs);
  const auto filt = design_bandpass(f.order, f.low, f.high, set.sample_rate_hz());
  ctx.out << save_trialset(filter_trialset(filt, set), out_dir).string() << '\n';
  return kOk;
}

inline int cmd_train(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Train the attention autoencoder on (unlabelled) trials", "train"};
  add_config(app);
  add_fs(app, ctx);
  NetConfig net;
  TrainConfig tc;
  std::string optimizer = "adam", in, model_out, loss_out, session = "all";
  app.add_option("--in", in, "Training manifest")->required();
  app.add_option("--model-out", model_out, "Model file to write")->required();
  app.add_option("--loss-out", loss_out, "Optional per-epoch loss CSV");
  app.add_option("--session", session, "Use only this session: all, train, test")
      ->check(CLI::IsMember({"all", "train", "test"}))
      ->capture_default_str();
  add_net_options(app, net);
  add_train_options(app, tc, optimizer);
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  tc.optimizer = parse_optimizer(optimizer);
  auto set = load_trialset(in, ctx.fs);
  if (session != "all") set = set.filter_session(session == "train" ? Session::Train : Session::Test);
  net.n_c = static_cast<int>(set.n_channels());
  const auto res = train(set, net, tc, [&](int e, double l) { ctx.err << "epoch " << e << " loss " << l << '\n'; });
  save_model(res.params, model_out);
  if (!loss_out.empty()) {
    std::ostringstream csv;
    csv << "epoch,loss\n";
    for (std::size_t e = 0; e < res.loss_curve.size(); ++e) csv << e + 1 << ',' << detail::format_double(res.loss_curve[e]) << '\n';
    detail::write_atomically(loss_out, csv.str());
  }
  ctx.out << "final_loss " << res.loss_curve.back() << '\n';
  return kOk;
}

inline int cmd_gradcheck(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Compare analytic gradients with central finite differences", "gradcheck"};
  add_config(app);
  NetConfig net;
  net.n_c = 3;
  std::uint64_t seed = 0;
  int samples = 12;
  double eps = 1e-5, tol = 1e-4;
  app.add_option("--seed", seed, "Seed for parameters, input and mask")->capture_default_str();
  app.add_option("--channels", net.n_c, "Channels")->capture_default_str();
  app.add_option("--samples", samples, "Samples")->capture_default_str();
  app.add_option("--eps", eps, "Finite-difference step")->capture_default_str();
  app.add_option("--tol", tol, "Relative error tolerance (absolute floor 1e-8)")->capture_default_str();
  add_net_options(app, net);
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  if (samples < 1) throw CLI::ValidationError("--samples", "must be >= 1");
  const auto params = init_params(net, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(net.n_c, samples);
  for (auto& v : x.reshaped()) v = gauss(rng);
  const Matrix x_tilde = mask_input(x, net.p1, net.p2, rng);
  const auto analytic = backward(params, forward(params, x_tilde), x);
  const auto numeric = finite_difference_gradient(params, x_tilde, x, eps);
  const auto cmp = compare_gradients(analytic, numeric, tol, 1e-8);
  ctx.out << "parameters " << params.parameter_count() << '\n'
          << "max_relative_error " << cmp.max_error << '\n'
          << "worst " << cmp.worst_tensor << '[' << cmp.worst_index << "]\n";
  return cmp.max_error < tol ? kOk : kNumerical;
}

inline int cmd_attend(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Write the attention vector of every trial", "attend"};
  add_config(app);
  add_fs(app, ctx);
  std::string in, model, out;
  app.add_option("--in", in, "Manifest")->required();
  app.add_option("--model", model, "Model file")->required();
  app.add_option("--out", out, "Output CSV: trial_id then T attention values per row")->required();
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  const auto params = load_model(model);
  const auto set = load_trialset(in, ctx.fs);
  const auto att = attention_vectors(params, set);
  std::string csv;
  for (std::size_t i = 0; i < set.size(); ++i) {
    csv += set[i].trial_id;
    for (Eigen::Index t = 0; t < att[i].size(); ++t) csv += "," + detail::format_double(att[i](t));
    csv += '\n';
  }
  detail::write_atomically(out, csv);
  return kOk;
}

inline int cmd_prune(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Keep the r most attended of n equal segments of every trial", "prune"};
  add_config(app);
  add_fs(app, ctx);
  std::string in, model, out_dir;
  PruneConfig cfg;
  app.add_option("--in", in, "Manifest")->required();
  app.add_option("--model", model, "Model file")->required();
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--n", cfg.n, "Segment count")->required();
  app.add_option("--r", cfg.r, "Kept segments")->required();
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  const auto params = load_model(model);
  const auto set = load_trialset(in, ctx.fs);
  ctx.out << save_trialset(prune_set(set, attention_vectors(params, set), cfg), out_dir).string() << '\n';
  return kOk;
}

inline int cmd_tune(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Cross-validate (n, r) with a frozen saliency model", "tune"};
  add_config(app);
  add_fs(app, ctx);
  std::string in, model, out;
  GridOptions g;
  int folds = 5, pairs = 3;
  std::uint64_t cv_seed = 0;
  app.add_option("--in", in, "Labelled training manifest")->required();
  app.add_option("--model", model, "Model file")->required();
  app.add_option("--out", out, "Optional CV table CSV");
  app.add_option("--folds", folds, "Cross-validation folds")->capture_default_str();
  app.add_option("--csp-pairs", pairs, "CSP filter pairs")->capture_default_str();
  app.add_option("--cv-seed", cv_seed, "Fold assignment seed")->capture_default_str();
  add_grid_options(app, g);
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  const auto params = load_model(model);
  const auto set = load_trialset(in, ctx.fs);
  const auto T = set.uniform_length();
  if (!T) throw Error(ErrorCode::LengthMismatch, "trials differ in length");
  const auto res = tune_rn(params, set, make_grid(g, *T), folds, cv_seed, pairs);
  if (!out.empty()) detail::write_atomically(out, cv_table_csv(res.table));
  ctx.out << "n " << res.best.n << "\nr " << res.best.r << "\nell_over_T "
          << static_cast<double>(res.best.r) / res.best.n << '\n';
  return kOk;
}

inline int cmd_eval(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Fit CSP + LDA on the training trials and score the test trials", "eval"};
  add_config(app);
  add_fs(app, ctx);
  SplitOptions s;
  std::string out;
  int pairs = 3;
  add_split_options(app, s);
  app.add_option("--csp-pairs", pairs, "CSP filter pairs")->capture_default_str();
  app.add_option("--out", out, "Optional accuracy CSV");
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  const auto [tr, te] = load_split(s, ctx);
  const auto rec = evaluate(tr, te, pairs);
  if (!out.empty()) detail::write_atomically(out, accuracy_csv(rec));
  ctx.out << accuracy_csv(rec);
  return kOk;
}

inline int cmd_compare(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Per-subject CSP + LDA accuracy with and without saliency pruning", "compare"};
  add_config(app);
  add_fs(app, ctx);
  SplitOptions s;
  FilterOptions f;
  NetConfig net;
  TrainConfig tc;
  GridOptions g;
  std::string optimizer = "adam", out, cv_out, model_out, sweep_out;
  bool no_filter = false;
  int folds = 5, pairs = 3;
  std::uint64_t cv_seed = 0;
  add_split_options(app, s);
  app.add_option("--out", out, "Report CSV")->required();
  app.add_option("--cv-out", cv_out, "Optional CV table CSV (all subjects)");
  app.add_option("--model-out", model_out, "Optional model file prefix (one per subject)");
  app.add_option("--sweep-out", sweep_out, "Optional segment-length sweep CSV per subject (prefix)");
  app.add_flag("--no-filter", no_filter, "Skip bandpass filtering (data already filtered)");
  app.add_option("--folds", folds, "Cross-validation folds")->capture_default_str();
  app.add_option("--csp-pairs", pairs, "CSP filter pairs")->capture_default_str();
  app.add_option("--cv-seed", cv_seed, "Fold assignment seed")->capture_default_str();
  add_filter_options(app, f);
  add_net_options(app, net);
  add_train_options(app, tc, optimizer);
  add_grid_options(app, g);
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  tc.optimizer = parse_optimizer(optimizer);

  auto [train_all, test_all] = load_split(s, ctx);
  if (!no_filter) {
    const auto filt = design_bandpass(f.order, f.low, f.high, train_all.sample_rate_hz());
    train_all = filter_trialset(filt, train_all);
    test_all = filter_trialset(filt, test_all);
  }
  std::vector<ReportRow> rows;
  std::string cv_csv = "subject,n,r,seg_len,ell,mean_accuracy\n";
  for (const auto& subject : subjects_of(train_all)) {
    const auto tr = subject_subset(train_all, subject);
    const auto te = subject_subset(test_all, subject);
    const auto T = tr.uniform_length();
    if (!T) throw Error(ErrorCode::LengthMismatch, "subject " + subject + ": trials differ in length");
    ComparisonOptions opt;
    opt.grid = make_grid(g, *T);
    opt.folds = folds;
    opt.csp_pairs = pairs;
    opt.cv_seed = cv_seed;
    opt.on_epoch = [&](int e, double l) {
      if (e == 1 || e % 10 == 0 || e == tc.epochs) ctx.err << subject << " epoch " << e << " loss " << l << '\n';
    };
    const auto res = run_comparison(tr, te, net, tc, opt);
    for (const auto& r : report_rows(res)) rows.push_back(r);
    for (const auto& c : res.cv_table) {
      cv_csv += subject + "," + std::to_string(c.n) + "," + std::to_string(c.r) + "," + std::to_string(c.seg_len) + "," +
                std::to_string(c.ell) + "," + detail::format_double(c.mean_accuracy) + "\n";
    }
    if (!model_out.empty()) save_model(res.model, model_out + subject + ".model");
    if (!sweep_out.empty()) {
      const auto sw = sweep_segment_lengths(res.model, tr, te, opt.grid.kept_lengths, opt.grid.segment_lengths, pairs);
      detail::write_atomically(sweep_out + subject + ".csv", sweep_csv(sw));
    }
    ctx.out << subject << " unpruned " << res.unpruned.accuracy << " pruned " << res.pruned.accuracy << " n "
            << res.tuned.n << " r " << res.tuned.r << " ell_over_T " << res.pruned_length_ratio() << '\n';
  }
  detail::write_atomically(out, report_csv(rows));
  if (!cv_out.empty()) detail::write_atomically(cv_out, cv_csv);
  return kOk;
}

inline int cmd_sweep(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Accuracy versus segment length T/n for fixed kept lengths", "sweep"};
  add_config(app);
  add_fs(app, ctx);
  SplitOptions s;
  GridOptions g;
  std::string model, out;
  int pairs = 3;
  add_split_options(app, s);
  app.add_option("--model", model, "Model file")->required();
  app.add_option("--out", out, "Sweep CSV (ell,seg_len,accuracy; seg_len 0 = unpruned)")->required();
  app.add_option("--csp-pairs", pairs, "CSP filter pairs")->capture_default_str();
  add_grid_options(app, g);
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  const auto params = load_model(model);
  const auto [tr, te] = load_split(s, ctx);
  const auto T = tr.uniform_length();
  if (!T) throw Error(ErrorCode::LengthMismatch, "trials differ in length");
  auto grid = make_grid(g, *T);
  if (g.kept_lengths.empty()) {
    // Kept lengths 750, 550, 350, 250 at T = 1000, scaled for other lengths.
    grid.kept_lengths.clear();
    for (double frac : {0.75, 0.55, 0.35, 0.25}) {
      const auto ell = static_cast<Eigen::Index>(std::llround(frac * static_cast<double>(*T)));
      if (std::any_of(grid.segment_lengths.begin(), grid.segment_lengths.end(), [ell](auto sl) { return ell % sl == 0; })) {
        grid.kept_lengths.push_back(ell);
      }
    }
  }
  ctx.err << "# kept lengths " << join(grid.kept_lengths) << ", segment lengths " << join(grid.segment_lengths) << '\n';
  const auto rows = sweep_segment_lengths(params, tr, te, grid.kept_lengths, grid.segment_lengths, pairs);
  detail::write_atomically(out, sweep_csv(rows));
  ctx.out << sweep_csv(rows);
  return kOk;
}

inline int cmd_report(std::vector<std::string> args, Context& ctx) {
  CLI::App app{"Summarize one or more compare reports", "report"};
  add_config(app);
  std::vector<std::string> inputs;
  std::string out;
  app.add_option("--in", inputs, "Report CSV files")->required();
  app.add_option("--out", out, "Optional summary CSV");
  parse(app, std::move(args), ctx);
  log_config(app, ctx);
  std::vector<ReportRow> rows;
  for (const auto& p : inputs) {
    for (const auto& r : read_report_csv(p)) rows.push_back(r);
  }
  const auto summary = summarize(rows);
  std::ostringstream csv;
  csv << "subject,unpruned,pruned,delta,ell_over_T\n";
  double delta_sum = 0.0;
  for (const auto& s : summary) {
    csv << s.subject << ',' << detail::format_double(s.unpruned) << ',' << detail::format_double(s.pruned) << ','
        << detail::format_double(s.pruned - s.unpruned) << ',' << detail::format_double(s.ell_over_T) << '\n';
    delta_sum += s.pruned - s.unpruned;
  }
  if (!out.empty()) detail::write_atomically(out, csv.str());
  ctx.out << csv.str();
  if (!summary.empty()) ctx.out << "mean_delta " << delta_sum / static_cast<double>(summary.size()) << '\n';
  return kOk;
}

inline const std::map<std::string, int (*)(std::vector<std::string>, Context&)>& commands() {
  static const std::map<std::string, int (*)(std::vector<std::string>, Context&)> table{
      {"synth", cmd_synth},   {"filter", cmd_filter},   {"train", cmd_train}, {"gradcheck", cmd_gradcheck},
      {"attend", cmd_attend}, {"prune", cmd_prune},     {"tune", cmd_tune},   {"eval", cmd_eval},
      {"compare", cmd_compare}, {"sweep", cmd_sweep},   {"report", cmd_report}};
  return table;
}

inline void usage(std::ostream& os) {
  os << "usage: saliency_bci <command> [options]   (saliency_bci <command> --help for flags)\n\n"
        "commands:\n"
        "  synth      generate synthetic trials with planted salient intervals\n"
        "  filter     zero-phase Butterworth bandpass filtering\n"
        "  train      train the attention autoencoder\n"
        "  gradcheck  verify analytic gradients against finite differences\n"
        "  attend     write per-trial attention vectors\n"
        "  prune      keep the most attended segments of every trial\n"
        "  tune       cross-validate (n, r)\n"
        "  eval       CSP + LDA accuracy on a train/test split\n"
        "  compare    per-subject accuracy with and without pruning\n"
        "  sweep      accuracy versus segment length\n"
        "  report     summarize compare reports\n\n"
        "environment: SALIENCY_BCI_THREADS caps worker threads (0 = auto)\n";
}

/// Entry point shared by the executable and the tests.
inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (argv.size() < 2 || argv[1] == "--help" || argv[1] == "-h") {
    usage(argv.size() < 2 ? err : out);
    return argv.size() < 2 ? kUsage : kOk;
  }
  const auto it = commands().find(argv[1]);
  if (it == commands().end()) {
    err << "unknown command '" << argv[1] << "'\n";
    usage(err);
    return kUsage;
  }
  // CLI11 consumes arguments from the back.
  std::vector<std::string> args(argv.rbegin(), argv.rend() - 2);
  Context ctx{out, err};
  try {
    return it->second(std::move(args), ctx);
  } catch (const ParseExit& e) {
    return e.code;
  } catch (const CLI::ParseError& e) {
    err << argv[1] << ": " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << argv[1] << ": " << e.what() << '\n';
    return is_numerical(e.code()) ? kNumerical : kData;
  } catch (const std::exception& e) {
    err << argv[1] << ": " << e.what() << '\n';
    return kData;
  }
}

}  // namespace sbci::cli

#endif  // SALIENCY_BCI_TOOLS_CLI_HPP
