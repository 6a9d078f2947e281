#ifndef SALIENCY_BCI_ATTNET_HPP
#define SALIENCY_BCI_ATTNET_HPP

// Masked-reconstruction autoencoder:
//
//   x~ (n_c x T) -> conv embedding (m x T) -> LSTM encoder (h x T)
//     -> dot-product self-attention (Lambda: T x T, context: n_v x T)
//     -> LSTM decoder seeded with the encoder's final (h, c)
//     -> dense head (tanh hidden layers, linear output) -> x^ (n_c x T)
//
// trained on the mean squared error between x^ and the unmasked x. The
// backward pass is written out by hand; tests check it against central
// finite differences.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "saliency_bci/common.hpp"
#include "saliency_bci/trialio.hpp"

namespace sbci {

struct NetConfig {
  int m = 5;    // embedding kernels
  int d = 4;    // kernel width in samples
  int h = 4;    // LSTM hidden size
  int n_k = 4;  // query/key dimension
  int n_v = 4;  // value dimension
  int n_c = 22;
  std::vector<int> dense_hidden{5, 10, 15};
  double p1 = 0.6;  // fraction of time samples masked
  double p2 = 0.4;  // fraction of channels zeroed at a masked sample

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "NetConfig: " + m); };
    if (m < 1 || d < 1 || h < 1 || n_k < 1 || n_v < 1 || n_c < 1) fail("all dimensions must be >= 1");
    if (dense_hidden.empty()) fail("dense_hidden must be nonempty");
    for (int w : dense_hidden) {
      if (w < 1) fail("dense layer widths must be >= 1");
    }
    if (!(p1 >= 0.0 && p1 <= 1.0) || !(p2 >= 0.0 && p2 <= 1.0)) fail("p1 and p2 must lie in [0, 1]");
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct DenseLayer {
  Matrix w;
  Vector b;
};

/// All learnable weights. Gradients use the same type.
struct ModelParams {
  NetConfig cfg;
  Matrix embed_kernels;  // m x (n_c * d); column i*d + tau holds kernel[., i, tau]
  Vector embed_bias;     // m
  Matrix enc_w;          // 4h x (m + h), gate rows ordered i, f, g, o
  Vector enc_b;          // 4h
  Matrix w_q;            // n_k x h
  Matrix w_k;            // n_k x h
  Matrix w_v;            // n_v x h
  Matrix dec_w;          // 4h x (n_v + h)
  Vector dec_b;          // 4h
  std::vector<DenseLayer> dense;  // h -> dense_hidden... -> n_c

  static ModelParams zeros(const NetConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    p.embed_kernels = Matrix::Zero(cfg.m, cfg.n_c * cfg.d);
    p.embed_bias = Vector::Zero(cfg.m);
    p.enc_w = Matrix::Zero(4 * cfg.h, cfg.m + cfg.h);
    p.enc_b = Vector::Zero(4 * cfg.h);
    p.w_q = Matrix::Zero(cfg.n_k, cfg.h);
    p.w_k = Matrix::Zero(cfg.n_k, cfg.h);
    p.w_v = Matrix::Zero(cfg.n_v, cfg.h);
    p.dec_w = Matrix::Zero(4 * cfg.h, cfg.n_v + cfg.h);
    p.dec_b = Vector::Zero(4 * cfg.h);
    int in = cfg.h;
    for (int width : cfg.dense_hidden) {
      p.dense.push_back({Matrix::Zero(width, in), Vector::Zero(width)});
      in = width;
    }
    p.dense.push_back({Matrix::Zero(cfg.n_c, in), Vector::Zero(cfg.n_c)});
    return p;
  }

  /// Visits every tensor in declaration order as f(name, tensor).
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  Vector flatten() const {
    Vector out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index at = 0;
    visit([&](const std::string&, const auto& t) {
      out.segment(at, t.size()) = t.reshaped();
      at += t.size();
    });
    return out;
  }

  void unflatten(const Vector& flat) {
    if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
      throw Error(ErrorCode::ShapeMismatch, "flat parameter vector has wrong length");
    }
    Eigen::Index at = 0;
    visit([&](const std::string&, auto& t) {
      t.reshaped() = flat.segment(at, t.size());
      at += t.size();
    });
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    f("embed_kernels", self.embed_kernels);
    f("embed_bias", self.embed_bias);
    f("enc_w", self.enc_w);
    f("enc_b", self.enc_b);
    f("w_q", self.w_q);
    f("w_k", self.w_k);
    f("w_v", self.w_v);
    f("dec_w", self.dec_w);
    f("dec_b", self.dec_b);
    for (std::size_t l = 0; l < self.dense.size(); ++l) {
      f("dense" + std::to_string(l) + "_w", self.dense[l].w);
      f("dense" + std::to_string(l) + "_b", self.dense[l].b);
    }
  }
};

/// Glorot-uniform weights, zero biases except LSTM forget gates (1).
inline ModelParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(cfg);
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& w, double fan_in, double fan_out) {
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-s, s);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    }
  };
  fill(p.embed_kernels, cfg.n_c * cfg.d, cfg.m);
  fill(p.enc_w, cfg.m + cfg.h, 4 * cfg.h);
  fill(p.w_q, cfg.h, cfg.n_k);
  fill(p.w_k, cfg.h, cfg.n_k);
  fill(p.w_v, cfg.h, cfg.n_v);
  fill(p.dec_w, cfg.n_v + cfg.h, 4 * cfg.h);
  for (auto& layer : p.dense) fill(layer.w, static_cast<double>(layer.w.cols()), static_cast<double>(layer.w.rows()));
  p.enc_b.segment(cfg.h, cfg.h).setOnes();
  p.dec_b.segment(cfg.h, cfg.h).setOnes();
  return p;
}

namespace detail {

inline constexpr double kActivationLimit = 1e100;

template <class M>
void check_activation(const char* stage, const M& m) {
  const bool bad = !m.allFinite() || (m.size() > 0 && m.cwiseAbs().maxCoeff() > kActivationLimit);
  if (bad) throw Error(ErrorCode::NonFiniteActivation, std::string("non-finite or exploding activation in ") + stage);
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

/// Stacks x[i, t + tau] (zero past the end) into rows i*d + tau.
inline Matrix unfold_input(const Matrix& x, int d) {
  const Eigen::Index n_c = x.rows();
  const Eigen::Index T = x.cols();
  Matrix u = Matrix::Zero(n_c * d, T);
  for (Eigen::Index i = 0; i < n_c; ++i) {
    for (int tau = 0; tau < d; ++tau) {
      const Eigen::Index len = std::max<Eigen::Index>(0, T - tau);
      u.row(i * d + tau).head(len) = x.row(i).segment(tau, len);
    }
  }
  return u;
}

inline Matrix embed(const ModelParams& p, const Matrix& x) {
  if (x.rows() != p.cfg.n_c) {
    throw Error(ErrorCode::ShapeMismatch, "embed: input has " + std::to_string(x.rows()) + " channels, model expects " +
                                              std::to_string(p.cfg.n_c));
  }
  Matrix y = p.embed_kernels * unfold_input(x, p.cfg.d);
  y.colwise() += p.embed_bias;
  return y;
}

struct LstmStep {
  Vector h;
  Vector c;
  Vector gates;  // post-activation i, f, g, o stacked (4h)
};

/// One LSTM cell update; gate order i, f, g, o.
inline LstmStep lstm_step(const Matrix& gates_w, const Vector& gates_b, const Vector& input, const Vector& h_prev,
                          const Vector& c_prev) {
  const Eigen::Index hs = h_prev.size();
  if (gates_w.rows() != 4 * hs || gates_w.cols() != input.size() + hs || gates_b.size() != 4 * hs ||
      c_prev.size() != hs) {
    throw Error(ErrorCode::ShapeMismatch, "lstm_step: inconsistent shapes");
  }
  Vector z = gates_w.leftCols(input.size()) * input + gates_w.rightCols(hs) * h_prev + gates_b;
  LstmStep out;
  out.gates.resize(4 * hs);
  for (Eigen::Index k = 0; k < hs; ++k) {
    out.gates(k) = detail::sigmoid(z(k));
    out.gates(hs + k) = detail::sigmoid(z(hs + k));
    out.gates(2 * hs + k) = std::tanh(z(2 * hs + k));
    out.gates(3 * hs + k) = detail::sigmoid(z(3 * hs + k));
  }
  out.c = out.gates.segment(hs, hs).cwiseProduct(c_prev) + out.gates.head(hs).cwiseProduct(out.gates.segment(2 * hs, hs));
  out.h = out.gates.segment(3 * hs, hs).cwiseProduct(out.c.array().tanh().matrix());
  return out;
}

/// Cached states of an LSTM run over a sequence.
struct LstmTrace {
  Matrix gates;   // 4h x T
  Matrix c;       // h x T
  Matrix tanh_c;  // h x T
  Matrix h;       // h x T
  Vector h0;
  Vector c0;

  Vector final_h() const { return h.col(h.cols() - 1); }
  Vector final_c() const { return c.col(c.cols() - 1); }
};

inline LstmTrace run_lstm(const Matrix& w, const Vector& b, const Matrix& inputs, const Vector& h0, const Vector& c0) {
  const Eigen::Index hs = h0.size();
  const Eigen::Index T = inputs.cols();
  if (w.rows() != 4 * hs || w.cols() != inputs.rows() + hs || c0.size() != hs || T < 1) {
    throw Error(ErrorCode::ShapeMismatch, "run_lstm: inconsistent shapes");
  }
  LstmTrace tr;
  tr.h0 = h0;
  tr.c0 = c0;
  tr.gates.resize(4 * hs, T);
  tr.c.resize(hs, T);
  tr.tanh_c.resize(hs, T);
  tr.h.resize(hs, T);
  Matrix z_in = w.leftCols(inputs.rows()) * inputs;
  z_in.colwise() += b;
  const auto w_h = w.rightCols(hs);
  Vector h = h0;
  Vector c = c0;
  Vector z(4 * hs);
  for (Eigen::Index t = 0; t < T; ++t) {
    z.noalias() = w_h * h;
    z += z_in.col(t);
    auto g = tr.gates.col(t);
    for (Eigen::Index k = 0; k < hs; ++k) {
      const double gi = detail::sigmoid(z(k));
      const double gf = detail::sigmoid(z(hs + k));
      const double gg = std::tanh(z(2 * hs + k));
      const double go = detail::sigmoid(z(3 * hs + k));
      g(k) = gi;
      g(hs + k) = gf;
      g(2 * hs + k) = gg;
      g(3 * hs + k) = go;
      c(k) = gf * c(k) + gi * gg;
      const double tc = std::tanh(c(k));
      tr.tanh_c(k, t) = tc;
      h(k) = go * tc;
    }
    tr.c.col(t) = c;
    tr.h.col(t) = h;
  }
  return tr;
}

struct LstmGrads {
  Matrix d_w;
  Vector d_b;
  Matrix d_inputs;
  Vector d_h0;
  Vector d_c0;
};

/// Backpropagation through time. d_h holds dLoss/dh_t for every step;
/// d_h_final / d_c_final are extra gradients on the last state.
inline LstmGrads lstm_backward(const Matrix& w, const Matrix& inputs, const LstmTrace& tr, const Matrix& d_h,
                               const Vector& d_h_final, const Vector& d_c_final) {
  const Eigen::Index hs = tr.h0.size();
  const Eigen::Index T = inputs.cols();
  const Eigen::Index in = inputs.rows();
  const auto w_h = w.rightCols(hs);
  Matrix d_z(4 * hs, T);
  Vector dh_next = d_h_final;
  Vector dc_next = d_c_final;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto g = tr.gates.col(t);
    for (Eigen::Index k = 0; k < hs; ++k) {
      const double gi = g(k), gf = g(hs + k), gg = g(2 * hs + k), go = g(3 * hs + k);
      const double tc = tr.tanh_c(k, t);
      const double c_prev = t > 0 ? tr.c(k, t - 1) : tr.c0(k);
      const double dh = d_h(k, t) + dh_next(k);
      const double dc = dc_next(k) + dh * go * (1.0 - tc * tc);
      d_z(k, t) = dc * gg * gi * (1.0 - gi);
      d_z(hs + k, t) = dc * c_prev * gf * (1.0 - gf);
      d_z(2 * hs + k, t) = dc * gi * (1.0 - gg * gg);
      d_z(3 * hs + k, t) = dh * tc * go * (1.0 - go);
      dc_next(k) = dc * gf;
    }
    dh_next.noalias() = w_h.transpose() * d_z.col(t);
  }
  Matrix h_prev(hs, T);
  h_prev.col(0) = tr.h0;
  if (T > 1) h_prev.rightCols(T - 1) = tr.h.leftCols(T - 1);

  LstmGrads g;
  g.d_w.resize(4 * hs, in + hs);
  g.d_w.leftCols(in).noalias() = d_z * inputs.transpose();
  g.d_w.rightCols(hs).noalias() = d_z * h_prev.transpose();
  g.d_b = d_z.rowwise().sum();
  g.d_inputs.noalias() = w.leftCols(in).transpose() * d_z;
  g.d_h0 = dh_next;
  g.d_c0 = dc_next;
  return g;
}

struct EncoderOutput {
  Matrix enc_hidden;  // h x T
  Vector final_h;
  Vector final_c;
};

inline EncoderOutput encode(const ModelParams& p, const Matrix& embedded) {
  if (embedded.rows() != p.cfg.m) throw Error(ErrorCode::ShapeMismatch, "encode: embedding height mismatch");
  const auto tr = run_lstm(p.enc_w, p.enc_b, embedded, Vector::Zero(p.cfg.h), Vector::Zero(p.cfg.h));
  return {tr.h, tr.final_h(), tr.final_c()};
}

struct AttentionResult {
  Matrix q;        // n_k x T
  Matrix k;        // n_k x T
  Matrix v;        // n_v x T
  Matrix lambda;   // T x T, row i = softmax_t(q_i . k_t)
  Matrix context;  // n_v x T, column i = sum_t lambda(i, t) v_t
};

/// Unscaled dot-product self-attention over encoder states.
inline AttentionResult attend(const ModelParams& p, const Matrix& enc_hidden) {
  if (enc_hidden.rows() != p.cfg.h) throw Error(ErrorCode::ShapeMismatch, "attend: hidden size mismatch");
  AttentionResult a;
  a.q.noalias() = p.w_q * enc_hidden;
  a.k.noalias() = p.w_k * enc_hidden;
  a.v.noalias() = p.w_v * enc_hidden;
  a.lambda.noalias() = a.q.transpose() * a.k;
  detail::check_activation("attention logits", a.lambda);
  // Row-wise softmax with max subtraction; transpose so rows are contiguous.
  Matrix lt = a.lambda.transpose();
  for (Eigen::Index i = 0; i < lt.cols(); ++i) {
    auto col = lt.col(i);
    col.array() = (col.array() - col.maxCoeff()).exp();
    col /= col.sum();
  }
  a.lambda = lt.transpose();
  a.context.noalias() = a.v * lt;
  return a;
}

/// Dense head applied column-wise. Returns the activations of every layer,
/// the last entry being the linear output.
inline std::vector<Matrix> dense_forward(const ModelParams& p, const Matrix& input) {
  std::vector<Matrix> acts;
  acts.reserve(p.dense.size());
  const Matrix* prev = &input;
  for (std::size_t l = 0; l < p.dense.size(); ++l) {
    Matrix z = p.dense[l].w * *prev;
    z.colwise() += p.dense[l].b;
    if (l + 1 < p.dense.size()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
    prev = &acts.back();
  }
  return acts;
}

inline Matrix decode_reconstruct(const ModelParams& p, const Matrix& context, const Vector& init_h,
                                 const Vector& init_c) {
  if (context.rows() != p.cfg.n_v || init_h.size() != p.cfg.h || init_c.size() != p.cfg.h) {
    throw Error(ErrorCode::ShapeMismatch, "decode_reconstruct: inconsistent shapes");
  }
  const auto tr = run_lstm(p.dec_w, p.dec_b, context, init_h, init_c);
  return dense_forward(p, tr.h).back();
}

/// Zeros floor(p2 * n_c) distinct channels at each of floor(p1 * T) distinct
/// time samples.
template <class Rng>
Matrix mask_input(const Matrix& x, double p1, double p2, Rng& rng) {
  if (!(p1 >= 0.0 && p1 <= 1.0) || !(p2 >= 0.0 && p2 <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "mask probabilities must lie in [0, 1]");
  }
  const Eigen::Index T = x.cols();
  const Eigen::Index n_c = x.rows();
  const auto n_times = static_cast<Eigen::Index>(std::floor(p1 * static_cast<double>(T) + 1e-9));
  const auto n_chans = static_cast<Eigen::Index>(std::floor(p2 * static_cast<double>(n_c) + 1e-9));
  Matrix out = x;
  if (n_times == 0 || n_chans == 0) return out;

  // Partial Fisher-Yates: the first `count` entries become a uniform sample.
  auto draw = [&rng](std::vector<Eigen::Index>& pool, Eigen::Index count) {
    std::iota(pool.begin(), pool.end(), Eigen::Index{0});
    for (Eigen::Index i = 0; i < count; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, static_cast<Eigen::Index>(pool.size()) - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
  };
  std::vector<Eigen::Index> times(static_cast<std::size_t>(T));
  std::vector<Eigen::Index> chans(static_cast<std::size_t>(n_c));
  draw(times, n_times);
  for (Eigen::Index j = 0; j < n_times; ++j) {
    draw(chans, n_chans);
    for (Eigen::Index k = 0; k < n_chans; ++k) out(chans[static_cast<std::size_t>(k)], times[static_cast<std::size_t>(j)]) = 0.0;
  }
  return out;
}

inline double loss_mse(const Matrix& x_hat, const Matrix& x) {
  if (x_hat.rows() != x.rows() || x_hat.cols() != x.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "loss_mse: shapes differ");
  }
  return (x_hat - x).squaredNorm() / static_cast<double>(x.size());
}

struct ForwardTrace {
  Matrix input;     // x~
  Matrix unfolded;  // (n_c d) x T
  Matrix embedded;  // m x T
  LstmTrace enc;
  AttentionResult att;
  LstmTrace dec;
  std::vector<Matrix> dense_acts;  // last entry is the reconstruction

  const Matrix& enc_hidden() const { return enc.h; }
  const Matrix& lambda() const { return att.lambda; }
  const Matrix& context() const { return att.context; }
  const Matrix& dec_hidden() const { return dec.h; }
  const Matrix& reconstruction() const { return dense_acts.back(); }
};

inline ForwardTrace forward(const ModelParams& p, const Matrix& x_tilde) {
  if (x_tilde.rows() != p.cfg.n_c || x_tilde.cols() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "forward: input must be n_c x T with T >= 1");
  }
  ForwardTrace tr;
  tr.input = x_tilde;
  tr.unfolded = unfold_input(x_tilde, p.cfg.d);
  tr.embedded.noalias() = p.embed_kernels * tr.unfolded;
  tr.embedded.colwise() += p.embed_bias;
  detail::check_activation("embedding", tr.embedded);
  tr.enc = run_lstm(p.enc_w, p.enc_b, tr.embedded, Vector::Zero(p.cfg.h), Vector::Zero(p.cfg.h));
  detail::check_activation("encoder", tr.enc.c);
  tr.att = attend(p, tr.enc.h);
  detail::check_activation("attention", tr.att.context);
  tr.dec = run_lstm(p.dec_w, p.dec_b, tr.att.context, tr.enc.final_h(), tr.enc.final_c());
  detail::check_activation("decoder", tr.dec.c);
  tr.dense_acts = dense_forward(p, tr.dec.h);
  detail::check_activation("reconstruction", tr.dense_acts.back());
  return tr;
}

/// Gradient of loss_mse(reconstruction, x) with respect to every parameter.
inline ModelParams backward(const ModelParams& p, const ForwardTrace& tr, const Matrix& x) {
  const Matrix& x_hat = tr.reconstruction();
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "backward: target shape differs from reconstruction");
  }
  ModelParams g = ModelParams::zeros(p.cfg);

  // Dense head.
  Matrix d_act = (2.0 / static_cast<double>(x.size())) * (x_hat - x);
  for (std::size_t l = p.dense.size(); l-- > 0;) {
    Matrix d_z = std::move(d_act);
    if (l + 1 < p.dense.size()) d_z.array() *= 1.0 - tr.dense_acts[l].array().square();
    const Matrix& in = l == 0 ? tr.dec.h : tr.dense_acts[l - 1];
    g.dense[l].w.noalias() = d_z * in.transpose();
    g.dense[l].b = d_z.rowwise().sum();
    d_act.noalias() = p.dense[l].w.transpose() * d_z;
  }

  // Decoder.
  const Eigen::Index hs = p.cfg.h;
  const auto dec = lstm_backward(p.dec_w, tr.att.context, tr.dec, d_act, Vector::Zero(hs), Vector::Zero(hs));
  g.dec_w = dec.d_w;
  g.dec_b = dec.d_b;
  const Matrix& d_context = dec.d_inputs;

  // Attention: context = V Lambda^T, Lambda = rowsoftmax(Q^T K).
  const auto& a = tr.att;
  Matrix d_v = d_context * a.lambda;
  Matrix d_logits = d_context.transpose() * a.v;  // dLambda
  {
    const Vector row_dot = (a.lambda.cwiseProduct(d_logits)).rowwise().sum();
    d_logits.colwise() -= row_dot;
    d_logits.array() *= a.lambda.array();
  }
  Matrix d_q = a.k * d_logits.transpose();
  Matrix d_k = a.q * d_logits;
  const Matrix& enc_h = tr.enc.h;
  g.w_q.noalias() = d_q * enc_h.transpose();
  g.w_k.noalias() = d_k * enc_h.transpose();
  g.w_v.noalias() = d_v * enc_h.transpose();
  Matrix d_enc_h = p.w_q.transpose() * d_q;
  d_enc_h.noalias() += p.w_k.transpose() * d_k;
  d_enc_h.noalias() += p.w_v.transpose() * d_v;

  // Encoder; its final state seeded the decoder.
  const auto enc = lstm_backward(p.enc_w, tr.embedded, tr.enc, d_enc_h, dec.d_h0, dec.d_c0);
  g.enc_w = enc.d_w;
  g.enc_b = enc.d_b;

  // Embedding.
  g.embed_kernels.noalias() = enc.d_inputs * tr.unfolded.transpose();
  g.embed_bias = enc.d_inputs.rowwise().sum();
  return g;
}

/// Central-difference gradient of loss_mse(forward(p, x_tilde), x).
inline ModelParams finite_difference_gradient(const ModelParams& p, const Matrix& x_tilde, const Matrix& x,
                                              double eps = 1e-5) {
  ModelParams work = p;
  Vector flat = p.flatten();
  Vector grad(flat.size());
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double orig = flat(i);
    flat(i) = orig + eps;
    work.unflatten(flat);
    const double up = loss_mse(forward(work, x_tilde).reconstruction(), x);
    flat(i) = orig - eps;
    work.unflatten(flat);
    const double down = loss_mse(forward(work, x_tilde).reconstruction(), x);
    flat(i) = orig;
    grad(i) = (up - down) / (2.0 * eps);
  }
  ModelParams out = ModelParams::zeros(p.cfg);
  out.unflatten(grad);
  return out;
}

struct GradientComparison {
  double max_error = 0.0;  // |a - n| / max(|a|, |n|, floor / tolerance)
  std::string worst_tensor;
  Eigen::Index worst_index = -1;
};

/// Worst relative discrepancy. Entries smaller than abs_floor / rel_tol in
/// magnitude are judged on absolute error against abs_floor instead.
inline GradientComparison compare_gradients(const ModelParams& analytic, const ModelParams& numeric,
                                            double rel_tol = 1e-4, double abs_floor = 1e-8) {
  GradientComparison out;
  std::vector<std::pair<std::string, Vector>> rows;
  numeric.visit([&](const std::string& name, const auto& t) { rows.emplace_back(name, t.reshaped()); });
  std::size_t k = 0;
  analytic.visit([&](const std::string& name, const auto& t) {
    const Vector a = t.reshaped();
    const Vector& n = rows[k++].second;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double scale = std::max({std::abs(a(i)), std::abs(n(i)), abs_floor / rel_tol});
      const double e = std::abs(a(i) - n(i)) / scale;
      if (e > out.max_error) out = {e, name, i};
    }
  });
  return out;
}

enum class Optimizer { AdaptiveMoments, PlainSgd };

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::AdaptiveMoments;
  std::pair<double, double> moment_decays{0.9, 0.999};
  double epsilon_hat = 1e-8;

  void validate() const {
    if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be >= 0");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  }
};

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_curve;  // mean masked-reconstruction loss per epoch
};

/// Mask RNG for one trial in one epoch; independent of visiting order.
inline std::mt19937_64 mask_rng(std::uint64_t seed, int epoch, std::size_t trial_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(trial_index), 0x6d61736bu};
  return std::mt19937_64(seq);
}

/// Adam (or plain SGD) over shuffled mini-batches with fresh masks each epoch.
/// Labels are never read.
inline TrainResult train(const TrialSet& set, const NetConfig& net_cfg, const TrainConfig& cfg,
                         const std::function<void(int, double)>& on_epoch = {}) {
  net_cfg.validate();
  cfg.validate();
  if (set.empty()) throw Error(ErrorCode::EmptySet, "train: no trials");
  if (set.n_channels() != net_cfg.n_c) {
    throw Error(ErrorCode::ShapeMismatch, "train: trials have " + std::to_string(set.n_channels()) +
                                              " channels, network expects " + std::to_string(net_cfg.n_c));
  }
  if (!set.uniform_length()) throw Error(ErrorCode::ShapeMismatch, "train: trials differ in length");

  TrainResult result{init_params(net_cfg, cfg.seed), {}};
  Vector theta = result.params.flatten();
  Vector m1 = Vector::Zero(theta.size());
  Vector m2 = Vector::Zero(theta.size());
  const auto [beta1, beta2] = cfg.moment_decays;
  long step = 0;

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(set.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      std::vector<Vector> grads(count);
      std::vector<double> losses(count);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        const Matrix& x = set[idx].data;
        auto rng = mask_rng(cfg.seed, epoch, idx);
        const auto tr = forward(result.params, mask_input(x, net_cfg.p1, net_cfg.p2, rng));
        losses[b] = loss_mse(tr.reconstruction(), x);
        grads[b] = backward(result.params, tr, x).flatten();
      });
      Vector grad = Vector::Zero(theta.size());
      for (std::size_t b = 0; b < count; ++b) {
        grad += grads[b];
        epoch_loss += losses[b];
      }
      grad /= static_cast<double>(count);

      if (cfg.optimizer == Optimizer::AdaptiveMoments) {
        ++step;
        m1 = beta1 * m1 + (1.0 - beta1) * grad;
        m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        theta.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.epsilon_hat);
      } else {
        theta -= cfg.learning_rate * grad;
      }
      if (!theta.allFinite()) {
        throw Error(ErrorCode::NonFiniteActivation, "parameters became non-finite in epoch " + std::to_string(epoch + 1));
      }
      result.params.unflatten(theta);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(set.size()));
    if (on_epoch) on_epoch(epoch + 1, result.loss_curve.back());
  }
  return result;
}

// Model file: "SBCIMODL", u32 version, config block (i32 m, d, h, n_k, n_v,
// n_c, u32 dense count, i32 widths, f64 p1, p2), then every tensor in
// ModelParams::visit order, row-major, as little-endian IEEE-754 doubles.

inline constexpr std::array<char, 8> kModelMagic{'S', 'B', 'C', 'I', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::uint64_t u64() { return take(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& bytes() const { return bytes_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::ModelFormat, source_ + ": truncated model file");
  }
  std::uint64_t take(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(const ModelParams& p) {
  std::string out(kModelMagic.begin(), kModelMagic.end());
  detail::put_u32(out, kModelVersion);
  const auto& c = p.cfg;
  for (int v : {c.m, c.d, c.h, c.n_k, c.n_v, c.n_c}) detail::put_u32(out, static_cast<std::uint32_t>(v));
  detail::put_u32(out, static_cast<std::uint32_t>(c.dense_hidden.size()));
  for (int w : c.dense_hidden) detail::put_u32(out, static_cast<std::uint32_t>(w));
  detail::put_f64(out, c.p1);
  detail::put_f64(out, c.p2);
  p.visit([&](const std::string&, const auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index col = 0; col < t.cols(); ++col) detail::put_f64(out, t(r, col));
    }
  });
  return out;
}

inline ModelParams deserialize_model(std::string bytes, const std::string& source = "<memory>") {
  detail::ByteReader in(std::move(bytes), source);
  if (in.bytes().size() < kModelMagic.size() ||
      !std::equal(kModelMagic.begin(), kModelMagic.end(), in.bytes().begin())) {
    throw Error(ErrorCode::ModelFormat, source + ": bad magic");
  }
  in.skip(kModelMagic.size());
  if (const auto v = in.u32(); v != kModelVersion) {
    throw Error(ErrorCode::ModelFormat, source + ": unsupported version " + std::to_string(v));
  }
  NetConfig c;
  c.m = in.i32();
  c.d = in.i32();
  c.h = in.i32();
  c.n_k = in.i32();
  c.n_v = in.i32();
  c.n_c = in.i32();
  const auto n_dense = in.u32();
  if (n_dense > 1024) throw Error(ErrorCode::ModelFormat, source + ": implausible dense layer count");
  c.dense_hidden.clear();
  for (std::uint32_t i = 0; i < n_dense; ++i) c.dense_hidden.push_back(in.i32());
  c.p1 = in.f64();
  c.p2 = in.f64();
  ModelParams p;
  try {
    p = ModelParams::zeros(c);
  } catch (const Error& e) {
    throw Error(ErrorCode::ModelFormat, source + ": invalid config block (" + e.what() + ")");
  }
  p.visit([&](const std::string&, auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index col = 0; col < t.cols(); ++col) t(r, col) = in.f64();
    }
  });
  if (!in.done()) throw Error(ErrorCode::ModelFormat, source + ": trailing bytes");
  return p;
}

inline void save_model(const ModelParams& p, const std::filesystem::path& path) {
  detail::write_atomically(path, serialize_model(p));
}

inline ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open model file '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(std::move(bytes), path.string());
}

}  // namespace sbci

#endif  // SALIENCY_BCI_ATTNET_HPP
