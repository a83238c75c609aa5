#pragma once

// Convolutional encoder and per-label attention decoder with optional
// hyperbolic query correction. Gradients are derived by hand.
//
//   H  = tanh(conv1d_same(embed(x)))            N x d_f
//   Q' = Q | Q + fc(E_h) | fc([Q; E_h])         d_f x L
//   A  = softmax over tokens of H Q'            N x L  (columns sum to 1)
//   V  = A^T H                                  L x d_f
//   y~ = sum_pool(V W) + b = V (W 1) + b        L
//   y^ = sigmoid(y~)

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hicu/error.hpp"

namespace hicu {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class CorrectionMode { none, add, concat };

inline std::string_view correction_name(CorrectionMode m) {
  switch (m) {
    case CorrectionMode::none: return "none";
    case CorrectionMode::add: return "add";
    case CorrectionMode::concat: return "concat";
  }
  return "none";
}

inline CorrectionMode parse_correction(std::string_view s) {
  if (s == "none") return CorrectionMode::none;
  if (s == "add") return CorrectionMode::add;
  if (s == "concat") return CorrectionMode::concat;
  fail(ErrorCode::usage, "unknown correction mode '" + std::string(s) + "' (expected none|add|concat)");
}

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  int kernel_width = 3;
  int feature_dim = 32;
  int hyperbolic_dim = 50;
  CorrectionMode correction = CorrectionMode::none;
  bool finetune_embeddings = true;

  void validate() const {
    require(vocab_size >= 2, ErrorCode::config, "vocabulary must hold at least the reserved tokens");
    require(embed_dim >= 1, ErrorCode::config, "embedding dimension must be positive");
    require(kernel_width >= 1 && kernel_width % 2 == 1, ErrorCode::config, "kernel width must be odd");
    require(feature_dim >= 1, ErrorCode::config, "feature dimension must be positive");
    require(correction == CorrectionMode::none || hyperbolic_dim >= 1, ErrorCode::config,
            "hyperbolic dimension must be positive when correction is enabled");
  }

  int fc_input_dim() const {
    switch (correction) {
      case CorrectionMode::add: return hyperbolic_dim;
      case CorrectionMode::concat: return feature_dim + hyperbolic_dim;
      case CorrectionMode::none: return 0;
    }
    return 0;
  }
};

struct EncoderParams {
  MatrixXd embedding;  // vocab x d_e
  MatrixXd kernel;     // (s * d_e) x d_f, one d_e-row block per window offset
  VectorXd bias;       // d_f
};

struct DecoderParams {
  MatrixXd query;       // d_f x L
  MatrixXd out_weight;  // d_f x L
  VectorXd out_bias;    // L
  MatrixXd fc_weight;   // d_f x d_h (add) or d_f x (d_f + d_h) (concat); empty for none
  VectorXd fc_bias;     // d_f
};

struct Parameters {
  EncoderParams encoder;
  DecoderParams decoder;

  // Visits every tensor in a fixed order.
  template <class F>
  void for_each(F&& f) {
    f(std::string_view("embedding"), encoder.embedding);
    f(std::string_view("conv_kernel"), encoder.kernel);
    f(std::string_view("conv_bias"), encoder.bias);
    f(std::string_view("query"), decoder.query);
    f(std::string_view("out_weight"), decoder.out_weight);
    f(std::string_view("out_bias"), decoder.out_bias);
    f(std::string_view("fc_weight"), decoder.fc_weight);
    f(std::string_view("fc_bias"), decoder.fc_bias);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<Parameters*>(this)->for_each([&](std::string_view name, auto& t) { f(name, std::as_const(t)); });
  }

  Parameters zeros_like() const {
    Parameters z = *this;
    z.for_each([](std::string_view, auto& t) { t.setZero(); });
    return z;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    bool same = true;
    auto views_a = a.flat();
    auto views_b = b.flat();
    for (std::size_t i = 0; i < views_a.size(); ++i) {
      const auto& x = views_a[i].second;
      const auto& y = views_b[i].second;
      same = same && x.size() == y.size() && (x.size() == 0 || std::equal(x.data(), x.data() + x.size(), y.data()));
    }
    return same;
  }

  std::vector<std::pair<std::string_view, Eigen::Map<VectorXd>>> flat() {
    std::vector<std::pair<std::string_view, Eigen::Map<VectorXd>>> out;
    for_each([&](std::string_view name, auto& t) { out.emplace_back(name, Eigen::Map<VectorXd>(t.data(), t.size())); });
    return out;
  }
  std::vector<std::pair<std::string_view, Eigen::Map<const VectorXd>>> flat() const {
    std::vector<std::pair<std::string_view, Eigen::Map<const VectorXd>>> out;
    for_each([&](std::string_view name, const auto& t) {
      out.emplace_back(name, Eigen::Map<const VectorXd>(t.data(), t.size()));
    });
    return out;
  }
};

using Gradients = Parameters;

struct ModelState {
  ModelConfig config;
  int level = 1;
  Parameters params;
};

// ---------------------------------------------------------------------------
// Initialization

inline MatrixXd xavier_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

// Uniform [-0.1, 0.1] word vectors with a zero padding row.
inline MatrixXd random_word_embeddings(int vocab_size, int dim, std::mt19937_64& rng, int pad_index = 0) {
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  MatrixXd m(vocab_size, dim);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  m.row(pad_index).setZero();
  return m;
}

inline EncoderParams init_encoder(const ModelConfig& cfg, std::mt19937_64& rng,
                                  std::optional<MatrixXd> word_embeddings = std::nullopt) {
  cfg.validate();
  EncoderParams enc;
  if (word_embeddings) {
    require(word_embeddings->rows() == cfg.vocab_size && word_embeddings->cols() == cfg.embed_dim,
            ErrorCode::dimension, "word embedding matrix does not match vocab size x embedding dimension");
    enc.embedding = std::move(*word_embeddings);
  } else {
    enc.embedding = random_word_embeddings(cfg.vocab_size, cfg.embed_dim, rng);
  }
  const auto window = static_cast<Eigen::Index>(cfg.kernel_width) * cfg.embed_dim;
  enc.kernel = xavier_uniform(window, cfg.feature_dim, static_cast<double>(window), cfg.feature_dim, rng);
  enc.bias = VectorXd::Zero(cfg.feature_dim);
  return enc;
}

inline void init_correction(const ModelConfig& cfg, DecoderParams& dec, std::mt19937_64& rng) {
  const int in = cfg.fc_input_dim();
  if (in == 0) {
    dec.fc_weight.resize(0, 0);
    dec.fc_bias.resize(0);
    return;
  }
  dec.fc_weight = xavier_uniform(cfg.feature_dim, in, in, cfg.feature_dim, rng);
  dec.fc_bias = VectorXd::Zero(cfg.feature_dim);
}

// ---------------------------------------------------------------------------
// Forward

struct ForwardTrace {
  std::vector<int> tokens;
  int kernel_width = 1;
  CorrectionMode correction = CorrectionMode::none;
  MatrixXd windows;      // N x (s * d_e), zero outside the sequence
  MatrixXd H;            // N x d_f
  MatrixXd query_input;  // fc input for concat mode: (d_f + d_h) x L
  MatrixXd query_hat;    // d_f x L
  MatrixXd attention;    // N x L
  MatrixXd values;       // L x d_f
  VectorXd pooled_weight;  // W 1
  VectorXd logits;
  VectorXd probs;
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline MatrixXd token_windows(std::span<const int> tokens, const EncoderParams& enc, int kernel_width) {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const auto de = enc.embedding.cols();
  const int half = kernel_width / 2;
  MatrixXd windows = MatrixXd::Zero(n, kernel_width * de);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int o = 0; o < kernel_width; ++o) {
      const Eigen::Index pos = i + o - half;
      if (pos < 0 || pos >= n) continue;
      windows.block(i, o * de, 1, de) = enc.embedding.row(tokens[static_cast<std::size_t>(pos)]);
    }
  }
  return windows;
}

inline void check_tokens(std::span<const int> tokens, const EncoderParams& enc) {
  require(!tokens.empty(), ErrorCode::dimension, "cannot encode an empty token sequence");
  for (int t : tokens)
    require(t >= 0 && t < enc.embedding.rows(), ErrorCode::domain,
            "token index " + std::to_string(t) + " outside the vocabulary (map unknown words to UNK first)");
}

inline MatrixXd encode(std::span<const int> tokens, const EncoderParams& enc, int kernel_width) {
  check_tokens(tokens, enc);
  require(enc.kernel.rows() == kernel_width * enc.embedding.cols(), ErrorCode::dimension,
          "kernel shape does not match kernel width x embedding dimension");
  MatrixXd pre = token_windows(tokens, enc, kernel_width) * enc.kernel;
  pre.rowwise() += enc.bias.transpose();
  return pre.array().tanh().matrix();
}

inline MatrixXd corrected_queries(const MatrixXd& query, const MatrixXd& hyperbolic_rows, const DecoderParams& dec,
                                  CorrectionMode mode) {
  switch (mode) {
    case CorrectionMode::none:
      return query;
    case CorrectionMode::add: {
      require(hyperbolic_rows.rows() == query.cols(), ErrorCode::dimension,
              "hyperbolic rows do not match the label count");
      require(dec.fc_weight.rows() == query.rows() && dec.fc_weight.cols() == hyperbolic_rows.cols() &&
                  dec.fc_bias.size() == query.rows(),
              ErrorCode::dimension, "add-mode transform must map d_h -> d_f");
      MatrixXd q = query + dec.fc_weight * hyperbolic_rows.transpose();
      q.colwise() += dec.fc_bias;
      return q;
    }
    case CorrectionMode::concat: {
      require(hyperbolic_rows.rows() == query.cols(), ErrorCode::dimension,
              "hyperbolic rows do not match the label count");
      require(dec.fc_weight.rows() == query.rows() && dec.fc_weight.cols() == query.rows() + hyperbolic_rows.cols() &&
                  dec.fc_bias.size() == query.rows(),
              ErrorCode::dimension, "concat-mode transform must map d_f + d_h -> d_f");
      MatrixXd input(query.rows() + hyperbolic_rows.cols(), query.cols());
      input << query, hyperbolic_rows.transpose();
      MatrixXd q = dec.fc_weight * input;
      q.colwise() += dec.fc_bias;
      return q;
    }
  }
  return query;
}

// Softmax down each column with the column max subtracted.
inline MatrixXd column_softmax(const MatrixXd& scores) {
  MatrixXd a(scores.rows(), scores.cols());
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    const double mx = scores.col(c).maxCoeff();
    a.col(c) = (scores.col(c).array() - mx).exp().matrix();
    a.col(c) /= a.col(c).sum();
  }
  return a;
}

struct Decoded {
  MatrixXd attention;
  MatrixXd values;
  VectorXd logits;
  VectorXd probs;
};

inline Decoded decode(const MatrixXd& H, const MatrixXd& query_hat, const DecoderParams& dec) {
  require(query_hat.rows() == H.cols(), ErrorCode::dimension, "query rows must equal the feature dimension");
  require(dec.out_weight.rows() == H.cols() && dec.out_weight.cols() == query_hat.cols() &&
              dec.out_bias.size() == query_hat.cols(),
          ErrorCode::dimension, "output layer shape does not match d_f x L");
  Decoded d;
  d.attention = column_softmax(H * query_hat);
  d.values = d.attention.transpose() * H;
  d.logits = d.values * dec.out_weight.rowwise().sum() + dec.out_bias;
  d.probs = d.logits.unaryExpr([](double x) { return sigmoid(x); });
  return d;
}

inline Decoded decode(const MatrixXd& H, const DecoderParams& dec, const MatrixXd& hyperbolic_rows, CorrectionMode mode) {
  return decode(H, corrected_queries(dec.query, hyperbolic_rows, dec, mode), dec);
}

inline ForwardTrace forward(std::span<const int> tokens, const Parameters& params, const ModelConfig& cfg,
                            const MatrixXd& hyperbolic_rows) {
  const auto& enc = params.encoder;
  const auto& dec = params.decoder;
  check_tokens(tokens, enc);
  ForwardTrace t;
  t.tokens.assign(tokens.begin(), tokens.end());
  t.kernel_width = cfg.kernel_width;
  t.correction = cfg.correction;
  t.windows = token_windows(tokens, enc, cfg.kernel_width);
  require(enc.kernel.rows() == t.windows.cols(), ErrorCode::dimension, "kernel shape mismatch");
  MatrixXd pre = t.windows * enc.kernel;
  pre.rowwise() += enc.bias.transpose();
  t.H = pre.array().tanh().matrix();
  t.query_hat = corrected_queries(dec.query, hyperbolic_rows, dec, cfg.correction);
  if (cfg.correction == CorrectionMode::concat) {
    t.query_input.resize(dec.query.rows() + hyperbolic_rows.cols(), dec.query.cols());
    t.query_input << dec.query, hyperbolic_rows.transpose();
  }
  auto d = decode(t.H, t.query_hat, dec);
  t.attention = std::move(d.attention);
  t.values = std::move(d.values);
  t.pooled_weight = dec.out_weight.rowwise().sum();
  t.logits = std::move(d.logits);
  t.probs = std::move(d.probs);
  return t;
}

// ---------------------------------------------------------------------------
// Backward

// Exact gradients given dL/d(logits). The embedding gradient is left empty
// when the embeddings are frozen.
inline Gradients backward(const ForwardTrace& t, const Parameters& params, const ModelConfig& cfg,
                          const MatrixXd& hyperbolic_rows, const VectorXd& logit_grad) {
  const auto& enc = params.encoder;
  const auto& dec = params.decoder;
  const auto L = t.query_hat.cols();
  const auto n = t.H.rows();
  require(logit_grad.size() == L && t.attention.cols() == L && dec.query.cols() == L &&
              t.correction == cfg.correction && t.kernel_width == cfg.kernel_width &&
              static_cast<Eigen::Index>(t.tokens.size()) == n,
          ErrorCode::dimension, "backward: trace does not match parameters");

  Gradients g;
  g.decoder.out_bias = logit_grad;
  // y~ = V w + b with w = W 1, so every column of W receives V^T dy.
  const VectorXd dw = t.values.transpose() * logit_grad;
  g.decoder.out_weight = dw.replicate(1, dec.out_weight.cols());
  const MatrixXd dV = logit_grad * t.pooled_weight.transpose();  // L x d_f

  // V = A^T H
  const MatrixXd dA = t.H * dV.transpose();  // N x L
  MatrixXd dH = t.attention * dV;            // N x d_f

  // Column softmax.
  MatrixXd dS(n, L);
  for (Eigen::Index c = 0; c < L; ++c) {
    const double inner = t.attention.col(c).dot(dA.col(c));
    dS.col(c) = t.attention.col(c).cwiseProduct((dA.col(c).array() - inner).matrix());
  }
  // S = H Q'
  dH.noalias() += dS * t.query_hat.transpose();
  const MatrixXd dQhat = t.H.transpose() * dS;  // d_f x L

  switch (cfg.correction) {
    case CorrectionMode::none:
      g.decoder.query = dQhat;
      g.decoder.fc_weight = dec.fc_weight;
      g.decoder.fc_bias = dec.fc_bias;
      break;
    case CorrectionMode::add:
      g.decoder.query = dQhat;
      g.decoder.fc_weight = dQhat * hyperbolic_rows;
      g.decoder.fc_bias = dQhat.rowwise().sum();
      break;
    case CorrectionMode::concat: {
      g.decoder.fc_weight = dQhat * t.query_input.transpose();
      g.decoder.fc_bias = dQhat.rowwise().sum();
      const MatrixXd dInput = dec.fc_weight.transpose() * dQhat;
      g.decoder.query = dInput.topRows(dec.query.rows());
      break;
    }
  }
  if (cfg.correction == CorrectionMode::none) {
    g.decoder.fc_weight.setZero();
    g.decoder.fc_bias.setZero();
  }

  // H = tanh(P)
  const MatrixXd dP = dH.cwiseProduct((1.0 - t.H.array().square()).matrix());
  g.encoder.bias = dP.colwise().sum().transpose();
  g.encoder.kernel = t.windows.transpose() * dP;
  if (cfg.finetune_embeddings) {
    const MatrixXd dWindows = dP * enc.kernel.transpose();  // N x (s * d_e)
    const auto de = enc.embedding.cols();
    const int half = cfg.kernel_width / 2;
    g.encoder.embedding = MatrixXd::Zero(enc.embedding.rows(), de);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int o = 0; o < cfg.kernel_width; ++o) {
        const Eigen::Index pos = i + o - half;
        if (pos < 0 || pos >= n) continue;
        g.encoder.embedding.row(t.tokens[static_cast<std::size_t>(pos)]) += dWindows.block(i, o * de, 1, de);
      }
    }
  } else {
    g.encoder.embedding.resize(0, 0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  Parameters first_moment;
  Parameters second_moment;

  // Zero moments shaped like the parameters.
  void reset(const Parameters& params) {
    step = 0;
    first_moment = params.zeros_like();
    second_moment = params.zeros_like();
  }
};

// Tensors with an empty gradient are left untouched.
inline void adam_step(Parameters& params, const Gradients& grads, AdamState& state) {
  auto p = params.flat();
  auto g = grads.flat();
  auto m = state.first_moment.flat();
  auto v = state.second_moment.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i].second.size() == 0) continue;
    require(g[i].second.size() == p[i].second.size() && m[i].second.size() == p[i].second.size() &&
                v[i].second.size() == p[i].second.size(),
            ErrorCode::dimension, "adam: shape mismatch for '" + std::string(p[i].first) + "'");
    require(g[i].second.allFinite(), ErrorCode::numeric,
            "adam: non-finite gradient for '" + std::string(p[i].first) + "' at step " + std::to_string(state.step + 1));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i].second.size() == 0) continue;
    auto& pm = p[i].second;
    const auto& gm = g[i].second;
    auto& mm = m[i].second;
    auto& vm = v[i].second;
    mm = state.beta1 * mm + (1.0 - state.beta1) * gm;
    vm = state.beta2 * vm + (1.0 - state.beta2) * gm.cwiseProduct(gm);
    pm.array() -= state.learning_rate * (mm.array() / c1) / ((vm.array() / c2).sqrt() + state.eps);
  }
}

}  // namespace hicu
