#pragma once

// Binary cross-entropy and asymmetric loss, both consuming logits and
// returning the gradient with respect to the logits.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hicu/error.hpp"

namespace hicu {

using Eigen::VectorXd;

struct LossResult {
  double value = 0.0;
  VectorXd grad;  // dL/d(logits)
};

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void check_loss_inputs(const VectorXd& logits, const VectorXd& targets) {
  require(logits.size() == targets.size(), ErrorCode::dimension, "loss: logits and targets differ in length");
  require(logits.allFinite(), ErrorCode::numeric, "loss: non-finite logits");
}

}  // namespace detail

inline LossResult bce(const VectorXd& logits, const VectorXd& targets) {
  detail::check_loss_inputs(logits, targets);
  LossResult r;
  r.grad.resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double y = targets[i];
    // -[y log s(x) + (1-y) log(1 - s(x))] = y softplus(-x) + (1-y) softplus(x)
    r.value += y * softplus(-x) + (1.0 - y) * softplus(x);
    r.grad[i] = detail::stable_sigmoid(x) - y;
  }
  return r;
}

struct AslConfig {
  double gamma_pos = 0.0;
  double gamma_neg = 1.0;
  double margin = 0.05;
  double clamp_eps = 1e-12;

  void validate() const {
    require(gamma_pos >= 0, ErrorCode::config, "gamma_pos must be >= 0");
    require(gamma_neg >= 0, ErrorCode::config, "gamma_neg must be >= 0");
    require(margin >= 0 && margin < 1, ErrorCode::config, "margin must lie in [0, 1)");
    require(clamp_eps > 0 && clamp_eps <= 1e-3, ErrorCode::config, "clamp_eps must lie in (0, 1e-3]");
  }
};

// L = -sum_i [ y (1-p)^g+ log p + (1-y) pm^g- log(1-pm) ],  pm = max(p - m, 0).
// The focusing factors are differentiated (no stop-gradient). Probabilities
// are clamped to [eps, 1-eps] before the logs; clamped entries get zero
// gradient, as do entries at or below the margin.
inline LossResult asl(const VectorXd& logits, const VectorXd& targets, const AslConfig& cfg) {
  cfg.validate();
  detail::check_loss_inputs(logits, targets);
  const double log_lo = std::log(cfg.clamp_eps);
  const double log_hi = std::log1p(-cfg.clamp_eps);
  LossResult r;
  r.grad = VectorXd::Zero(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double y = targets[i];
    const double p = detail::stable_sigmoid(x);
    const double dp = p * (1.0 - p);

    if (y > 0) {
      const double log_p_raw = -softplus(-x);
      const double log_p = std::clamp(log_p_raw, log_lo, log_hi);
      const bool clamped = log_p != log_p_raw;
      const double q = 1.0 - p;
      const double focus = cfg.gamma_pos == 0.0 ? 1.0 : std::pow(q, cfg.gamma_pos);
      r.value += -y * focus * log_p;
      if (!clamped) {
        // d/dx [-(1-p)^g log p] = g (1-p)^g p log p - (1-p)^(g+1)
        const double focus_term = cfg.gamma_pos == 0.0 ? 0.0 : cfg.gamma_pos * focus * p * log_p;
        r.grad[i] += y * (focus_term - focus * q);
      }
    }
    if (y < 1) {
      const double w = 1.0 - y;
      if (cfg.margin == 0.0) {
        const double log_q_raw = -softplus(x);  // log(1 - p)
        const double log_q = std::clamp(log_q_raw, log_lo, log_hi);
        const bool clamped = log_q != log_q_raw;
        const double focus = cfg.gamma_neg == 0.0 ? 1.0 : std::pow(p, cfg.gamma_neg);
        r.value += -w * focus * log_q;
        if (!clamped) {
          // d/dx [-p^g log(1-p)] = -g p^g (1-p) log(1-p) + p^(g+1)
          const double focus_term = cfg.gamma_neg == 0.0 ? 0.0 : -cfg.gamma_neg * focus * (1.0 - p) * log_q;
          r.grad[i] += w * (focus_term + focus * p);
        }
      } else {
        const double pm = p - cfg.margin;
        if (pm > 0.0) {
          const double pm_c = std::min(pm, 1.0 - cfg.clamp_eps);
          const bool clamped = pm_c != pm;
          const double log_q = std::log1p(-pm_c);
          const double focus = cfg.gamma_neg == 0.0 ? 1.0 : std::pow(pm_c, cfg.gamma_neg);
          r.value += -w * focus * log_q;
          if (!clamped) {
            // d/dpm [-pm^g log(1-pm)] = -g pm^(g-1) log(1-pm) + pm^g / (1-pm)
            const double focus_term =
                cfg.gamma_neg == 0.0 ? 0.0 : -cfg.gamma_neg * std::pow(pm, cfg.gamma_neg - 1.0) * log_q;
            r.grad[i] += w * (focus_term + focus / (1.0 - pm)) * dp;
          }
        }
      }
    }
  }
  return r;
}

enum class LossKind { bce, asl };

inline std::string_view loss_name(LossKind k) { return k == LossKind::bce ? "bce" : "asl"; }

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "bce") return LossKind::bce;
  if (s == "asl") return LossKind::asl;
  fail(ErrorCode::usage, "unknown loss '" + std::string(s) + "' (expected bce|asl)");
}

struct LossConfig {
  LossKind kind = LossKind::asl;
  AslConfig asl;
};

inline LossResult compute_loss(const LossConfig& cfg, const VectorXd& logits, const VectorXd& targets) {
  return cfg.kind == LossKind::bce ? bce(logits, targets) : asl(logits, targets, cfg.asl);
}

// Mean of per-document label sums. Values are summed in sorted order so the
// result does not depend on batch order.
inline double batch_reduce(std::span<const double> per_document) {
  require(!per_document.empty(), ErrorCode::domain, "cannot reduce an empty batch");
  std::vector<double> sorted(per_document.begin(), per_document.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : sorted) sum += v;
  return sum / static_cast<double>(sorted.size());
}

}  // namespace hicu
