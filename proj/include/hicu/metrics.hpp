#pragma once

// Multi-label evaluation: macro/micro AUC, macro/micro F1 and precision@K.
// Score and label matrices are documents x labels; labels hold 0/1.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hicu/error.hpp"

namespace hicu {

using Eigen::MatrixXd;

// Mann-Whitney statistic; ties between a positive and a negative count 0.5.
// Returns nullopt when either class is absent.
inline std::optional<double> auc_binary(std::span<const double> scores, std::span<const double> labels) {
  require(scores.size() == labels.size(), ErrorCode::dimension, "auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positives = 0.0;
  double negatives = 0.0;
  double concordant = 0.0;  // accumulated over tie groups, ascending score
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double group_pos = 0.0;
    double group_neg = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] > 0.5) group_pos += 1.0;
      else group_neg += 1.0;
      ++j;
    }
    concordant += group_pos * negatives + 0.5 * group_pos * group_neg;
    positives += group_pos;
    negatives += group_neg;
    i = j;
  }
  if (positives == 0.0 || negatives == 0.0) return std::nullopt;
  return concordant / (positives * negatives);
}

namespace detail {

inline void check_shapes(const MatrixXd& scores, const MatrixXd& labels) {
  require(scores.rows() == labels.rows() && scores.cols() == labels.cols(), ErrorCode::dimension,
          "metrics: score and label matrices differ in shape");
}

inline std::vector<double> column(const MatrixXd& m, Eigen::Index c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, c);
  return out;
}

inline std::vector<double> flatten(const MatrixXd& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

}  // namespace detail

inline std::vector<std::optional<double>> per_label_auc(const MatrixXd& scores, const MatrixXd& labels) {
  detail::check_shapes(scores, labels);
  std::vector<std::optional<double>> out;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    auto s = detail::column(scores, c);
    auto l = detail::column(labels, c);
    out.push_back(auc_binary(s, l));
  }
  return out;
}

struct AucSummary {
  double macro = 0.0;
  double micro = 0.0;
  std::size_t skipped_labels = 0;
};

inline AucSummary macro_micro_auc(const MatrixXd& scores, const MatrixXd& labels) {
  auto per_label = per_label_auc(scores, labels);
  AucSummary out;
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& a : per_label) {
    if (a) {
      sum += *a;
      ++used;
    } else {
      ++out.skipped_labels;
    }
  }
  require(used > 0, ErrorCode::domain, "macro AUC undefined: no label has both classes");
  out.macro = sum / static_cast<double>(used);
  auto micro = auc_binary(detail::flatten(scores), detail::flatten(labels));
  require(micro.has_value(), ErrorCode::domain, "micro AUC undefined: flattened labels lack a class");
  out.micro = *micro;
  return out;
}

struct F1Summary {
  double macro = 0.0;
  double micro = 0.0;
};

inline F1Summary macro_micro_f1(const MatrixXd& scores, const MatrixXd& labels, double threshold = 0.5) {
  detail::check_shapes(scores, labels);
  double tp_all = 0, fp_all = 0, fn_all = 0, macro_sum = 0;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      const bool pred = scores(r, c) >= threshold;
      const bool truth = labels(r, c) > 0.5;
      if (pred && truth) tp += 1;
      else if (pred) fp += 1;
      else if (truth) fn += 1;
    }
    const double denom = 2 * tp + fp + fn;
    macro_sum += denom == 0 ? 0.0 : 2 * tp / denom;
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  F1Summary out;
  out.macro = scores.cols() == 0 ? 0.0 : macro_sum / static_cast<double>(scores.cols());
  const double denom = 2 * tp_all + fp_all + fn_all;
  out.micro = denom == 0 ? 0.0 : 2 * tp_all / denom;
  return out;
}

// Ties in score are broken by ascending label index.
inline double precision_at_k(const MatrixXd& scores, const MatrixXd& labels, int k) {
  detail::check_shapes(scores, labels);
  require(k >= 1 && k <= scores.cols(), ErrorCode::domain,
          "precision@K: K = " + std::to_string(k) + " outside 1.." + std::to_string(scores.cols()));
  require(scores.rows() > 0, ErrorCode::domain, "precision@K: no documents");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.cols()));
  double total = 0.0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return scores(r, a) > scores(r, b); });
    double hits = 0.0;
    for (int i = 0; i < k; ++i) hits += labels(r, order[static_cast<std::size_t>(i)]) > 0.5 ? 1.0 : 0.0;
    total += hits / k;
  }
  return total / static_cast<double>(scores.rows());
}

struct EvalResult {
  // NaN marks an undefined AUC (no label with both classes).
  double macro_auc = std::numeric_limits<double>::quiet_NaN();
  double micro_auc = std::numeric_limits<double>::quiet_NaN();
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::map<int, double> p_at_k;
  std::size_t skipped_labels = 0;
};

// K values larger than the label count are skipped.
inline EvalResult evaluate(const MatrixXd& scores, const MatrixXd& labels, std::span<const int> ks,
                           double threshold = 0.5) {
  EvalResult r;
  auto per_label = per_label_auc(scores, labels);
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& a : per_label) {
    if (a) {
      sum += *a;
      ++used;
    }
  }
  r.skipped_labels = per_label.size() - used;
  if (used > 0) r.macro_auc = sum / static_cast<double>(used);
  if (auto micro = auc_binary(detail::flatten(scores), detail::flatten(labels))) r.micro_auc = *micro;
  auto f1 = macro_micro_f1(scores, labels, threshold);
  r.macro_f1 = f1.macro;
  r.micro_f1 = f1.micro;
  for (int k : ks)
    if (k >= 1 && k <= scores.cols() && scores.rows() > 0) r.p_at_k[k] = precision_at_k(scores, labels, k);
  return r;
}

struct FrequencyBucket {
  std::size_t bucket = 0;
  double min_frequency = 0.0;
  double max_frequency = 0.0;
  std::size_t labels = 0;
  std::size_t scored_labels = 0;  // labels with a defined AUC in both runs
  double mean_auc = std::numeric_limits<double>::quiet_NaN();
  double mean_baseline_auc = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();
};

// Labels sorted by ascending frequency (ties by index) and cut into
// `n_buckets` contiguous groups of near-equal size. Every label lands in
// exactly one bucket.
inline std::vector<FrequencyBucket> frequency_bucket_deltas(std::span<const std::optional<double>> auc,
                                                            std::span<const std::optional<double>> baseline_auc,
                                                            std::span<const double> frequency,
                                                            std::size_t n_buckets = 4) {
  require(auc.size() == baseline_auc.size() && auc.size() == frequency.size(), ErrorCode::dimension,
          "frequency buckets: per-label inputs differ in length");
  require(n_buckets >= 1, ErrorCode::domain, "need at least one frequency bucket");
  const std::size_t n = auc.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frequency[a] < frequency[b]; });
  std::vector<FrequencyBucket> out;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    const std::size_t lo = b * n / n_buckets;
    const std::size_t hi = (b + 1) * n / n_buckets;
    FrequencyBucket fb;
    fb.bucket = b;
    fb.labels = hi - lo;
    if (hi > lo) {
      fb.min_frequency = frequency[order[lo]];
      fb.max_frequency = frequency[order[hi - 1]];
    }
    double s = 0.0, sb = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto l = order[i];
      if (auc[l] && baseline_auc[l]) {
        s += *auc[l];
        sb += *baseline_auc[l];
        ++fb.scored_labels;
      }
    }
    if (fb.scored_labels > 0) {
      fb.mean_auc = s / static_cast<double>(fb.scored_labels);
      fb.mean_baseline_auc = sb / static_cast<double>(fb.scored_labels);
      fb.delta = fb.mean_auc - fb.mean_baseline_auc;
    }
    out.push_back(fb);
  }
  return out;
}

}  // namespace hicu
