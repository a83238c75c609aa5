#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the code under test except for the plain
// data types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "hicu/label_tree.hpp"
#include "hicu/network.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Finite differences

inline constexpr double kStep = 1e-5;

// Central differences of `loss` with respect to every entry of `param`.
template <class Tensor, class F>
Tensor numeric_gradient(Tensor& param, F&& loss, double h = kStep) {
  Tensor grad = Tensor::Zero(param.rows(), param.cols());
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double keep = param.data()[i];
    param.data()[i] = keep + h;
    const double up = loss();
    param.data()[i] = keep - h;
    const double down = loss();
    param.data()[i] = keep;
    grad.data()[i] = (up - down) / (2 * h);
  }
  return grad;
}

// ||a - n|| / max(||a||, ||n||); zero when both are numerically zero.
template <class A, class B>
double relative_error(const A& analytic, const B& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale < 1e-10) return 0.0;
  return (analytic - numeric).norm() / scale;
}

// ---------------------------------------------------------------------------
// Metrics

// Pair counting over every (positive, negative) pair.
inline std::optional<double> auc(const std::vector<double>& s, const std::vector<double>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] < 0.5) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] > 0.5) continue;
      pairs += 1;
      if (s[i] > s[j]) num += 1;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return num / pairs;
}

inline std::vector<double> col(const MatrixXd& m, Eigen::Index c) {
  std::vector<double> v;
  for (Eigen::Index r = 0; r < m.rows(); ++r) v.push_back(m(r, c));
  return v;
}

inline std::vector<double> all(const MatrixXd& m) {
  std::vector<double> v;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return v;
}

struct Confusion {
  double tp = 0, fp = 0, fn = 0;
};

inline double f1(const Confusion& c) {
  const double d = 2 * c.tp + c.fp + c.fn;
  return d == 0 ? 0.0 : 2 * c.tp / d;
}

inline std::pair<double, double> macro_micro_f1(const MatrixXd& s, const MatrixXd& y, double thr = 0.5) {
  Confusion pooled;
  double macro = 0;
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    Confusion k;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const int pred = s(r, c) >= thr;
      const int truth = y(r, c) > 0.5;
      k.tp += pred * truth;
      k.fp += pred * (1 - truth);
      k.fn += (1 - pred) * truth;
    }
    macro += f1(k);
    pooled.tp += k.tp;
    pooled.fp += k.fp;
    pooled.fn += k.fn;
  }
  return {s.cols() ? macro / static_cast<double>(s.cols()) : 0.0, f1(pooled)};
}

// Top K by repeated selection of the highest remaining score, lowest index
// first among equals.
inline double precision_at_k(const MatrixXd& s, const MatrixXd& y, int k) {
  double total = 0;
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    std::vector<bool> taken(static_cast<std::size_t>(s.cols()), false);
    double hits = 0;
    for (int step = 0; step < k; ++step) {
      Eigen::Index best = -1;
      for (Eigen::Index c = 0; c < s.cols(); ++c) {
        if (taken[static_cast<std::size_t>(c)]) continue;
        if (best < 0 || s(r, c) > s(r, best)) best = c;
      }
      taken[static_cast<std::size_t>(best)] = true;
      hits += y(r, best) > 0.5 ? 1 : 0;
    }
    total += hits / k;
  }
  return total / static_cast<double>(s.rows());
}

// ---------------------------------------------------------------------------
// Trees

// Level-k labels reached by walking each positive leaf's path upward, using
// only the serialized (level, label, parent) rows.
inline std::set<std::string> ancestors_at(const hicu::AugmentedLabelTree& tree, const std::set<std::string>& leaves,
                                          int level) {
  std::map<std::pair<int, std::string>, std::string> parent;
  for (int k = 1; k <= tree.max_level(); ++k) {
    auto labels = tree.labels_at(k);
    for (std::size_t i = 0; i < labels.size(); ++i)
      parent[{k, labels[i]}] = tree.tree().labels_at(k - 1)[tree.parent_index(k, i)];
  }
  std::set<std::string> out;
  for (auto label : leaves) {
    for (int k = tree.max_level(); k > level; --k) label = parent.at({k, label});
    out.insert(label);
  }
  return out;
}

// Shortest-path hop count between two nodes of a rooted tree given parents.
inline int hops(const std::vector<int>& parent, int a, int b) {
  std::map<int, int> depth_a;
  for (int x = a, d = 0; x >= 0; x = parent[static_cast<std::size_t>(x)], ++d) depth_a[x] = d;
  for (int x = b, d = 0; x >= 0; x = parent[static_cast<std::size_t>(x)], ++d)
    if (auto it = depth_a.find(x); it != depth_a.end()) return it->second + d;
  return -1;
}

// Spearman correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k < j; ++k) r[idx[k]] = (static_cast<double>(i + j - 1)) / 2.0;
      i = j;
    }
    return r;
  };
  auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Random instances

inline MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale);
}

inline VectorXd random_targets(Eigen::Index n, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.4);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = b(rng) ? 1.0 : 0.0;
  return y;
}

}  // namespace oracle
