#pragma once

// Poincare-ball embeddings of label-tree nodes trained with Riemannian SGD.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hicu/error.hpp"
#include "hicu/label_tree.hpp"
#include "hicu/text_io.hpp"

namespace hicu {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double poincare_distance(const Eigen::Ref<const VectorXd>& u, const Eigen::Ref<const VectorXd>& v) {
  require(u.size() == v.size(), ErrorCode::dimension, "distance between vectors of different size");
  const double uu = u.squaredNorm();
  const double vv = v.squaredNorm();
  require(uu < 1.0 && vv < 1.0, ErrorCode::domain, "poincare distance: argument outside the open unit ball");
  const double gamma = 1.0 + 2.0 * (u - v).squaredNorm() / ((1.0 - uu) * (1.0 - vv));
  return std::acosh(std::max(gamma, 1.0));
}

// Euclidean gradient of d(u, v) with respect to u.
inline VectorXd poincare_distance_grad(const Eigen::Ref<const VectorXd>& u, const Eigen::Ref<const VectorXd>& v) {
  const double uu = u.squaredNorm();
  const double vv = v.squaredNorm();
  const double alpha = 1.0 - uu;
  const double beta = 1.0 - vv;
  const double gamma = 1.0 + 2.0 * (u - v).squaredNorm() / (alpha * beta);
  const double root = std::sqrt(std::max(gamma * gamma - 1.0, 0.0));
  if (root < 1e-15) return VectorXd::Zero(u.size());
  const double coef = 4.0 / (beta * root);
  return coef * ((vv - 2.0 * u.dot(v) + 1.0) / (alpha * alpha) * u - v / alpha);
}

inline VectorXd riemannian_scale(const Eigen::Ref<const VectorXd>& euclid_grad, const Eigen::Ref<const VectorXd>& theta) {
  const double s = 1.0 - theta.squaredNorm();
  return euclid_grad * (s * s / 4.0);
}

inline VectorXd project_to_ball(const Eigen::Ref<const VectorXd>& theta, double ball_eps) {
  const double limit = 1.0 - ball_eps;
  const double norm = theta.norm();
  if (norm >= limit) return theta * (limit / norm);
  return theta;
}

struct EmbedConfig {
  int dim = 50;
  double learning_rate = 0.3;
  int epochs = 300;
  int burn_in_epochs = 20;
  double burn_in_lr_scale = 0.1;
  int negatives = 10;
  std::uint64_t seed = 0;
  double ball_eps = 1e-5;

  void validate() const {
    require(dim >= 2, ErrorCode::config, "embedding dimension must be >= 2");
    require(learning_rate > 0, ErrorCode::config, "embedding learning rate must be positive");
    require(epochs > 0, ErrorCode::config, "embedding epochs must be positive");
    require(burn_in_epochs > 0 && burn_in_epochs <= epochs, ErrorCode::config,
            "burn-in epochs must be positive and at most the epoch count");
    require(burn_in_lr_scale > 0, ErrorCode::config, "burn-in learning-rate scale must be positive");
    require(negatives > 0, ErrorCode::config, "negatives per positive must be positive");
    require(ball_eps > 0 && ball_eps < 1, ErrorCode::config, "ball_eps must lie in (0, 1)");
  }
};

// One row per distinct tree node; padding copies share their source row.
struct PoincareEmbedding {
  std::vector<std::string> labels;
  MatrixXd vectors;
  double ball_eps = 1e-5;

  int dim() const { return static_cast<int>(vectors.cols()); }

  std::optional<std::size_t> row_of(std::string_view label) const {
    if (index_.size() != labels.size()) rebuild_index();
    auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::string serialize() const {
    std::ostringstream out;
    out << labels.size() << ' ' << vectors.cols() << '\n';
    for (std::size_t i = 0; i < labels.size(); ++i) {
      out << labels[i];
      for (Eigen::Index j = 0; j < vectors.cols(); ++j) out << ' ' << format_double(vectors(static_cast<Eigen::Index>(i), j));
      out << '\n';
    }
    return out.str();
  }

  static PoincareEmbedding parse(std::istream& in) {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::parse, "embedding file: missing header");
    auto header = split_ws(trim(line));
    require(header.size() == 2, ErrorCode::parse, "embedding file: header must be 'n_nodes d_h'");
    auto n = static_cast<std::size_t>(parse_integer(header[0]));
    auto d = static_cast<Eigen::Index>(parse_integer(header[1]));
    PoincareEmbedding emb;
    emb.vectors.resize(static_cast<Eigen::Index>(n), d);
    for (std::size_t i = 0; i < n; ++i) {
      require(static_cast<bool>(std::getline(in, line)), ErrorCode::parse, "embedding file: truncated");
      auto f = split_ws(trim(line));
      require(f.size() == static_cast<std::size_t>(d) + 1, ErrorCode::parse,
              "embedding file line " + std::to_string(i + 2) + ": expected label plus " + std::to_string(d) + " values");
      emb.labels.emplace_back(f[0]);
      for (Eigen::Index j = 0; j < d; ++j)
        emb.vectors(static_cast<Eigen::Index>(i), j) = parse_double(f[static_cast<std::size_t>(j) + 1]);
      require(emb.vectors.row(static_cast<Eigen::Index>(i)).squaredNorm() < 1.0, ErrorCode::domain,
              "embedding row '" + emb.labels.back() + "' lies outside the unit ball");
    }
    return emb;
  }

  static PoincareEmbedding load(const std::filesystem::path& path) {
    auto in = open_input(path);
    return parse(in);
  }

 private:
  void rebuild_index() const {
    index_.clear();
    for (std::size_t i = 0; i < labels.size(); ++i) index_.emplace(labels[i], i);
  }
  mutable std::unordered_map<std::string, std::size_t> index_;
};

// Distinct-node graph of a label tree with padding copies collapsed.
struct TreeGraph {
  std::vector<std::string> labels;                    // root first, then level order
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child)
};

inline TreeGraph collapse_tree(const LabelTree& tree) {
  TreeGraph g;
  std::map<std::string, std::size_t> index;
  g.labels.emplace_back(kRootLabel);
  index.emplace(std::string(kRootLabel), 0);
  for (int k = 1; k <= tree.max_level(); ++k) {
    auto labels = tree.labels_at(k);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (tree.is_copy(k, i)) continue;
      auto child = g.labels.size();
      g.labels.push_back(labels[i]);
      index.emplace(labels[i], child);
      const auto& parent = tree.labels_at(k - 1)[tree.parent_index(k, i)];
      g.edges.emplace_back(index.at(parent), child);
    }
  }
  return g;
}

struct EdgeLoss {
  double value = 0.0;
  // (row, gradient) contributions; a row may appear more than once.
  std::vector<std::pair<std::size_t, VectorXd>> grads;
};

// Softmax edge loss -log(exp(-d(u,v)) / sum_{w in {v} + negatives} exp(-d(u,w))).
// Without negatives the loss reduces to the attractive term d(u, v).
inline EdgeLoss edge_loss(const MatrixXd& emb, std::size_t u, std::size_t v, std::span<const std::size_t> negatives) {
  const auto ui = static_cast<Eigen::Index>(u);
  const VectorXd eu = emb.row(ui).transpose();
  EdgeLoss out;
  if (negatives.empty()) {
    const VectorXd ev = emb.row(static_cast<Eigen::Index>(v)).transpose();
    out.value = poincare_distance(eu, ev);
    out.grads.emplace_back(u, poincare_distance_grad(eu, ev));
    out.grads.emplace_back(v, poincare_distance_grad(ev, eu));
    return out;
  }
  std::vector<std::size_t> candidates;
  candidates.reserve(negatives.size() + 1);
  candidates.push_back(v);
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());
  std::vector<double> dist(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    dist[i] = poincare_distance(eu, emb.row(static_cast<Eigen::Index>(candidates[i])).transpose());
  const double min_d = *std::min_element(dist.begin(), dist.end());
  double z = 0.0;
  for (double d : dist) z += std::exp(-(d - min_d));
  out.value = dist[0] - min_d + std::log(z);
  VectorXd grad_u = VectorXd::Zero(eu.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double softmax = std::exp(-(dist[i] - min_d)) / z;
    const double coef = (i == 0 ? 1.0 : 0.0) - softmax;  // dL/dd_i
    const VectorXd ew = emb.row(static_cast<Eigen::Index>(candidates[i])).transpose();
    grad_u += coef * poincare_distance_grad(eu, ew);
    out.grads.emplace_back(candidates[i], coef * poincare_distance_grad(ew, eu));
  }
  out.grads.insert(out.grads.begin(), {u, grad_u});
  return out;
}

struct EmbedTrainStats {
  double initial_mean_edge_distance = 0.0;
  double final_mean_edge_distance = 0.0;
  std::vector<double> epoch_loss;
};

inline double mean_edge_distance(const MatrixXd& emb, const TreeGraph& g) {
  if (g.edges.empty()) return 0.0;
  double s = 0.0;
  for (auto [p, c] : g.edges)
    s += poincare_distance(emb.row(static_cast<Eigen::Index>(p)).transpose(),
                           emb.row(static_cast<Eigen::Index>(c)).transpose());
  return s / static_cast<double>(g.edges.size());
}

inline PoincareEmbedding train_poincare(const LabelTree& tree, const EmbedConfig& cfg, EmbedTrainStats* stats = nullptr) {
  cfg.validate();
  const TreeGraph g = collapse_tree(tree);
  const std::size_t n = g.labels.size();
  require(n >= 2, ErrorCode::domain, "embedding training needs at least two nodes");

  std::vector<std::set<std::size_t>> adjacent(n);
  for (auto [p, c] : g.edges) {
    adjacent[p].insert(c);
    adjacent[c].insert(p);
  }

  std::mt19937_64 rng(cfg.seed);
  PoincareEmbedding emb;
  emb.labels = g.labels;
  emb.ball_eps = cfg.ball_eps;
  emb.vectors.resize(static_cast<Eigen::Index>(n), cfg.dim);
  std::uniform_real_distribution<double> init(-0.001, 0.001);
  for (Eigen::Index i = 0; i < emb.vectors.rows(); ++i)
    for (Eigen::Index j = 0; j < emb.vectors.cols(); ++j) emb.vectors(i, j) = init(rng);

  // Each undirected edge is visited in both orientations every epoch.
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (auto [p, c] : g.edges) {
    samples.emplace_back(c, p);
    samples.emplace_back(p, c);
  }
  if (stats) stats->initial_mean_edge_distance = mean_edge_distance(emb.vectors, g);

  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> negs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch < cfg.burn_in_epochs ? cfg.learning_rate * cfg.burn_in_lr_scale : cfg.learning_rate;
    std::shuffle(samples.begin(), samples.end(), rng);
    double epoch_loss = 0.0;
    for (auto [u, v] : samples) {
      negs.clear();
      const std::size_t pool = n - 1 - adjacent[u].size();
      if (pool > 0) {
        while (negs.size() < static_cast<std::size_t>(cfg.negatives)) {
          std::size_t w = pick(rng);
          if (w != u && !adjacent[u].count(w)) negs.push_back(w);
        }
      }
      auto loss = edge_loss(emb.vectors, u, v, negs);
      epoch_loss += loss.value;
      // Gradients are evaluated at the pre-step point, then applied.
      std::map<std::size_t, VectorXd> accumulated;
      for (auto& [row, grad] : loss.grads) {
        auto [it, inserted] = accumulated.emplace(row, grad);
        if (!inserted) it->second += grad;
      }
      for (auto& [row, grad] : accumulated) {
        const auto r = static_cast<Eigen::Index>(row);
        const VectorXd theta = emb.vectors.row(r).transpose();
        emb.vectors.row(r) = project_to_ball(theta - lr * riemannian_scale(grad, theta), cfg.ball_eps).transpose();
      }
    }
    if (stats) stats->epoch_loss.push_back(epoch_loss / static_cast<double>(samples.size()));
  }
  if (stats) stats->final_mean_edge_distance = mean_edge_distance(emb.vectors, g);
  return emb;
}

// Rows ordered like the level's labels; padding copies reuse their source row.
inline MatrixXd embedding_for_level(const PoincareEmbedding& emb, const AugmentedLabelTree& tree, int level) {
  auto labels = level_labels(tree, level);
  MatrixXd out(static_cast<Eigen::Index>(labels.size()), emb.vectors.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = emb.row_of(labels[i]);
    require(row.has_value(), ErrorCode::not_found, "no hyperbolic embedding for label '" + labels[i] + "'");
    out.row(static_cast<Eigen::Index>(i)) = emb.vectors.row(static_cast<Eigen::Index>(*row));
  }
  return out;
}

struct SiblingGap {
  double sibling_mean = 0.0;      // pairs sharing a parent
  double non_sibling_mean = 0.0;  // other pairs at the same depth
  std::size_t sibling_pairs = 0;
  std::size_t non_sibling_pairs = 0;
};

// Pairwise distances among distinct nodes of equal depth, split by whether
// the pair shares a parent. Means are 0 when a class has no pairs.
inline SiblingGap sibling_gap(const PoincareEmbedding& emb, const LabelTree& tree) {
  const TreeGraph g = collapse_tree(tree);
  std::vector<std::size_t> parent(g.labels.size(), 0), depth(g.labels.size(), 0);
  for (auto [p, c] : g.edges) {
    parent[c] = p;
    depth[c] = depth[p] + 1;
  }
  std::vector<Eigen::Index> row(g.labels.size());
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    auto r = emb.row_of(g.labels[i]);
    require(r.has_value(), ErrorCode::not_found, "no hyperbolic embedding for label '" + g.labels[i] + "'");
    row[i] = static_cast<Eigen::Index>(*r);
  }
  SiblingGap out;
  double sib = 0.0, non = 0.0;
  for (std::size_t a = 1; a < g.labels.size(); ++a) {
    for (std::size_t b = a + 1; b < g.labels.size(); ++b) {
      if (depth[a] != depth[b]) continue;
      const double d = poincare_distance(emb.vectors.row(row[a]).transpose(), emb.vectors.row(row[b]).transpose());
      if (parent[a] == parent[b]) {
        sib += d;
        ++out.sibling_pairs;
      } else {
        non += d;
        ++out.non_sibling_pairs;
      }
    }
  }
  if (out.sibling_pairs) out.sibling_mean = sib / static_cast<double>(out.sibling_pairs);
  if (out.non_sibling_pairs) out.non_sibling_mean = non / static_cast<double>(out.non_sibling_pairs);
  return out;
}

}  // namespace hicu
