#pragma once

// Small deterministic instances shared by the unit tests and the acceptance
// gate.

#include <Eigen/Dense>

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hicu/label_tree.hpp"
#include "hicu/network.hpp"
#include "support/oracles.hpp"

namespace toy {

// Range rows exercising every path shape: plain two-decimal codes, padded
// one-decimal and integer codes, a '*' procedure chapter and a same-start-end
// diagnosis sub-range.
inline constexpr const char* kRanges =
    "# kind\tl1_start\tl1_end\tl2_start\tl2_end\n"
    "D\t240\t279\t250\t250\n"
    "D\t390\t459\t401\t405\n"
    "D\t680\t709\t680\t686\n"
    "D\t680\t709\t690\t698\n"
    "D\tV01\tV91\tV10\tV19\n"
    "P\t35\t39\t*\t*\n";

inline hicu::RangeTable ranges() {
  std::istringstream in(kRanges);
  return hicu::RangeTable::parse(in);
}

// Complete tree with `branching` children per node, leaves at `depth`.
// Labels look like "n1.0.2" (path from the root), unique across levels.
inline hicu::LabelTree balanced_tree(int branching, int depth) {
  std::vector<hicu::Path> paths;
  std::vector<int> digits(static_cast<std::size_t>(depth), 0);
  while (true) {
    hicu::Path p;
    std::string label = "n";
    for (int k = 0; k < depth; ++k) {
      label += (k ? "." : "") + std::to_string(digits[static_cast<std::size_t>(k)]);
      p.nodes.push_back({k + 1, label});
    }
    paths.push_back(std::move(p));
    int k = depth - 1;
    while (k >= 0 && ++digits[static_cast<std::size_t>(k)] == branching) digits[static_cast<std::size_t>(k--)] = 0;
    if (k < 0) break;
  }
  return hicu::LabelTree::from_paths(paths);
}

// P -> {P1, P2}, each with two leaves; R -> R1 -> R1a. Five leaves.
inline hicu::AugmentedLabelTree three_level_tree() {
  auto path = [](std::vector<std::string> labels) {
    hicu::Path p;
    for (std::size_t i = 0; i < labels.size(); ++i) p.nodes.push_back({static_cast<int>(i) + 1, labels[i]});
    return p;
  };
  std::vector<hicu::Path> paths{path({"P", "P1", "P1a"}), path({"P", "P1", "P1b"}), path({"P", "P2", "P2a"}),
                                path({"P", "P2", "P2b"}), path({"R", "R1", "R1a"})};
  return hicu::augment_tree(hicu::LabelTree::from_paths(paths));
}

// A random small model with every tensor populated.
struct NetInstance {
  hicu::ModelConfig cfg;
  hicu::Parameters params;
  std::vector<int> tokens;
  Eigen::MatrixXd hyperbolic;  // L x d_h
};

inline NetInstance random_net(std::mt19937_64& rng, hicu::CorrectionMode mode, int kernel_width = 3) {
  NetInstance in;
  std::uniform_int_distribution<int> n_tokens(1, 6), labels(1, 4);
  in.cfg.vocab_size = 7;
  in.cfg.embed_dim = 3;
  in.cfg.kernel_width = kernel_width;
  in.cfg.feature_dim = 4;
  in.cfg.hyperbolic_dim = 2;
  in.cfg.correction = mode;
  const int L = labels(rng);
  const int n = n_tokens(rng);
  std::uniform_int_distribution<int> token(0, in.cfg.vocab_size - 1);
  for (int i = 0; i < n; ++i) in.tokens.push_back(token(rng));

  auto& e = in.params.encoder;
  e.embedding = oracle::random_matrix(in.cfg.vocab_size, in.cfg.embed_dim, rng, 0.8);
  e.kernel = oracle::random_matrix(kernel_width * in.cfg.embed_dim, in.cfg.feature_dim, rng, 0.8);
  e.bias = oracle::random_vector(in.cfg.feature_dim, rng, 0.3);
  auto& d = in.params.decoder;
  d.query = oracle::random_matrix(in.cfg.feature_dim, L, rng, 1.0);
  d.out_weight = oracle::random_matrix(in.cfg.feature_dim, L, rng, 0.8);
  d.out_bias = oracle::random_vector(L, rng, 0.3);
  const int fc_in = in.cfg.fc_input_dim();
  d.fc_weight = oracle::random_matrix(in.cfg.feature_dim, fc_in, rng, 0.6);
  d.fc_bias = fc_in ? oracle::random_vector(in.cfg.feature_dim, rng, 0.3) : Eigen::VectorXd();
  in.hyperbolic = oracle::random_matrix(L, in.cfg.hyperbolic_dim, rng, 0.5);
  return in;
}

}  // namespace toy
