#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "hicu/poincare.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/toys.hpp"

using namespace hicu;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

VectorXd random_in_ball(std::mt19937_64& rng, int dim, double max_norm) {
  VectorXd v = oracle::random_vector(dim, rng);
  std::uniform_real_distribution<double> r(0.0, max_norm);
  return v.normalized() * r(rng);
}

EmbedConfig small_config(std::uint64_t seed) {
  EmbedConfig cfg;
  cfg.dim = 5;
  cfg.epochs = 200;
  cfg.burn_in_epochs = 10;
  cfg.negatives = 5;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("poincare_distance closed forms") {
  CHECK(poincare_distance(vec({0.3, -0.2}), vec({0.3, -0.2})) == 0.0);
  CHECK_THAT(poincare_distance(vec({0, 0}), vec({0.5, 0})), WithinAbs(std::log(3.0), 1e-9));
  CHECK_THAT(poincare_distance(vec({0, 0}), vec({0.5, 0})), WithinAbs(std::acosh(5.0 / 3.0), 1e-12));
  CHECK(fixture::error_code_of([] { poincare_distance(vec({1.0, 0}), vec({0, 0})); }) == ErrorCode::domain);
  CHECK(fixture::error_code_of([] { poincare_distance(vec({0, 0}), vec({0.6, 0.9})); }) == ErrorCode::domain);
  CHECK(fixture::error_code_of([] { poincare_distance(vec({0, 0}), vec({0.1})); }) == ErrorCode::dimension);
}

TEST_CASE("poincare_distance is a metric on random triples") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    auto a = random_in_ball(rng, 4, 0.95), b = random_in_ball(rng, 4, 0.95), c = random_in_ball(rng, 4, 0.95);
    const double ab = poincare_distance(a, b), bc = poincare_distance(b, c), ac = poincare_distance(a, c);
    CHECK(ab >= 0);
    CHECK(ab == poincare_distance(b, a));
    CHECK(ac <= ab + bc + 1e-9);
  }
}

TEST_CASE("poincare_distance gradient matches finite differences") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 30; ++i) {
    VectorXd u = random_in_ball(rng, 3, 0.9), v = random_in_ball(rng, 3, 0.9);
    auto numeric = oracle::numeric_gradient(u, [&] { return poincare_distance(u, v); });
    CHECK(oracle::relative_error(poincare_distance_grad(u, v), numeric) < 1e-4);
  }
}

TEST_CASE("riemannian_scale and project_to_ball examples") {
  CHECK(riemannian_scale(vec({2, -4}), vec({0, 0})).isApprox(vec({0.5, -1})));
  CHECK(riemannian_scale(vec({0, 0}), vec({0.3, 0.1})) == vec({0, 0}));
  auto scaled = riemannian_scale(vec({1, 0}), vec({0.9, 0}));
  CHECK_THAT(scaled[0], WithinAbs(0.009025, 1e-15));
  CHECK(scaled[1] == 0.0);

  CHECK(project_to_ball(vec({0.3, 0.4}), 1e-5) == vec({0.3, 0.4}));
  auto p = project_to_ball(vec({2, 0}), 1e-5);
  CHECK_THAT(p[0], WithinAbs(0.99999, 1e-15));
  CHECK(p[1] == 0.0);
  CHECK(project_to_ball(vec({0, 0}), 1e-5) == vec({0, 0}));
}

TEST_CASE("edge loss gradient matches finite differences for every touched row") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 8, dim = 3;
    MatrixXd emb(n, dim);
    for (int r = 0; r < n; ++r) emb.row(r) = random_in_ball(rng, dim, 0.85).transpose();
    std::vector<std::size_t> negs;
    const int n_negs = trial % 5;  // includes the no-negative fallback
    for (int k = 0; k < n_negs; ++k) negs.push_back(2 + static_cast<std::size_t>(k));
    auto loss = edge_loss(emb, 0, 1, negs);
    MatrixXd analytic = MatrixXd::Zero(n, dim);
    for (const auto& [row, g] : loss.grads) analytic.row(static_cast<Eigen::Index>(row)) += g.transpose();
    auto numeric = oracle::numeric_gradient(emb, [&] { return edge_loss(emb, 0, 1, negs).value; });
    INFO("trial " << trial);
    CHECK(oracle::relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("embed config validation") {
  EmbedConfig cfg;
  cfg.negatives = 0;
  CHECK(fixture::error_code_of([&] { cfg.validate(); }) == ErrorCode::config);
  cfg = {};
  cfg.burn_in_epochs = cfg.epochs + 1;
  CHECK(fixture::error_code_of([&] { cfg.validate(); }) == ErrorCode::config);
  cfg = {};
  cfg.dim = 1;
  CHECK(fixture::error_code_of([&] { cfg.validate(); }) == ErrorCode::config);
}

TEST_CASE("two-node tree: training pulls the child toward the root") {
  std::vector<Path> one{fixture::path_of({"child"})};
  auto tree = LabelTree::from_paths(one);
  EmbedTrainStats stats;
  auto emb = train_poincare(tree, small_config(1), &stats);
  CHECK(stats.final_mean_edge_distance < stats.initial_mean_edge_distance);
  CHECK(emb.labels == std::vector<std::string>{"<root>", "child"});
}

TEST_CASE("toy tree training separates siblings and stays inside the ball") {
  auto tree = toy::balanced_tree(3, 3);
  auto cfg = small_config(7);
  cfg.epochs = 100;
  auto emb = train_poincare(tree, cfg);
  for (Eigen::Index r = 0; r < emb.vectors.rows(); ++r) CHECK(emb.vectors.row(r).norm() <= 1.0 - cfg.ball_eps + 1e-15);

  auto gap = sibling_gap(emb, tree);
  CHECK(gap.sibling_pairs > 0);
  CHECK(gap.non_sibling_pairs > 0);
  CHECK(gap.sibling_mean < gap.non_sibling_mean);

  // Brute-force version of the same gap on the raw matrix.
  auto g = collapse_tree(tree);
  std::vector<int> parent(g.labels.size(), -1), depth(g.labels.size(), 0);
  for (auto [p, c] : g.edges) {
    parent[c] = static_cast<int>(p);
    depth[c] = depth[p] + 1;
  }
  double sib = 0, non = 0;
  int ns = 0, nn = 0;
  std::vector<double> hops, dist;
  for (std::size_t a = 0; a < g.labels.size(); ++a) {
    for (std::size_t b = a + 1; b < g.labels.size(); ++b) {
      const double d = poincare_distance(emb.vectors.row(static_cast<Eigen::Index>(a)).transpose(),
                                         emb.vectors.row(static_cast<Eigen::Index>(b)).transpose());
      hops.push_back(oracle::hops(parent, static_cast<int>(a), static_cast<int>(b)));
      dist.push_back(d);
      if (a == 0 || depth[a] != depth[b]) continue;
      if (parent[a] == parent[b]) {
        sib += d;
        ++ns;
      } else {
        non += d;
        ++nn;
      }
    }
  }
  CHECK_THAT(gap.sibling_mean, WithinRel(sib / ns, 1e-12));
  CHECK_THAT(gap.non_sibling_mean, WithinRel(non / nn, 1e-12));
  CHECK(oracle::spearman(hops, dist) > 0);
}

TEST_CASE("embedding training is bit-reproducible and round-trips through its file") {
  auto tree = toy::balanced_tree(2, 3);
  auto cfg = small_config(9);
  cfg.epochs = 30;
  auto a = train_poincare(tree, cfg);
  auto b = train_poincare(tree, cfg);
  CHECK(a.serialize() == b.serialize());

  std::istringstream in(a.serialize());
  auto back = PoincareEmbedding::parse(in);
  CHECK(back.vectors == a.vectors);
  CHECK(back.serialize() == a.serialize());

  cfg.seed = 10;
  CHECK(train_poincare(tree, cfg).serialize() != a.serialize());
}

TEST_CASE("embedding file validation") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return PoincareEmbedding::parse(in);
  };
  CHECK(fixture::error_code_of([&] { parse(""); }) == ErrorCode::parse);
  CHECK(fixture::error_code_of([&] { parse("2 2\na 0.1 0.2\n"); }) == ErrorCode::parse);
  CHECK(fixture::error_code_of([&] { parse("1 2\na 0.1\n"); }) == ErrorCode::parse);
  CHECK(fixture::error_code_of([&] { parse("1 2\na 0.9 0.9\n"); }) == ErrorCode::domain);
}

TEST_CASE("embedding_for_level follows level order and reuses rows for padding copies") {
  std::vector<Path> paths{fixture::path_of({"A", "A1", "A1x"}), fixture::path_of({"A", "A2"}),
                          fixture::path_of({"B", "B1", "B1x"})};
  auto tree = LabelTree::from_paths(paths);
  auto aug = augment_tree(tree);
  EmbedConfig cfg = small_config(2);
  cfg.epochs = 20;
  auto emb = train_poincare(tree, cfg);
  CHECK(emb.vectors.rows() == 1 + 2 + 3 + 2);

  auto rows2 = embedding_for_level(emb, aug, 2);
  auto labels2 = level_labels(aug, 2);
  REQUIRE(rows2.rows() == 3);
  for (std::size_t i = 0; i < labels2.size(); ++i)
    CHECK(rows2.row(static_cast<Eigen::Index>(i)) == emb.vectors.row(static_cast<Eigen::Index>(*emb.row_of(labels2[i]))));

  auto rows3 = embedding_for_level(emb, aug, 3);
  auto a2 = *aug.index_of(3, "A2");
  CHECK(rows3.row(static_cast<Eigen::Index>(a2)) == rows2.row(1));

  std::vector<Path> chain{fixture::path_of({"only"})};
  auto chain_tree = LabelTree::from_paths(chain);
  auto chain_emb = train_poincare(chain_tree, small_config(1));
  auto one = embedding_for_level(chain_emb, augment_tree(chain_tree), 1);
  CHECK(one.rows() == 1);
  CHECK(one.row(0) == chain_emb.vectors.row(1));
}
