#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "hicu/loss.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

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

double logit(double p) { return std::log(p / (1.0 - p)); }

AslConfig asl_cfg(double gp, double gn, double m) {
  AslConfig c;
  c.gamma_pos = gp;
  c.gamma_neg = gn;
  c.margin = m;
  return c;
}

}  // namespace

TEST_CASE("bce examples") {
  auto r = bce(vec({0.0}), vec({1.0}));
  CHECK_THAT(r.value, WithinAbs(std::log(2.0), 1e-15));
  CHECK_THAT(r.grad[0], WithinAbs(-0.5, 1e-15));

  CHECK(bce(vec({60.0}), vec({1.0})).value < 1e-25);
  CHECK(bce(vec({800.0}), vec({1.0})).value == 0.0);
  CHECK(std::isfinite(bce(vec({-800.0}), vec({1.0})).value));

  auto two = bce(vec({0.2, -0.3}), vec({1.0, 0.0}));
  CHECK_THAT(two.value, WithinAbs(0.5981388693815918 + 0.5543552444685271, 1e-12));

  CHECK(fixture::error_code_of([] { bce(vec({0.0, 1.0}), vec({1.0})); }) == ErrorCode::dimension);
  CHECK(fixture::error_code_of([] { bce(vec({std::nan("")}), vec({1.0})); }) == ErrorCode::numeric);
}

TEST_CASE("asl examples") {
  auto easy = asl(vec({logit(0.04)}), vec({0.0}), asl_cfg(0, 1, 0.05));
  CHECK(easy.value == 0.0);
  CHECK(easy.grad[0] == 0.0);

  auto shifted = asl(vec({logit(0.55)}), vec({0.0}), asl_cfg(0, 1, 0.05));
  CHECK_THAT(shifted.value, WithinAbs(-0.5 * std::log(0.5), 1e-12));
  CHECK_THAT(shifted.value, WithinAbs(0.3466, 5e-5));

  AslConfig bad = asl_cfg(0, 1, 1.0);
  CHECK(fixture::error_code_of([&] { asl(vec({0.0}), vec({0.0}), bad); }) == ErrorCode::config);
  bad = asl_cfg(-1, 1, 0.05);
  CHECK(fixture::error_code_of([&] { bad.validate(); }) == ErrorCode::config);
  bad = asl_cfg(0, 1, 0.05);
  bad.clamp_eps = 0.01;
  CHECK(fixture::error_code_of([&] { bad.validate(); }) == ErrorCode::config);
}

TEST_CASE("asl with no focusing and no margin reduces to bce") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(1, 10);
  const auto cfg = asl_cfg(0, 0, 0);
  for (int i = 0; i < 1000; ++i) {
    const int n = len(rng);
    VectorXd x = oracle::random_vector(n, rng, 8.0);
    VectorXd y = oracle::random_targets(n, rng);
    auto a = asl(x, y, cfg);
    auto b = bce(x, y);
    CHECK(std::abs(a.value - b.value) <= 1e-12);
    CHECK((a.grad - b.grad).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("bce gradient matches finite differences") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 25; ++i) {
    VectorXd x = oracle::random_vector(6, rng, 5.0);
    VectorXd y = oracle::random_targets(6, rng);
    auto numeric = oracle::numeric_gradient(x, [&] { return bce(x, y).value; });
    CHECK(oracle::relative_error(bce(x, y).grad, numeric) < 1e-4);
  }
}

TEST_CASE("asl gradient matches finite differences away from and next to the margin kink") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> side(1e-5, 0.02);
  std::bernoulli_distribution above(0.5);
  const double gps[] = {0.0, 0.5, 1.0};
  const double gns[] = {0.0, 1.0, 2.0, 4.0};
  const double ms[] = {0.0, 0.05, 0.2};
  int checked = 0;
  for (double gp : gps) {
    for (double gn : gns) {
      for (double m : ms) {
        const auto cfg = asl_cfg(gp, gn, m);
        for (int i = 0; i < 3; ++i) {
          VectorXd x = oracle::random_vector(8, rng, 4.0);
          VectorXd y = oracle::random_targets(8, rng);
          // Put half of the negatives within a hair of the kink, on either side.
          if (m > 0)
            for (Eigen::Index j = 0; j < x.size(); j += 2)
              if (y[j] == 0) x[j] = logit(m + (above(rng) ? side(rng) : -std::min(side(rng), m / 2)));
          auto numeric = oracle::numeric_gradient(x, [&] { return asl(x, y, cfg).value; });
          INFO("gamma+ " << gp << " gamma- " << gn << " m " << m);
          CHECK(oracle::relative_error(asl(x, y, cfg).grad, numeric) < 1e-4);
          ++checked;
        }
      }
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("loss properties") {
  std::mt19937_64 rng(4);
  const AslConfig defaults;
  for (int i = 0; i < 200; ++i) {
    VectorXd x = oracle::random_vector(5, rng, 30.0);
    VectorXd y = oracle::random_targets(5, rng);
    CHECK(bce(x, y).value >= 0);
    CHECK(asl(x, y, defaults).value >= 0);
  }
  // Lowering the prediction on a negative label never raises the loss.
  for (double m : {0.0, 0.05}) {
    const auto cfg = asl_cfg(0, 1, m);
    double prev = std::numeric_limits<double>::infinity();
    for (double p = 0.99; p > 0.001; p -= 0.01) {
      const double v = asl(vec({logit(p)}), vec({0.0}), cfg).value;
      CHECK(v <= prev);
      prev = v;
    }
  }
  // Larger gamma- down-weights negatives above the margin.
  for (double p : {0.1, 0.3, 0.6, 0.9}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double gn : {0.0, 0.5, 1.0, 2.0, 4.0}) {
      const double v = asl(vec({logit(p)}), vec({0.0}), asl_cfg(0, gn, 0.05)).value;
      CHECK(v <= prev);
      prev = v;
    }
  }
}

TEST_CASE("asl clamps instead of taking the log of zero") {
  auto r = asl(vec({-800.0, 800.0}), vec({1.0, 0.0}), asl_cfg(0, 1, 0.0));
  CHECK(std::isfinite(r.value));
  CHECK_THAT(r.value, WithinRel(-2 * std::log(1e-12), 1e-9));
  CHECK(r.grad.allFinite());
}

TEST_CASE("batch_reduce") {
  std::vector<double> one{2.5};
  CHECK(batch_reduce(one) == 2.5);
  std::vector<double> two{1.0, 3.0};
  CHECK(batch_reduce(two) == 2.0);
  std::vector<double> a{0.1, 1e16, 0.7, -1e16, 0.3};
  std::vector<double> b{-1e16, 0.3, 0.1, 1e16, 0.7};
  CHECK(batch_reduce(a) == batch_reduce(b));
  std::vector<double> none;
  CHECK(fixture::error_code_of([&] { batch_reduce(none); }) == ErrorCode::domain);
}

TEST_CASE("loss kind parsing") {
  CHECK(parse_loss_kind("bce") == LossKind::bce);
  CHECK(loss_name(LossKind::asl) == "asl");
  CHECK(fixture::error_code_of([] { parse_loss_kind("focal"); }) == ErrorCode::usage);
}
