#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "hicu/metrics.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hicu;
using Catch::Matchers::WithinAbs;

namespace {

// Scores drawn from a small grid so ties are common.
std::pair<MatrixXd, MatrixXd> random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> rows(1, 8), cols(1, 6), grid(0, 6);
  std::bernoulli_distribution pos(0.35), coarse(0.5);
  const int r = rows(rng), c = cols(rng);
  MatrixXd s(r, c), y(r, c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      s(i, j) = coarse(rng) ? grid(rng) / 6.0 : u(rng);
      y(i, j) = pos(rng) ? 1.0 : 0.0;
    }
  return {s, y};
}

MatrixXd mat(int r, int c, std::initializer_list<double> v) {
  MatrixXd m(r, c);
  auto it = v.begin();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

}  // namespace

TEST_CASE("auc_binary examples") {
  std::vector<double> s{0.9, 0.1, 0.8}, y{1, 0, 0};
  CHECK(auc_binary(s, y) == 1.0);
  std::vector<double> flat{0.3, 0.3, 0.3, 0.3}, y2{1, 0, 1, 0};
  CHECK(auc_binary(flat, y2) == 0.5);
  std::vector<double> sep{0.1, 0.2, 0.7, 0.9}, y3{0, 0, 1, 1};
  CHECK(auc_binary(sep, y3) == 1.0);
  std::vector<double> two{0.1, 0.2}, ones{1, 1};
  CHECK_FALSE(auc_binary(two, ones).has_value());
}

TEST_CASE("macro and micro auc examples") {
  MatrixXd s = mat(4, 1, {0.1, 0.4, 0.35, 0.8});
  MatrixXd y = mat(4, 1, {0, 0, 1, 1});
  auto single = macro_micro_auc(s, y);
  CHECK(single.macro == 0.75);
  CHECK(single.micro == 0.75);

  MatrixXd s2 = mat(3, 2, {0.1, 0.9, 0.8, 0.2, 0.3, 0.4});
  MatrixXd y2 = mat(3, 2, {0, 0, 1, 0, 0, 0});
  auto r = macro_micro_auc(s2, y2);
  CHECK(r.skipped_labels == 1);
  CHECK(r.macro == 1.0);
  CHECK(r.micro == *oracle::auc(oracle::all(s2), oracle::all(y2)));

  MatrixXd none = MatrixXd::Zero(3, 2);
  CHECK(fixture::error_code_of([&] { macro_micro_auc(s2, none); }) == ErrorCode::domain);
}

TEST_CASE("f1 examples") {
  MatrixXd y = mat(3, 2, {1, 0, 0, 1, 1, 1});
  auto perfect = macro_micro_f1(y, y);
  CHECK(perfect.macro == 1.0);
  CHECK(perfect.micro == 1.0);
  auto silent = macro_micro_f1(MatrixXd::Zero(3, 2), y);
  CHECK(silent.micro == 0.0);
  CHECK(silent.macro == 0.0);

  // label 0: tp 1 fp 1 fn 1 -> 0.5; label 1: tp 2 fp 0 fn 0 -> 1.0; pooled tp 3 fp 1 fn 1.
  MatrixXd s = mat(3, 2, {0.9, 0.1, 0.6, 0.7, 0.2, 0.5});
  auto r = macro_micro_f1(s, y);
  CHECK(r.macro == 0.75);
  CHECK(r.micro == 0.75);
}

TEST_CASE("precision at k examples") {
  MatrixXd s = mat(1, 6, {0.9, 0.8, 0.7, 0.6, 0.5, 0.4});
  MatrixXd y = mat(1, 6, {1, 0, 1, 0, 0, 1});
  CHECK(precision_at_k(s, y, 5) == 0.4);
  CHECK(precision_at_k(s, MatrixXd::Ones(1, 6), 3) == 1.0);
  CHECK(precision_at_k(s, MatrixXd::Zero(1, 6), 3) == 0.0);
  CHECK(fixture::error_code_of([&] { precision_at_k(s, y, 7); }) == ErrorCode::domain);
  CHECK(fixture::error_code_of([&] { precision_at_k(s, y, 0); }) == ErrorCode::domain);

  // Ties go to the lower label index.
  MatrixXd tied = mat(1, 3, {0.5, 0.5, 0.5});
  CHECK(precision_at_k(tied, mat(1, 3, {1, 0, 0}), 1) == 1.0);
  CHECK(precision_at_k(tied, mat(1, 3, {0, 0, 1}), 2) == 0.0);
}

TEST_CASE("every metric matches exhaustive oracles on random matrices") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto [s, y] = random_instance(rng);
    INFO("trial " << trial);

    auto per_label = per_label_auc(s, y);
    double sum = 0;
    int used = 0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      auto expect = oracle::auc(oracle::col(s, c), oracle::col(y, c));
      REQUIRE(per_label[static_cast<std::size_t>(c)].has_value() == expect.has_value());
      if (expect) {
        CHECK(std::abs(*per_label[static_cast<std::size_t>(c)] - *expect) <= 1e-12);
        sum += *expect;
        ++used;
      }
    }
    auto micro = oracle::auc(oracle::all(s), oracle::all(y));
    std::vector<int> ks{1, 2, 3, 5, 8};
    auto r = evaluate(s, y, ks);
    if (used) CHECK(std::abs(r.macro_auc - sum / used) <= 1e-12);
    else CHECK(std::isnan(r.macro_auc));
    if (micro) CHECK(std::abs(r.micro_auc - *micro) <= 1e-12);
    else CHECK(std::isnan(r.micro_auc));
    CHECK(r.skipped_labels == static_cast<std::size_t>(s.cols() - used));

    auto [macro_f1, micro_f1] = oracle::macro_micro_f1(s, y);
    CHECK(std::abs(r.macro_f1 - macro_f1) <= 1e-12);
    CHECK(std::abs(r.micro_f1 - micro_f1) <= 1e-12);

    for (int k : ks) {
      if (k > s.cols()) {
        CHECK(r.p_at_k.count(k) == 0);
        continue;
      }
      CHECK(std::abs(r.p_at_k.at(k) - oracle::precision_at_k(s, y, k)) <= 1e-12);
    }
  }
}

TEST_CASE("ranking metrics are invariant under increasing transforms") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    auto [s, y] = random_instance(rng);
    // Scalar exp: Eigen's packet exp can round equal inputs differently.
    MatrixXd e = s.unaryExpr([](double v) { return std::exp(v); });
    MatrixXd a = (3.0 * s.array() - 1.0).matrix();
    auto base = evaluate(s, y, {});
    for (const MatrixXd* t : {&e, &a}) {
      auto other = evaluate(*t, y, {});
      CHECK((std::isnan(base.macro_auc) ? std::isnan(other.macro_auc) : base.macro_auc == other.macro_auc));
      CHECK((std::isnan(base.micro_auc) ? std::isnan(other.micro_auc) : base.micro_auc == other.micro_auc));
      for (int k = 1; k <= s.cols(); ++k) CHECK(precision_at_k(*t, y, k) == precision_at_k(s, y, k));
    }
  }
}

TEST_CASE("precision at k falls with k when all positives rank first") {
  MatrixXd s = mat(2, 5, {0.9, 0.8, 0.1, 0.2, 0.3, 0.1, 0.95, 0.9, 0.2, 0.3});
  MatrixXd y = mat(2, 5, {1, 1, 0, 0, 0, 0, 1, 1, 0, 0});
  double prev = 2.0;
  for (int k = 1; k <= 5; ++k) {
    const double p = precision_at_k(s, y, k);
    CHECK(p <= prev);
    prev = p;
  }
}

TEST_CASE("micro f1 is one exactly when predictions equal labels") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    auto [s, y] = random_instance(rng);
    const MatrixXd pred = (s.array() >= 0.5).cast<double>().matrix();
    const double f = macro_micro_f1(s, y).micro;
    CHECK(f >= 0.0);
    if (pred == y && y.sum() > 0) CHECK(f == 1.0);
    if (f == 1.0) CHECK(pred == y);
  }
}

TEST_CASE("frequency buckets partition the labels") {
  std::mt19937_64 rng(24);
  for (std::size_t n : {0u, 1u, 3u, 7u, 20u}) {
    std::vector<std::optional<double>> auc, base;
    std::vector<double> freq;
    std::uniform_int_distribution<int> f(0, 5);
    for (std::size_t i = 0; i < n; ++i) {
      auc.push_back(i % 5 == 4 ? std::nullopt : std::optional<double>(0.5 + 0.01 * static_cast<double>(i)));
      base.push_back(0.5);
      freq.push_back(f(rng));
    }
    for (std::size_t buckets : {1u, 2u, 4u}) {
      auto out = frequency_bucket_deltas(auc, base, freq, buckets);
      REQUIRE(out.size() == buckets);
      std::size_t total = 0, scored = 0;
      double prev_max = -1;
      for (const auto& b : out) {
        total += b.labels;
        scored += b.scored_labels;
        if (b.labels) {
          CHECK(b.min_frequency >= prev_max);
          CHECK(b.min_frequency <= b.max_frequency);
          prev_max = b.max_frequency;
        }
        if (b.scored_labels) CHECK_THAT(b.delta, WithinAbs(b.mean_auc - b.mean_baseline_auc, 1e-15));
        else CHECK(std::isnan(b.delta));
      }
      CHECK(total == n);
      CHECK(scored == static_cast<std::size_t>(std::count_if(auc.begin(), auc.end(), [](auto a) { return a.has_value(); })));
    }
  }
  std::vector<std::optional<double>> a{0.5}, b;
  std::vector<double> fr{1.0};
  CHECK(fixture::error_code_of([&] { frequency_bucket_deltas(a, b, fr); }) == ErrorCode::dimension);
}
