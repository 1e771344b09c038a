#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_int.hpp>
#include <doctest.h>

#include "misclass/stats.hpp"
#include "support/test_util.hpp"

using namespace misclass;
using boost::multiprecision::cpp_rational;

namespace {

// Exact value of a finite double as a rational.
cpp_rational exact(double x) {
  int e = 0;
  const double m = std::frexp(x, &e);
  const auto mant = static_cast<long long>(std::ldexp(m, 53));
  cpp_rational r(mant);
  const int shift = e - 53;
  cpp_rational scale(1);
  for (int k = 0; k < std::abs(shift); ++k) scale *= 2;
  return shift >= 0 ? cpp_rational(r * scale) : cpp_rational(r / scale);
}

// True when `got` is the correctly rounded double of num/den.
bool correctly_rounded(double got, std::uint64_t num, std::uint64_t den) {
  const cpp_rational target(cpp_rational(num) / cpp_rational(den));
  const cpp_rational err = abs(exact(got) - target);
  const double up = std::nextafter(got, INFINITY);
  const double down = std::nextafter(got, -INFINITY);
  return err <= abs(exact(up) - target) && err <= abs(exact(down) - target);
}

ConfusionCounts random_counts(std::mt19937_64& rng, std::size_t c, std::uint64_t max, double zero_prob) {
  auto counts = ConfusionCounts::zeros(c);
  std::uniform_int_distribution<std::uint64_t> v(0, max);
  std::bernoulli_distribution zero(zero_prob);
  for (auto& x : counts.counts) x = zero(rng) ? 0 : v(rng);
  return counts;
}

ClassificationRecord make_record(std::size_t truth, std::size_t pred, std::vector<double> scores) {
  return {"x", truth, pred, {std::move(scores)}, "m"};
}

}  // namespace

TEST_SUITE("stats") {

TEST_CASE("tally agrees with a per-pair brute-force recount") {
  std::mt19937_64 rng(10);
  std::vector<ClassificationRecord> records;
  for (std::size_t k = 0; k < 10000; ++k) records.push_back(testutil::random_record(rng, 10, k));
  const auto counts = tally(records);
  REQUIRE(counts.num_classes == 10);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      std::uint64_t n = 0;
      for (const auto& r : records) n += r.true_label == i && r.predicted_label == j;
      CHECK(counts.at(i, j) == n);
      total += counts.at(i, j);
    }
  }
  CHECK(total == records.size());
}

TEST_CASE("tally edge cases") {
  CHECK(tally({}, 4) == ConfusionCounts::zeros(4));
  CHECK_THROWS_AS(tally({}), Error);

  std::vector<ClassificationRecord> correct;
  for (std::size_t k = 0; k < 9; ++k) correct.push_back(make_record(k % 3, k % 3, k % 3 == 0   ? std::vector{0.5, 0.3, 0.2}
                                                                                : k % 3 == 1 ? std::vector{0.2, 0.5, 0.3}
                                                                                             : std::vector{0.2, 0.3, 0.5}));
  const auto diag = tally(correct);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(diag.at(i, j) == (i == j ? 3u : 0u));
  }
  const auto r = rate_table(diag);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.u[i] == 0.0);
    CHECK(r.u_defined[i]);
    CHECK_FALSE(r.row_defined[i]);
  }

  auto mixed = correct;
  mixed.push_back(make_record(0, 0, {0.6, 0.4}));
  try {
    tally(mixed);
    FAIL("expected a shape mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::shape_mismatch);
  }
}

TEST_CASE("u and V are correctly rounded rationals on random count matrices") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + trial % 9;
    const auto counts = random_counts(rng, c, trial % 2 ? 50 : 100000, 0.3);
    const auto rates = rate_table(counts);
    for (std::size_t i = 0; i < c; ++i) {
      std::uint64_t n = 0, miss = 0;
      for (std::size_t j = 0; j < c; ++j) {
        n += counts.at(i, j);
        if (j != i) miss += counts.at(i, j);
      }
      REQUIRE(rates.u_defined[i] == (n > 0));
      if (n > 0) {
        CHECK(correctly_rounded(rates.u[i], miss, n));
      } else {
        CHECK(rates.u[i] == 0.0);
      }
      REQUIRE(rates.row_defined[i] == (miss > 0));
      double row_sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        if (j == i || miss == 0) {
          CHECK(rates.cond(i, j) == 0.0);
        } else {
          CHECK(correctly_rounded(rates.cond(i, j), counts.at(i, j), miss));
        }
        row_sum += rates.cond(i, j);
      }
      if (miss > 0) CHECK(std::abs(row_sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("hand-counted rows") {
  auto counts = ConfusionCounts::zeros(4);
  counts.at(0, 0) = 80;
  counts.at(0, 1) = 5;
  counts.at(0, 2) = 15;
  counts.at(2, 3) = 7;
  counts.at(3, 3) = 1000;
  const auto r = rate_table(counts);
  CHECK(r.cond(0, 1) == 0.25);
  CHECK(r.cond(0, 2) == 0.75);
  CHECK(r.u[0] == 0.2);
  CHECK(r.cond(2, 3) == 1.0);
  CHECK(r.u[2] == 1.0);
  CHECK_FALSE(r.u_defined[1]);
  CHECK(r.u[3] == 0.0);

  auto acc = ConfusionCounts::zeros(2);
  acc.at(0, 0) = 933;
  acc.at(0, 1) = 67;
  CHECK(rate_table(acc).u[0] == doctest::Approx(0.067).epsilon(1e-15));
}

TEST_CASE("homogeneity: the 2x2 table [[10,20],[20,10]]") {
  const std::vector<std::vector<std::uint64_t>> t{{10, 20}, {20, 10}};
  const auto h = chi_squared_homogeneity(t);
  CHECK(std::abs(h.statistic - 20.0 / 3.0) <= 1e-12);
  CHECK(h.degrees_of_freedom == 1);
  CHECK(std::abs(h.p_value - boost::math::gamma_q(0.5, 10.0 / 3.0)) <= 1e-12);
  CHECK(std::abs(h.p_value - 0.00982) <= 1e-5);
}

TEST_CASE("homogeneity: proportional rows give zero and order does not matter") {
  const std::vector<std::vector<std::uint64_t>> same{{3, 5, 7}, {3, 5, 7}, {6, 10, 14}};
  const auto h = chi_squared_homogeneity(same);
  CHECK(h.statistic == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(h.p_value == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::uint64_t> v(1, 40);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<std::uint64_t>> t(4, std::vector<std::uint64_t>(6));
    for (auto& row : t) {
      for (auto& x : row) x = v(rng);
    }
    const double base = chi_squared_homogeneity(t).statistic;
    auto shuffled = t;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(chi_squared_homogeneity(shuffled).statistic == doctest::Approx(base).epsilon(1e-12));
    const bool proportional = std::all_of(t.begin(), t.end(), [&](const auto& row) {
      for (std::size_t c = 0; c < 6; ++c) {
        if (row[c] * t[0][0] != t[0][c] * row[0]) return false;
      }
      return true;
    });
    CHECK((base > 1e-9) == !proportional);
  }
}

TEST_CASE("homogeneity drops empty columns and rows") {
  const std::vector<std::vector<std::uint64_t>> t{{1, 0, 3}, {2, 0, 5}, {0, 0, 0}};
  const auto h = chi_squared_homogeneity(t);
  CHECK(h.dropped_columns == std::vector<std::size_t>{1});
  CHECK(h.dropped_rows == std::vector<std::size_t>{2});
  CHECK(h.degrees_of_freedom == 1);
  CHECK(h.warnings.size() == 2);
  const std::vector<std::vector<std::uint64_t>> reduced{{1, 3}, {2, 5}};
  CHECK(h.statistic == doctest::Approx(chi_squared_homogeneity(reduced).statistic).epsilon(1e-14));

  CHECK_THROWS_AS(chi_squared_homogeneity(std::vector<std::vector<std::uint64_t>>{{1, 2}}), Error);
  CHECK_THROWS_AS(chi_squared_homogeneity(std::vector<std::vector<std::uint64_t>>{{0, 0}, {0, 0}}), Error);
  CHECK_THROWS_AS(chi_squared_homogeneity(std::vector<std::vector<std::uint64_t>>{{1, 2}, {1}}), Error);
}

TEST_CASE("score ratios and differences") {
  CategoryMap map{{{0, 1}, MisclassCategory::morphology}, {{2, 0}, MisclassCategory::interference}};
  const std::vector<ClassificationRecord> records{
      make_record(0, 1, {0.3, 0.6, 0.1}),
      make_record(0, 0, {0.6, 0.3, 0.1}),  // correct
      make_record(1, 2, {0.1, 0.2, 0.7}),  // unmapped
      make_record(2, 0, {0.5, 0.1, 0.4}),
  };
  const auto ratios = score_ratios(records, map);
  REQUIRE(ratios.at(MisclassCategory::morphology).values.size() == 1);
  CHECK(ratios.at(MisclassCategory::morphology).values[0] == 0.5);
  CHECK(ratios.at(MisclassCategory::interference).values[0] == doctest::Approx(0.8).epsilon(1e-15));
  const auto diffs = score_samples(records, map, ScoreMeasure::difference);
  CHECK(diffs.at(MisclassCategory::morphology).values[0] == doctest::Approx(-0.3).epsilon(1e-15));

  std::mt19937_64 rng(2);
  std::vector<ClassificationRecord> logs;
  for (std::size_t k = 0; k < 2000; ++k) logs.push_back(testutil::random_record(rng, 10, k));
  CategoryMap all;
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      if (i != j) all[{i, j}] = i < j ? MisclassCategory::morphology : MisclassCategory::interference;
    }
  }
  std::size_t n = 0;
  for (const auto& [cat, sample] : score_ratios(logs, all)) {
    for (double v : sample.values) {
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
      ++n;
    }
  }
  CHECK(n > 1000);

  const std::vector<ClassificationRecord> zero{make_record(0, 1, {0.0, 0.0, 0.0})};
  CHECK_THROWS_AS(score_ratios(zero, map), Error);
}

TEST_CASE("category maps: defaults and JSON round trip") {
  const auto d = default_category_map();
  CHECK(d.size() == 6);
  CHECK(d.at({3, 5}) == MisclassCategory::morphology);
  CHECK(d.at({9, 1}) == MisclassCategory::morphology);
  CHECK(d.at({6, 3}) == MisclassCategory::interference);
  CHECK(d.at({8, 0}) == MisclassCategory::interference);
  CHECK(category_map_from_json(to_json(d)) == d);
  CHECK_THROWS_AS(category_map_from_json(nlohmann::json::parse(R"({"pairs":[{"from":1,"to":1,"category":"morphology"}]})")),
                  Error);
  CHECK_THROWS_AS(category_map_from_json(nlohmann::json::parse(R"({"pairs":[{"from":1,"to":2,"category":"other"}]})")),
                  Error);
}

TEST_CASE("CSV exports are heatmap-shaped") {
  auto counts = ConfusionCounts::zeros(3);
  counts.at(0, 1) = 2;
  counts.at(0, 2) = 2;
  counts.at(1, 1) = 4;
  const auto rates = rate_table(counts);
  const auto v = v_to_csv(rates);
  CHECK(v.rfind("true\\misclassified,class0,class1,class2,row_defined\n", 0) == 0);
  CHECK(v.find("class0,0,0.5,0.5,1\n") != std::string::npos);
  CHECK(v.find("class1,0,0,0,0\n") != std::string::npos);
  const auto u = u_to_csv(counts, rates);
  CHECK(u.find("0,class0,4,4,1,1\n") != std::string::npos);
  CHECK(u.find("2,class2,0,0,0,0\n") != std::string::npos);
  const auto c = counts_to_csv(counts);
  CHECK(std::count(c.begin(), c.end(), '\n') == 4);
}

}
