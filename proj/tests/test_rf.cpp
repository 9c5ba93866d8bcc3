#include <numeric>
#include <vector>

#include "doctest.h"
#include "micronet/rf.hpp"

using namespace micronet;

TEST_CASE("cascade extent matches the closed form for every composition") {
  // Every ordered rate list with rate sum <= 12, against the brute-force
  // impulse oracle: a pool-free cascade of 3x3 convolutions spans 1 + 2*sum.
  std::vector<std::vector<int>> stack = {{}};
  while (!stack.empty()) {
    auto rates = stack.back();
    stack.pop_back();
    const int sum = std::accumulate(rates.begin(), rates.end(), 0);
    if (!rates.empty()) {
      auto set = influence_set(schedule_from_rates(rates), 0);
      CHECK(set.extent() == 1 + 2 * sum);
    }
    for (int r = 1; sum + r <= 12; ++r) {
      auto next = rates;
      next.push_back(r);
      stack.push_back(std::move(next));
    }
  }
}

TEST_CASE("gridding detection") {
  CHECK(has_gridding(std::vector<int>{2, 2}));
  CHECK_FALSE(has_gridding(std::vector<int>{1, 2, 3}));
  CHECK_FALSE(has_gridding(std::vector<int>{1, 1, 2, 3}));
  CHECK_FALSE(has_gridding(std::vector<int>{1}));
  CHECK(has_gridding(std::vector<int>{3, 3}));
  CHECK(has_gridding(std::vector<int>{2, 4}));
  CHECK_FALSE(has_gridding(std::vector<int>{1, 1, 1}));
}

TEST_CASE("adjacent overlap is exact, not interval-based") {
  CHECK(adjacent_overlap(std::vector<int>{1, 2, 3}) > 0);
  CHECK(adjacent_overlap(std::vector<int>{1}) == 2);  // {-1,0,1} and {0,1,2} share {0,1}
  // A pure rate-2 pair reaches only even offsets; neighbors reach only odd
  // ones, so the exact overlap is zero while the intervals still intersect.
  auto sched = schedule_from_rates({2, 2});
  CHECK(adjacent_overlap(sched) == 0);
  CHECK(adjacent_interval_overlap(sched) > 0);
}

TEST_CASE("single dilated conv influence set") {
  auto set = influence_set(schedule_from_rates({3}), 0);
  REQUIRE(set.positions.size() == 3);
  CHECK(set.positions[0] == -3);
  CHECK(set.positions[1] == 0);
  CHECK(set.positions[2] == 3);
  CHECK(set.extent() == 7);
  CHECK(set.has_holes());
}

TEST_CASE("pooling widens the input-resolution footprint") {
  RateSchedule with_pool = {RfLayer::conv(1), RfLayer::pool(), RfLayer::conv(1)};
  auto set = influence_set(with_pool, 0);
  CHECK(set.extent() > influence_set(schedule_from_rates({1, 1}), 0).extent());
  CHECK_FALSE(set.has_holes());
}

TEST_CASE("domain guardrails") {
  CHECK_THROWS_AS(influence_set(schedule_from_rates({3, 3}), 0, 4), AnalysisError);
  CHECK_THROWS_AS(RfLayer::conv(0), ParamError);
}

TEST_CASE("per-sequence report for the micro variant") {
  auto rows = rf_report(ArchitectureSpec::from_name("micro"));
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.dense);  // coprime cascade: no holes at any depth
    CHECK(r.rates == std::vector<int>{1, 1, 2, 3});
    CHECK(r.adjacent_overlap > 0);
  }
  // First sequence has no pooling: closed form applies directly.
  CHECK(rows[0].extent == 1 + 2 * (1 + 1 + 2 + 3));
  CHECK(rows[1].extent > rows[0].extent);
  CHECK(rows[2].extent > rows[1].extent);

  auto csv = rf_report_csv(rows);
  CHECK(csv.rfind("sequence,rates,extent,dense,adjacent_overlap\n", 0) == 0);
  CHECK(csv.find("1,1 1 2 3,15,true,") != std::string::npos);
}
