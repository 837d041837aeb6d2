#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "scdmd/error.hpp"
#include "scdmd/schedule.hpp"

using namespace scdmd;

TEST_CASE("make_grid: shift 1 is the uniform grid") {
  const TimestepGrid g = make_grid(4, 1.0, GridKind::kInference);
  REQUIRE(g.size() == 4);
  CHECK(g.points[0] == 1.0);
  CHECK(g.points[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(g.points[2] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g.points[3] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("make_grid: shift 12 with four points") {
  const TimestepGrid g = make_grid(4, 12.0, GridKind::kInference);
  CHECK(g.points[0] == 1.0);
  CHECK(g.points[1] == doctest::Approx(9.0 / 9.25).epsilon(1e-15));
  CHECK(g.points[2] == doctest::Approx(6.0 / 6.5).epsilon(1e-15));
  CHECK(g.points[3] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(g.shift == 12.0);
  CHECK(g.kind == GridKind::kInference);
}

TEST_CASE("make_grid: monotone and pinned at 1 for many (n, shift)") {
  for (std::size_t n = 1; n <= 40; ++n) {
    for (double shift : {0.2, 1.0, 3.0, 12.0, 100.0}) {
      const TimestepGrid g = make_grid(n, shift, GridKind::kTraining);
      CHECK(g.points.front() == 1.0);
      for (std::size_t i = 1; i < g.size(); ++i) CHECK(g.points[i] < g.points[i - 1]);
      CHECK(g.min() > 0.0);
    }
  }
}

TEST_CASE("make_grid rejects degenerate arguments") {
  CHECK_THROWS_AS(make_grid(0, 1.0, GridKind::kTraining), DomainError);
  CHECK_THROWS_AS(make_grid(4, 0.0, GridKind::kTraining), DomainError);
}

TEST_CASE("shift_time fixes the endpoints") {
  for (double s : {0.5, 1.0, 12.0}) {
    CHECK(shift_time(1.0, s) == 1.0);
    CHECK(shift_time(0.0, s) == 0.0);
  }
}

TEST_CASE("grid helpers") {
  const TimestepGrid g = make_grid(4, 1.0, GridKind::kInference);
  CHECK(g.contains(0.5));
  CHECK_FALSE(g.contains(0.6));
  CHECK(g.next(0) == g.points[1]);
  CHECK(g.next(3) == 0.0);
  const TimestepGrid t = with_terminal(g);
  CHECK(t.size() == 5);
  CHECK(t.points.back() == 0.0);
  const TimestepGrid train = make_grid(8, 1.0, GridKind::kTraining);
  const auto inside = points_between(train, 0.5, 1.0);
  CHECK(inside == std::vector<double>{0.875, 0.75, 0.625});
}

TEST_CASE("sample_triple: minimum training point has no eligible t_e") {
  const TimestepGrid train = make_grid(8, 12.0, GridKind::kTraining);
  const TimestepGrid infer = make_grid(4, 12.0, GridKind::kInference);
  Rng rng(1);
  CHECK_FALSE(sample_triple(rng, train.min(), train, infer).has_value());
}

TEST_CASE("sample_triple rejects t_s outside the training grid") {
  const TimestepGrid train = make_grid(8, 1.0, GridKind::kTraining);
  const TimestepGrid infer = make_grid(4, 1.0, GridKind::kInference);
  Rng rng(2);
  CHECK_THROWS_AS(sample_triple(rng, 0.6, train, infer), DomainError);
}

TEST_CASE("sample_triple follows the two-stage uniform law") {
  const TimestepGrid train = make_grid(8, 1.0, GridKind::kTraining);
  const TimestepGrid infer = make_grid(4, 1.0, GridKind::kInference);
  // Enumerate the law: t_e uniform over {0.75, 0.5, 0.25}, then t_m uniform
  // over training points in (t_e, 1).
  std::map<std::pair<double, double>, double> law;
  for (double te : {0.75, 0.5, 0.25}) {
    const auto mids = points_between(train, te, 1.0);
    for (double tm : mids) law[{te, tm}] += (1.0 / 3.0) / static_cast<double>(mids.size());
  }
  CHECK(law.size() == 1 + 3 + 5);

  Rng rng(3);
  const int n = 100000;
  std::map<std::pair<double, double>, int> hits;
  for (int i = 0; i < n; ++i) {
    const auto tr = sample_triple(rng, 1.0, train, infer);
    REQUIRE(tr.has_value());
    ++hits[{tr->t_e, tr->t_m}];
  }
  CHECK(hits.size() == law.size());
  for (const auto& [key, p] : law) {
    const double sd = std::sqrt(n * p * (1 - p));
    CHECK(std::abs(hits[key] - n * p) <= 3 * sd);
  }
}

TEST_CASE("sample_triple: ordering and membership over 10^6 draws") {
  const TimestepGrid train = make_grid(8, 12.0, GridKind::kTraining);
  for (std::size_t k : {2u, 4u, 8u}) {
    const TimestepGrid infer = with_terminal(make_grid(k, 12.0, GridKind::kInference));
    Rng rng(4 + k);
    std::size_t bad = 0, empty = 0;
    const int n = 1000000 / 3;
    for (int i = 0; i < n; ++i) {
      const double ts = train.points[rng.index(train.size())];
      const auto tr = sample_triple(rng, ts, train, infer);
      if (!tr) {
        ++empty;
        continue;
      }
      const bool ok = tr->t_s == ts && tr->t_s > tr->t_m && tr->t_m > tr->t_e &&
                      train.contains(tr->t_m) &&
                      std::find(infer.points.begin(), infer.points.end(), tr->t_e) !=
                          infer.points.end();
      bad += !ok;
    }
    CHECK(bad == 0);
    CHECK(empty < static_cast<std::size_t>(n));
  }
}

TEST_CASE("sample_triple does not assume nested grids") {
  // Shifted 8-point training grid against an unshifted 4-point inference grid.
  const TimestepGrid train = make_grid(8, 12.0, GridKind::kTraining);
  const TimestepGrid infer = make_grid(4, 1.0, GridKind::kInference);
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const auto tr = sample_triple(rng, 1.0, train, infer);
    REQUIRE(tr.has_value());
    CHECK(tr->t_m > tr->t_e);
    CHECK(train.contains(tr->t_m));
  }
}
