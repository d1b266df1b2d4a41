#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "quadscan/eval.hpp"
#include "quadscan/rng.hpp"

using namespace quadscan;
using namespace quadscan::eval;

namespace {

// Straightforward per-frame oracle for one threshold.
double precision_oracle(const std::vector<TrackResult>& rs, double t) {
  double acc = 0;
  for (const auto& r : rs) {
    double hit = 0;
    for (std::size_t f = 0; f < r.truth.size(); ++f) {
      const double dx = r.predicted[f].cx() - r.truth[f].cx(), dy = r.predicted[f].cy() - r.truth[f].cy();
      hit += dx * dx + dy * dy <= t * t ? 1 : 0;
    }
    acc += hit / static_cast<double>(r.truth.size());
  }
  return acc / static_cast<double>(rs.size());
}

TrackResult constant_offset(const std::string& id, double dx, std::size_t frames = 4) {
  TrackResult r{id, {}, {}, {}};
  for (std::size_t f = 0; f < frames; ++f) {
    const BBox gt{10.0 * static_cast<double>(f), 20, 8, 8};
    r.truth.push_back(gt);
    r.predicted.push_back({gt.x1 + dx, gt.y1, gt.w, gt.h});
  }
  return r;
}

std::vector<TrackResult> random_results(Rng& rng, std::size_t n) {
  std::vector<TrackResult> rs;
  const char* tags[] = {"OE", "LI", "SA", "NM"};
  for (std::size_t i = 0; i < n; ++i) {
    TrackResult r{"s" + std::to_string(i), {}, {}, {}};
    const auto frames = static_cast<std::size_t>(rng.integer(1, 12));
    for (std::size_t f = 0; f < frames; ++f) {
      BBox gt{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(2, 30), rng.uniform(2, 30)};
      r.truth.push_back(gt);
      r.predicted.push_back({gt.x1 + rng.uniform(-40, 40), gt.y1 + rng.uniform(-40, 40),
                             gt.w * rng.uniform(0.5, 1.5), gt.h * rng.uniform(0.5, 1.5)});
    }
    for (auto t : tags) {
      if (rng.uniform() < 0.4) r.tags.push_back(t);
    }
    rs.push_back(std::move(r));
  }
  return rs;
}

}  // namespace

TEST_CASE("iou hand cases") {
  CHECK(iou({0, 0, 2, 2}, {1, 1, 2, 2}) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
  CHECK(iou({0, 0, 2, 2}, {2, 2, 2, 2}) == 0.0);
  CHECK(iou({0, 0, 0, 2}, {0, 0, 2, 2}) == 0.0);
  CHECK(iou({0, 0, 4, 4}, {1, 1, 2, 2}) == doctest::Approx(0.25));
}

TEST_CASE("perfect predictions score one") {
  const std::vector<TrackResult> rs{constant_offset("a", 0), constant_offset("b", 0, 7)};
  const auto rep = score(rs);
  CHECK(rep.pr == 1.0);
  CHECK(rep.sr == 1.0);
  CHECK(rep.sequences == 2);
}

TEST_CASE("a 25 px miss with no overlap has zero precision") {
  const std::vector<TrackResult> rs{constant_offset("a", 25)};
  const auto rep = score(rs);
  CHECK(rep.pr == 0.0);
  CHECK(rep.sr == 0.0);
  CHECK(rep.precision[25] == 1.0);
  CHECK(rep.precision[24] == 0.0);
}

TEST_CASE("precision at 20 px over distances 5, 25 and 10") {
  TrackResult r{"a", {}, {}, {}};
  for (double d : {5.0, 25.0, 10.0}) {
    r.truth.push_back({50, 50, 10, 10});
    r.predicted.push_back({50 + d, 50, 10, 10});
  }
  const std::vector<TrackResult> rs{r};
  CHECK(score(rs).pr == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("curves match a per-threshold oracle and are monotone") {
  Rng rng(17);
  const auto rs = random_results(rng, 1000);
  const auto rep = score(rs);
  for (std::size_t t = 0; t < kPrecisionPoints; ++t) {
    CHECK(rep.precision[t] == doctest::Approx(precision_oracle(rs, static_cast<double>(t))).epsilon(1e-12));
  }
  for (std::size_t t = 1; t < kPrecisionPoints; ++t) CHECK(rep.precision[t] >= rep.precision[t - 1]);
  for (std::size_t t = 1; t < kSuccessPoints; ++t) CHECK(rep.success[t] <= rep.success[t - 1]);
  CHECK(rep.sr >= 0.0);
  CHECK(rep.sr <= 1.0);
}

TEST_CASE("scores do not depend on sequence order") {
  Rng rng(3);
  auto rs = random_results(rng, 50);
  const auto a = score(rs);
  std::reverse(rs.begin(), rs.end());
  const auto b = score(rs);
  CHECK(a.pr == doctest::Approx(b.pr).epsilon(1e-14));
  CHECK(a.sr == doctest::Approx(b.sr).epsilon(1e-14));
}

TEST_CASE("sequences carry equal weight regardless of length") {
  const std::vector<TrackResult> rs{constant_offset("short", 0, 1), constant_offset("long", 30, 99)};
  CHECK(score(rs).pr == 0.5);
}

TEST_CASE("breakdown identities") {
  Rng rng(5);
  auto rs = random_results(rng, 40);
  SUBCASE("unused tags are omitted") {
    const auto b = attribute_breakdown(rs, {"OE", "LI", "SA", "NM", "XX"});
    CHECK(b.by_tag.count("XX") == 0);
    CHECK(b.unknown.empty());
  }
  SUBCASE("a tag on every sequence equals the overall score") {
    for (auto& r : rs) r.tags = {"ALL"};
    const auto b = attribute_breakdown(rs);
    CHECK(b.by_tag.at("ALL").pr == score(rs).pr);
    CHECK(b.by_tag.at("ALL").sr == score(rs).sr);
  }
  SUBCASE("disjoint groups average back to the overall score") {
    for (std::size_t i = 0; i < rs.size(); ++i) rs[i].tags = {i % 3 == 0 ? "A" : "B"};
    const auto b = attribute_breakdown(rs);
    const auto& a = b.by_tag.at("A");
    const auto& bb = b.by_tag.at("B");
    const double n = static_cast<double>(rs.size());
    const double pr = (a.pr * static_cast<double>(a.sequences) + bb.pr * static_cast<double>(bb.sequences)) / n;
    CHECK(pr == doctest::Approx(score(rs).pr).epsilon(1e-12));
  }
  SUBCASE("tags outside the known list are reported") {
    rs[0].tags.push_back("ZZ");
    const auto b = attribute_breakdown(rs, {"OE", "LI", "SA", "NM"});
    CHECK(b.unknown == std::vector<std::string>{"ZZ"});
    CHECK(b.by_tag.count("ZZ") == 1);
  }
}

TEST_CASE("mismatched or empty inputs are rejected") {
  std::vector<TrackResult> none;
  CHECK_THROWS_AS(score(none), DataError);
  auto r = constant_offset("a", 0);
  r.predicted.pop_back();
  const std::vector<TrackResult> bad{r};
  CHECK_THROWS_AS(score(bad), DataError);
}

TEST_CASE("report writers") {
  const std::vector<TrackResult> rs{constant_offset("a", 0)};
  const auto rep = score(rs);
  std::ostringstream csv, json;
  write_curves_csv(csv, rep);
  write_summary_json(json, rep, attribute_breakdown(rs));
  CHECK(csv.str().rfind("kind,threshold,value\n", 0) == 0);
  CHECK(csv.str().find("precision,20,1.000000") != std::string::npos);
  CHECK(json.str().find("\"pr\": 1.0") != std::string::npos);
}
