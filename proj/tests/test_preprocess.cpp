#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "airglyph/preprocess.hpp"
#include "airglyph/rng.hpp"
#include "test_util.hpp"

using namespace airglyph;

namespace {

Window random_window(std::size_t t, Rng& rng, double lo = -50.0, double hi = 50.0) {
  Window w;
  w.values.resize(t);
  for (auto& v : w.values) {
    for (int a = 0; a < 3; ++a) v[a] = rng.uniform(lo, hi);
  }
  return w;
}

Recording from_values(const std::vector<Sample>& samples, double rate = 100.0) {
  Recording r;
  r.id = "fixture";
  r.subject = "s01";
  r.rate_hz = rate;
  r.letter = LetterLabel::from_char('A');
  r.samples = samples;
  return r;
}

}  // namespace

TEST_CASE("resample: constant signal stays constant") {
  std::vector<Sample> s(37, Sample{1.5, -2.0, 0.25});
  const Window w = resample(from_values(s), 64);
  REQUIRE(w.length() == 64);
  for (const auto& v : w.values) {
    CHECK(v[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(v[2] == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("resample to the recording's own length is the identity") {
  Rng rng(1);
  std::vector<Sample> s(50);
  for (auto& v : s) {
    for (int a = 0; a < 3; ++a) v[a] = rng.uniform(-10, 10);
  }
  const Recording rec = from_values(s);
  const Window w = resample(rec, 50);
  for (std::size_t i = 0; i < 50; ++i) {
    for (int a = 0; a < 3; ++a) CHECK(std::abs(w.values[i][a] - s[i][a]) <= 1e-12);
  }
}

TEST_CASE("resample: linear ramp keeps its endpoints and slope exactly") {
  std::vector<Sample> s(100);
  for (std::size_t i = 0; i < 100; ++i) {
    const double v = static_cast<double>(i) / 99.0;
    s[i] = {v, v, v};
  }
  const Window w = resample(from_values(s), 50);
  for (std::size_t j = 0; j < 50; ++j) {
    const double expect = static_cast<double>(j) / 49.0;
    CHECK(std::abs(w.values[j][0] - expect) <= 1e-12);
  }
  CHECK(w.values.front()[0] == 0.0);
  CHECK(w.values.back()[0] == 1.0);
}

TEST_CASE("resample rejects tiny inputs") {
  CHECK_THROWS_AS((void)resample(from_values({{0, 0, 0}}), 8), ValidationError);
  CHECK_THROWS_AS((void)resample(from_values({{0, 0, 0}, {1, 1, 1}}), 1), ValidationError);
}

TEST_CASE("normalize: constant axis maps to zeros, two-point axis to +/-1") {
  Window w;
  w.values = {{1.0, 0.0, 5.0}, {1.0, 2.0, 5.0}};
  const Window n = normalize(w);
  CHECK(n.values[0][0] == 0.0);
  CHECK(n.values[1][0] == 0.0);
  CHECK(n.values[0][1] == doctest::Approx(-1.0));
  CHECK(n.values[1][1] == doctest::Approx(1.0));
  CHECK(n.values[0][2] == 0.0);
  CHECK(n.normalized);
}

TEST_CASE("normalize: random window gets mean 0 and std 1 per axis") {
  Rng rng(7);
  const Window n = normalize(random_window(200, rng));
  for (int a = 0; a < 3; ++a) {
    double mean = 0.0;
    for (const auto& v : n.values) mean += v[a];
    mean /= 200.0;
    double var = 0.0;
    for (const auto& v : n.values) var += (v[a] - mean) * (v[a] - mean);
    var /= 200.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
  }
}

TEST_CASE("pseudo-text matches the golden file byte for byte") {
  Window w;
  w.values = {{1.0, -0.0004, 0.123456},
              {-2.5, 3.14159, -0.5},
              {0.0006, -0.0006, 2.0},
              {123.4567, -99.9999, 0.0}};
  const std::string text = serialize_pseudo_text(w, 3);
  const std::string golden =
      testutil::read_file(std::filesystem::path(AIRGLYPH_TEST_DATA) / "golden_pseudo_text.txt");
  CHECK(text == golden);
}

TEST_CASE("signed zero is rendered without sign") {
  Window w;
  w.values = {{-0.0004, -0.0, 0.0}};
  CHECK(serialize_pseudo_text(w, 3) == "t,ax,ay,az\n0,0.000,0.000,0.000\n");
}

TEST_CASE("serialize/parse round-trip stays within the quantization bound") {
  Rng rng(99);
  double max_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Window w = random_window(16, rng);
    const Window back = parse_pseudo_text(serialize_pseudo_text(w, 3));
    REQUIRE(back.length() == w.length());
    for (std::size_t i = 0; i < w.length(); ++i) {
      for (int a = 0; a < 3; ++a) max_err = std::max(max_err, std::abs(back.values[i][a] - w.values[i][a]));
    }
  }
  CHECK(max_err <= 0.5e-3 + 1e-9);
}

TEST_CASE("parse_pseudo_text reports the offending line") {
  CHECK_THROWS_WITH_AS((void)parse_pseudo_text("t,ax,ay,az\n0,1.0,2.0,bogus\n"),
                       doctest::Contains("line 2"), ValidationError);
  CHECK_THROWS_WITH_AS((void)parse_pseudo_text("t,ax,ay,az\n0,1.0,2.0\n"),
                       doctest::Contains("line 2"), ValidationError);
  CHECK_THROWS_AS((void)parse_pseudo_text("t,ax,ay,az\n"), ValidationError);
  CHECK_THROWS_AS((void)parse_pseudo_text(""), ValidationError);
  CHECK_THROWS_AS((void)parse_pseudo_text("wrong,header\n0,1,2,3\n"), ValidationError);
}

TEST_CASE("reconstruct: zero acceleration collapses to the origin") {
  const Recording rec = from_values(std::vector<Sample>(64, Sample{0, 0, 0}));
  const Polyline3 p = reconstruct_trajectory(rec);
  for (const auto& pt : p.points) {
    for (int a = 0; a < 3; ++a) CHECK(pt[a] == 0.0);
  }
}

TEST_CASE("constant acceleration integrates to exactly half c t^2 pre-detrend") {
  const double c = 2.75;
  const double rate = 100.0;
  std::vector<Sample> s(128, Sample{c, 0.0, 0.0});
  const Recording rec = from_values(s, rate);
  const auto pos = integrate_twice(rec);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    CHECK(pos[i][0] == doctest::Approx(0.5 * c * t * t).epsilon(1e-12));
    CHECK(pos[i][1] == 0.0);
    CHECK(pos[i][2] == 0.0);
  }
}

TEST_CASE("double integration is linear in the acceleration input") {
  Rng rng(5);
  const Window wa = random_window(80, rng, -3, 3);
  const Window wb = random_window(80, rng, -3, 3);
  std::vector<Sample> sum(80);
  for (std::size_t i = 0; i < 80; ++i) {
    for (int a = 0; a < 3; ++a) sum[i][a] = wa.values[i][a] + wb.values[i][a];
  }
  const auto pa = integrate_twice(from_values(wa.values));
  const auto pb = integrate_twice(from_values(wb.values));
  const auto ps = integrate_twice(from_values(sum));
  for (std::size_t i = 0; i < 80; ++i) {
    for (int a = 0; a < 3; ++a) {
      CHECK(ps[i][a] == doctest::Approx(pa[i][a] + pb[i][a]).epsilon(1e-9));
    }
  }
}
