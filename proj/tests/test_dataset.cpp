#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "ivsurv/dataset.hpp"
#include "ivsurv/errors.hpp"
#include "ivsurv/simulate.hpp"

using namespace ivsurv;

namespace {

std::string temp_path(const std::string& stem) {
  return std::string("/tmp/ivsurv_test_") + stem + ".csv";
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

}  // namespace

TEST_CASE("load_cohort parses a small CSV") {
  const std::string path = temp_path("basic");
  write_file(path,
             "time,event,a,z,x1\n"
             "1.5,1,1,1,0.2\n"
             "2.0,0,0,0,-0.3\n"
             "0.7,1,0,1,1.1\n"
             "3.2,0,1,0,0.0\n");
  const Cohort c = load_cohort(path);
  CHECK(c.size() == 4);
  CHECK(c.covariate_dim() == 1);
  CHECK(c[0].time_obs == doctest::Approx(1.5));
  CHECK(c[2].covariates[0] == doctest::Approx(1.1));
  CHECK(c[1].event == false);
}

TEST_CASE("load_cohort rejects bad values with row context") {
  const std::string path = temp_path("badevent");
  write_file(path,
             "time,event,a,z,x1\n"
             "1.5,1,1,1,0.2\n"
             "2.0,2,0,0,-0.3\n");
  CHECK_THROWS_WITH_AS(load_cohort(path), doctest::Contains("event not in {0,1}"),
                       DataError);

  write_file(path,
             "time,event,a,z,x1\n"
             "1.5,1,1,1,abc\n"
             "2.0,0,0,0,-0.3\n");
  CHECK_THROWS_AS(load_cohort(path), DataError);

  write_file(path,
             "time,event,a,z,x1\n"
             "1.5,1,1,1,\n"
             "2.0,0,0,0,-0.3\n");
  CHECK_THROWS_AS(load_cohort(path), DataError);  // missing value rejected

  write_file(path, "time,event,a,x1\n1,1,1,0\n2,0,0,1\n");
  CHECK_THROWS_WITH_AS(load_cohort(path), doctest::Contains("missing column 'z'"),
                       DataError);
}

TEST_CASE("load_cohort enforces sample-level positivity") {
  const std::string path = temp_path("allz1");
  write_file(path,
             "time,event,a,z,x1\n"
             "1.5,1,1,1,0.2\n"
             "2.0,0,0,1,-0.3\n"
             "0.7,1,0,1,1.1\n");
  CHECK_THROWS_WITH_AS(load_cohort(path), doctest::Contains("instrument level 0 absent"),
                       DataError);
}

TEST_CASE("cohort CSV round-trips at full precision") {
  const GeneratedData gen = generate({DgpSet::set1_weak, 60, 1, 99});
  const std::string p1 = temp_path("round1");
  const std::string p2 = temp_path("round2");
  write_cohort(gen.cohort, p1);
  const Cohort back = load_cohort(p1);
  REQUIRE(back.size() == gen.cohort.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].time_obs == gen.cohort[i].time_obs);  // exact
    CHECK(back[i].event == gen.cohort[i].event);
    CHECK(back[i].treatment == gen.cohort[i].treatment);
    CHECK(back[i].instrument == gen.cohort[i].instrument);
    for (int j = 0; j < back.covariate_dim(); ++j) {
      CHECK(back[i].covariates[j] == gen.cohort[i].covariates[j]);
    }
  }
  write_cohort(back, p2);
  std::ifstream f1(p1), f2(p2);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {});
  const std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
}

namespace {

std::vector<RawEncounter> two_provider_encounters(int n_a, int treated_a, int n_b,
                                                  int treated_b) {
  std::vector<RawEncounter> out;
  auto push = [&](const std::string& id, bool treated, int i) {
    RawEncounter e;
    e.provider_id = id;
    e.treated = treated;
    e.time_obs = 1.0 + 0.1 * static_cast<double>(i);
    e.event = i % 2 == 0;
    e.covariates = Eigen::VectorXd::Constant(1, 0.5 * i);
    out.push_back(std::move(e));
  };
  int i = 0;
  for (int k = 0; k < n_a; ++k) push("A", k < treated_a, i++);
  for (int k = 0; k < n_b; ++k) push("B", k < treated_b, i++);
  return out;
}

}  // namespace

TEST_CASE("build_preference_iv assigns levels by threshold") {
  // both providers above an 0.18 threshold: all kept, all assigned level 1,
  // and the constant instrument then trips the positivity error
  auto enc = two_provider_encounters(10, 3, 10, 4);
  PreferenceIvReport high;
  CHECK_THROWS_WITH_AS(build_preference_iv(enc, 0.18, 5, &high),
                       doctest::Contains("instrument level 0 absent"), DataError);
  REQUIRE(high.providers.size() == 2);
  for (const auto& p : high.providers) {
    CHECK(p.kept);
    CHECK(p.instrument);
  }
  CHECK(high.rows_excluded == 0);

  // 1/10 vs 9/10 at threshold 0.5 splits the groups
  enc = two_provider_encounters(10, 1, 10, 9);
  PreferenceIvReport report;
  const Cohort c = build_preference_iv(enc, 0.5, 5, &report);
  CHECK(c.size() == 20);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c[i].instrument == (i >= 10));  // provider A first, then B
  }
  CHECK(report.rows_excluded == 0);
  REQUIRE(report.providers.size() == 2);
  CHECK(report.providers[0].fraction_treated == doctest::Approx(0.1));
  CHECK(report.providers[1].fraction_treated == doctest::Approx(0.9));
}

TEST_CASE("build_preference_iv drops providers below min_patients") {
  auto enc = two_provider_encounters(4, 1, 10, 9);
  // provider A has 4 encounters < min_patients 5 -> its rows are removed;
  // the rest is constant-instrument, which must error
  CHECK_THROWS_AS(build_preference_iv(enc, 0.5, 5), DataError);

  // with a third provider the kept cohort is valid and A's rows are gone
  auto enc3 = two_provider_encounters(4, 1, 10, 9);
  for (int k = 0; k < 8; ++k) {
    RawEncounter e;
    e.provider_id = "C";
    e.treated = k < 2;
    e.time_obs = 2.0 + k;
    e.event = k % 2 == 0;
    e.covariates = Eigen::VectorXd::Constant(1, 0.0);
    enc3.push_back(std::move(e));
  }
  PreferenceIvReport report;
  const Cohort c = build_preference_iv(enc3, 0.5, 5, &report);
  CHECK(c.size() == 18);  // 4 rows excluded
  CHECK(report.rows_excluded == 4);

  CHECK_THROWS_AS(build_preference_iv(enc3, 0.5, 100), DataError);  // all excluded
  CHECK_THROWS_WITH_AS(build_preference_iv(enc3, 0.0, 5),
                       doctest::Contains("threshold must be in (0,1)"), ConfigError);
}

TEST_CASE("build_preference_iv is invariant to encounter order") {
  auto enc = two_provider_encounters(10, 1, 10, 9);
  PreferenceIvReport r1;
  const Cohort c1 = build_preference_iv(enc, 0.5, 5, &r1);

  std::mt19937 rng(3);
  std::shuffle(enc.begin(), enc.end(), rng);
  PreferenceIvReport r2;
  const Cohort c2 = build_preference_iv(enc, 0.5, 5, &r2);

  // same provider-level decisions and the same multiset of rows
  REQUIRE(r1.providers.size() == r2.providers.size());
  for (std::size_t i = 0; i < r1.providers.size(); ++i) {
    CHECK(r1.providers[i].provider_id == r2.providers[i].provider_id);
    CHECK(r1.providers[i].instrument == r2.providers[i].instrument);
    CHECK(r1.providers[i].kept == r2.providers[i].kept);
  }
  auto key = [](const ObservedRecord& r) {
    return std::make_tuple(r.time_obs, r.event, r.treatment, r.instrument,
                           r.covariates[0]);
  };
  std::vector<std::tuple<double, bool, bool, bool, double>> k1, k2;
  for (const auto& r : c1.records()) k1.push_back(key(r));
  for (const auto& r : c2.records()) k2.push_back(key(r));
  std::sort(k1.begin(), k1.end());
  std::sort(k2.begin(), k2.end());
  CHECK(k1 == k2);
}

TEST_CASE("event_time_quantile matches a sort-based oracle") {
  std::vector<ObservedRecord> recs;
  for (int i = 0; i < 5; ++i) {
    ObservedRecord r;
    r.time_obs = static_cast<double>(i + 1);  // {1..5}
    r.event = i % 2 == 0;
    r.treatment = i % 2 == 0;
    r.instrument = i < 2;
    r.covariates = Eigen::VectorXd::Zero(1);
    recs.push_back(r);
  }
  const Cohort c5{std::vector<ObservedRecord>(recs)};
  CHECK(event_time_quantile(c5, 0.5) == doctest::Approx(3.0));

  recs.pop_back();  // {1..4}
  const Cohort c4(std::move(recs));
  CHECK(event_time_quantile(c4, 0.5) == doctest::Approx(2.5));

  // generated sample vs an independent sort/interpolation oracle
  const GeneratedData gen = generate({DgpSet::set1_weak, 400, 1, 2024});
  std::vector<double> times;
  for (const auto& r : gen.cohort.records()) times.push_back(r.time_obs);
  std::sort(times.begin(), times.end());
  const double h = (times.size() - 1) * 0.3;
  const std::size_t lo = static_cast<std::size_t>(h);
  const double oracle = times[lo] + (h - lo) * (times[lo + 1] - times[lo]);
  CHECK(event_time_quantile(gen.cohort, 0.3) == doctest::Approx(oracle).epsilon(1e-14));
}
