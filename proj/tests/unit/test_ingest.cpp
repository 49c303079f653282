#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "disenpoi/error.hpp"
#include "disenpoi/ingest.hpp"
#include "disenpoi/random.hpp"
#include "tempdir.hpp"

using namespace disenpoi;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

CheckInRecord rec(const std::string& u, const std::string& p, std::int64_t t, double lat = 35.0,
                  double lon = 139.0) {
  return {u, p, lat, lon, t};
}

// Random corpus: users with 2..12 visits over `pois` POIs.
std::vector<CheckInRecord> random_corpus(Rng& rng, std::size_t users, std::size_t pois) {
  std::vector<CheckInRecord> out;
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t n = 2 + uniform_index(rng, 11);
    for (std::size_t v = 0; v < n; ++v) {
      const auto p = uniform_index(rng, pois);
      out.push_back(rec("u" + std::to_string(u), "p" + std::to_string(p),
                        static_cast<std::int64_t>(uniform_index(rng, 1000)),
                        35.0 + 0.001 * static_cast<double>(p), 139.0));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("native line maps fields directly") {
  const auto r = parse_checkin_line("u1\tp9\t35.6812\t139.7671\t1349870400", InputFormat::NativeTsv);
  CHECK(r == CheckInRecord{"u1", "p9", 35.6812, 139.7671, 1349870400});
}

TEST_CASE("line validation errors") {
  CHECK(code_of([] { parse_checkin_line("u1\tp9\t95.0\t139.0\t1", InputFormat::NativeTsv); }) ==
        ErrorCode::CoordinateOutOfRange);
  CHECK(code_of([] { parse_checkin_line("u1\tp9\t35.0\t181.0\t1", InputFormat::NativeTsv); }) ==
        ErrorCode::CoordinateOutOfRange);
  CHECK(code_of([] { parse_checkin_line("u1\tp9\t35.0\t139.0", InputFormat::NativeTsv); }) ==
        ErrorCode::ColumnCountMismatch);
  CHECK(code_of([] { parse_checkin_line("u1\tp9\t35.0\t139.0\tnoon", InputFormat::NativeTsv); }) ==
        ErrorCode::TimestampUnparsable);
  CHECK(code_of([] { parse_checkin_line("u1\tp9\t35.0\t139.0\t-5", InputFormat::NativeTsv); }) ==
        ErrorCode::TimestampUnparsable);
  CHECK(code_of([] { parse_checkin_line("u\xff\tp9\t35.0\t139.0\t1", InputFormat::NativeTsv); }) ==
        ErrorCode::InvalidEncoding);
}

TEST_CASE("foursquare adapter parses the UTC column") {
  const auto r = parse_checkin_line(
      "470\t49bbd6c0f964a520f4531fe3\t4bf58dd8d48988d127951735\tArts & Crafts Store\t"
      "40.719810375488535\t-74.00258103213994\t-240\tTue Apr 03 18:00:09 +0000 2012",
      InputFormat::FoursquareTsv);
  CHECK(r.user_id == "470");
  CHECK(r.lat == doctest::Approx(40.719810375488535).epsilon(1e-15));
  // 2012-04-03T18:00:09Z
  CHECK(r.timestamp == 1333476009);
  CHECK(parse_foursquare_utc("Thu Jan 01 00:00:00 +0000 1970") == 0);
  CHECK(parse_foursquare_utc("Thu Jan 01 09:00:00 +0900 1970") == 0);
  CHECK(code_of([] { parse_foursquare_utc("Tue Foo 03 18:00:09 +0000 2012"); }) ==
        ErrorCode::TimestampUnparsable);
}

TEST_CASE("parse_checkins counts malformed lines and aborts above 1%") {
  std::string good;
  for (int i = 0; i < 199; ++i) good += "u\tp\t1.0\t2.0\t" + std::to_string(i) + "\n";
  {
    std::istringstream in(good + "\nbroken line\n");
    ParseReport rep;
    const auto records = parse_checkins(in, InputFormat::NativeTsv, &rep);
    CHECK(records.size() == 199);
    CHECK(rep.lines == 200);
    CHECK(rep.malformed == 1);
    CHECK(records[5].timestamp == 5);
  }
  {
    std::istringstream in(good + "bad\nbad\nbad\n");
    CHECK(code_of([&] { parse_checkins(in, InputFormat::NativeTsv); }) ==
          ErrorCode::ColumnCountMismatch);
  }
}

TEST_CASE("histories sort by time, keep file order on ties, drop singletons") {
  const std::vector<CheckInRecord> records = {
      rec("u", "a", 3), rec("u", "b", 1), rec("u", "c", 2), rec("solo", "a", 5),
      rec("w", "x", 7), rec("w", "y", 7)};
  const HistoryBuild h = build_histories(records);
  REQUIRE(h.histories.size() == 2);
  CHECK(h.dropped_users == 1);
  const auto& v = h.histories[0].visits;
  // POI indices in first-appearance order: a 0, b 1, c 2, x 3, y 4.
  CHECK(v == std::vector<Visit>{{1, 1}, {2, 2}, {0, 3}});
  CHECK(h.histories[1].visits == std::vector<Visit>{{3, 7}, {4, 7}});
  CHECK(h.user_ids == std::vector<std::string>{"u", "w"});
  CHECK(code_of([] { build_histories({}); }) == ErrorCode::EmptyCorpus);
}

TEST_CASE("first coordinates win and conflicts are counted") {
  const auto h = build_histories({rec("u", "a", 1, 10.0, 20.0), rec("u", "a", 2, 11.0, 20.0)});
  CHECK(h.poi_table[0] == LatLon{10.0, 20.0});
  CHECK(h.coordinate_conflicts == 1);
}

TEST_CASE("samples for history [a,b,c]") {
  UserHistory h{0, {{0, 1}, {1, 2}, {2, 3}}};
  const std::vector<LatLon> table(6);
  const DatasetSplit s = generate_samples({h}, table, 11);
  REQUIRE(s.train.size() == 2);
  CHECK(s.train[0] == Sample{0, {0}, 1, 1});
  CHECK(s.train[1].context == std::vector<PoiIndex>{0});
  CHECK(s.train[1].label == 0);
  CHECK(s.train[1].target >= 3);
  REQUIRE(s.test.size() + s.validation.size() == 2);
  std::vector<Sample> eval = s.test;
  eval.insert(eval.end(), s.validation.begin(), s.validation.end());
  const auto pos = std::find_if(eval.begin(), eval.end(), [](const Sample& x) { return x.label; });
  CHECK(*pos == Sample{0, {0, 1}, 2, 1});
}

TEST_CASE("negatives are uniform over unvisited POIs") {
  // History {a,b,c} over {a..f}: each of d, e, f within 2% of 1/3.
  const std::vector<PoiIndex> visited = {0, 1, 2};
  std::size_t counts[6] = {};
  const std::size_t draws = 30000;
  for (std::size_t t = 0; t < draws; ++t) ++counts[draw_negative(5, 0, t, visited, 6)];
  CHECK(counts[0] + counts[1] + counts[2] == 0);
  double chi2 = 0.0;
  for (int p = 3; p < 6; ++p) {
    const double freq = static_cast<double>(counts[p]) / draws;
    CHECK(std::abs(freq - 1.0 / 3.0) < 0.02);
    const double expected = draws / 3.0;
    chi2 += (counts[p] - expected) * (counts[p] - expected) / expected;
  }
  // 99.9% quantile of chi-square with 2 degrees of freedom.
  CHECK(chi2 < 13.82);
  CHECK(code_of([] { draw_negative(1, 0, 1, {0, 1}, 2); }) == ErrorCode::NoNegativeCandidates);
}

TEST_CASE("max_seq_len keeps the most recent visits") {
  UserHistory h{0, {}};
  for (PoiIndex p = 0; p < 8; ++p) h.visits.push_back({p, p});
  const DatasetSplit s = generate_samples({h}, std::vector<LatLon>(20), 1, 3);
  for (const auto& smp : s.train) CHECK(smp.context.size() <= 3);
  CHECK(s.train.back().context == std::vector<PoiIndex>{3, 4, 5});
}

TEST_CASE("sample invariants on random corpora") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = keyed_rng({seed, 77});
    const auto corpus = random_corpus(rng, 40, 60);
    const HistoryBuild hb = build_histories(corpus);
    const DatasetSplit s = generate_samples(hb.histories, hb.poi_table, seed);

    std::vector<std::set<PoiIndex>> visited(hb.histories.size());
    std::size_t expected_pos = 0;
    for (const auto& h : hb.histories) {
      for (const auto& v : h.visits) visited[h.user_index].insert(v.poi);
      expected_pos += h.visits.size() - 1;
    }
    std::size_t pos = 0, neg = 0;
    std::set<UserIndex> eval_users;
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      for (const auto& smp : *part) {
        CHECK_FALSE(smp.context.empty());
        if (smp.label) {
          ++pos;
        } else {
          ++neg;
          CHECK(visited[smp.user].count(smp.target) == 0);
        }
        if (part != &s.train && smp.label) eval_users.insert(smp.user);
      }
    }
    CHECK(pos == expected_pos);
    CHECK(neg == pos);
    CHECK(eval_users.size() == hb.histories.size());
    const auto diff = static_cast<long>(s.test.size()) - static_cast<long>(s.validation.size());
    CHECK(std::abs(diff) <= 1);
    // The final transition of every user is held out of training.
    for (const auto& smp : s.train) {
      CHECK(smp.context.size() + 1 < hb.histories[smp.user].visits.size());
    }
    // Dense indices cover contiguous ranges.
    CHECK(hb.poi_table.size() == hb.poi_ids.size());
    CHECK(std::set<std::string>(hb.poi_ids.begin(), hb.poi_ids.end()).size() == hb.poi_ids.size());
    for (std::size_t u = 0; u < hb.histories.size(); ++u) CHECK(hb.histories[u].user_index == u);
    // Determinism.
    CHECK(generate_samples(hb.histories, hb.poi_table, seed) == s);
  }
}

TEST_CASE("train_fraction_slice") {
  DatasetSplit s;
  s.num_users = 2;
  s.num_pois = 50;
  for (PoiIndex i = 0; i < 10; ++i) s.train.push_back({0, {i}, i + 1, 1});
  for (PoiIndex i = 0; i < 3; ++i) s.train.push_back({1, {i}, i + 1, 1});
  s.test.push_back({0, {1}, 2, 1});

  CHECK(train_fraction_slice(s, 1.0, 3) == s);
  const DatasetSplit fifth = train_fraction_slice(s, 0.2, 3);
  CHECK(std::count_if(fifth.train.begin(), fifth.train.end(),
                      [](const Sample& x) { return x.user == 0; }) == 2);
  CHECK(std::count_if(fifth.train.begin(), fifth.train.end(),
                      [](const Sample& x) { return x.user == 1; }) == 1);
  CHECK(fifth.test == s.test);
  const DatasetSplit sixty = train_fraction_slice(s, 0.6, 3);
  CHECK(sixty.train.size() == 6 + 2);
  std::set<PoiIndex> seen;
  for (const auto& x : sixty.train) CHECK(seen.insert(x.target + 100 * x.user).second);
  CHECK(code_of([&] { train_fraction_slice(s, 0.5, 3); }) == ErrorCode::InvalidFraction);
}

TEST_CASE("sample lines and bundles round-trip") {
  Rng rng = keyed_rng({9});
  const auto hb = build_histories(random_corpus(rng, 25, 40));
  const DatasetSplit s = generate_samples(hb.histories, hb.poi_table, 4);
  for (const auto& smp : s.train) CHECK(sample_from_json_line(sample_to_json_line(smp)) == smp);

  testing::TempDir dir;
  BundleMeta meta;
  meta.num_users = s.num_users;
  meta.num_pois = s.num_pois;
  meta.seed = 4;
  meta.format = "native-tsv";
  write_bundle(dir.path(), s, meta);
  BundleMeta back_meta;
  const DatasetSplit back = read_bundle(dir.path(), &back_meta);
  CHECK(back == s);
  CHECK(back_meta.seed == 4);
  CHECK(back_meta.num_pois == s.num_pois);
  CHECK(code_of([] { sample_from_json_line("{\"user\": 0}"); }) == ErrorCode::CorruptFile);
}
