#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace disenpoi {

using PoiIndex = std::uint32_t;
using UserIndex = std::uint32_t;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const LatLon&, const LatLon&) = default;
};

struct CheckInRecord {
  std::string user_id;
  std::string poi_id;
  double lat = 0.0;
  double lon = 0.0;
  std::int64_t timestamp = 0;

  friend bool operator==(const CheckInRecord&, const CheckInRecord&) = default;
};

enum class InputFormat { NativeTsv, FoursquareTsv };

InputFormat parse_input_format(std::string_view name);
std::string_view to_string(InputFormat format);

/// Parses one line. Throws Error with ColumnCountMismatch,
/// CoordinateOutOfRange, TimestampUnparsable or InvalidEncoding.
CheckInRecord parse_checkin_line(std::string_view line, InputFormat format);

/// Parses "Tue Apr 03 18:00:09 +0000 2012" into unix seconds.
std::int64_t parse_foursquare_utc(std::string_view text);

struct ParseReport {
  std::size_t lines = 0;      // non-empty lines seen
  std::size_t malformed = 0;  // lines rejected
  std::vector<std::string> messages;  // first few rejection messages
};

/// Malformed lines are skipped and counted. When more than
/// `max_malformed_ratio` of the non-empty lines are malformed, the error
/// of the first rejected line is rethrown with a summary.
std::vector<CheckInRecord> parse_checkins(std::istream& in, InputFormat format,
                                          ParseReport* report = nullptr,
                                          double max_malformed_ratio = 0.01);

struct Visit {
  PoiIndex poi = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Visit&, const Visit&) = default;
};

struct UserHistory {
  UserIndex user_index = 0;
  std::vector<Visit> visits;
};

struct HistoryBuild {
  std::vector<UserHistory> histories;
  std::vector<LatLon> poi_table;       // indexed by PoiIndex
  std::vector<std::string> user_ids;   // indexed by UserIndex
  std::vector<std::string> poi_ids;    // indexed by PoiIndex
  std::size_t dropped_users = 0;       // fewer than two visits
  std::size_t coordinate_conflicts = 0;
};

/// Users and POIs get dense indices in first-appearance order. A POI keeps
/// the coordinates of its first record; later disagreeing records are
/// counted as conflicts. Users with fewer than two visits are dropped.
HistoryBuild build_histories(const std::vector<CheckInRecord>& records);

struct Sample {
  UserIndex user = 0;
  std::vector<PoiIndex> context;
  PoiIndex target = 0;
  std::uint8_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  std::vector<LatLon> poi_table;
  std::size_t num_users = 0;
  std::size_t num_pois = 0;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

inline constexpr std::size_t kDefaultMaxSeqLen = 100;

/// Draws a POI uniformly from those absent from `visited` (sorted, unique)
/// using the generator keyed by (seed, user, position).
PoiIndex draw_negative(std::uint64_t seed, UserIndex user, std::size_t position,
                       const std::vector<PoiIndex>& visited, std::size_t num_pois);

DatasetSplit generate_samples(const std::vector<UserHistory>& histories,
                              const std::vector<LatLon>& poi_table,
                              std::uint64_t rng_seed,
                              std::size_t max_seq_len = kDefaultMaxSeqLen);

/// Keeps ceil(fraction * n_u) training samples of every user, chosen without
/// replacement. Only 0.2, 0.4, 0.6, 0.8 and 1.0 are accepted.
DatasetSplit train_fraction_slice(const DatasetSplit& split, double fraction,
                                  std::uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Dataset bundle on disk: samples.{train,valid,test} (JSON lines), pois.tsv,
// meta.json.

struct BundleMeta {
  std::size_t num_users = 0;
  std::size_t num_pois = 0;
  std::uint64_t seed = 0;
  std::string format;
  std::size_t max_seq_len = kDefaultMaxSeqLen;
  std::size_t records = 0;
  std::size_t malformed_lines = 0;
  std::size_t dropped_users = 0;
  std::size_t coordinate_conflicts = 0;
};

std::string sample_to_json_line(const Sample& s);
Sample sample_from_json_line(std::string_view line);

void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_samples(const std::filesystem::path& path);

void write_bundle(const std::filesystem::path& dir, const DatasetSplit& split,
                  const BundleMeta& meta);
DatasetSplit read_bundle(const std::filesystem::path& dir, BundleMeta* meta = nullptr);

}  // namespace disenpoi
