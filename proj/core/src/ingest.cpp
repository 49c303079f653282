#include "disenpoi/ingest.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <unordered_map>

#include <json.hpp>

#include "disenpoi/error.hpp"
#include "disenpoi/io.hpp"
#include "disenpoi/random.hpp"

namespace disenpoi {
namespace {

using nlohmann::json;

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::array<std::uint32_t, 4> kMin = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

double parse_coordinate(std::string_view text, double bound, const char* what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::CoordinateOutOfRange,
                std::string(what) + " is not a number: '" + std::string(text) + "'");
  }
  if (v < -bound || v > bound) {
    throw Error(ErrorCode::CoordinateOutOfRange,
                std::string(what) + " " + std::string(text) + " outside [-" +
                    std::to_string(static_cast<int>(bound)) + ", " +
                    std::to_string(static_cast<int>(bound)) + "]");
  }
  return v;
}

bool parse_int(std::string_view text, std::int64_t& out) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && !text.empty();
}

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace

InputFormat parse_input_format(std::string_view name) {
  if (name == "native-tsv") return InputFormat::NativeTsv;
  if (name == "foursquare-tsv") return InputFormat::FoursquareTsv;
  throw Error(ErrorCode::InvalidConfig, "unknown input format '" + std::string(name) + "'");
}

std::string_view to_string(InputFormat format) {
  return format == InputFormat::NativeTsv ? "native-tsv" : "foursquare-tsv";
}

std::int64_t parse_foursquare_utc(std::string_view text) {
  // "Tue Apr 03 18:00:09 +0000 2012"
  auto fail = [&] {
    return Error(ErrorCode::TimestampUnparsable, "bad UTC time '" + std::string(text) + "'");
  };
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t sp = text.find(' ', start);
    if (sp == std::string_view::npos) sp = text.size();
    if (sp > start) parts.push_back(text.substr(start, sp - start));
    start = sp + 1;
  }
  if (parts.size() != 6) throw fail();
  static constexpr std::array<std::string_view, 12> kMonths = {
      "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  auto it = std::find(kMonths.begin(), kMonths.end(), parts[1]);
  if (it == kMonths.end()) throw fail();
  const unsigned month = static_cast<unsigned>(it - kMonths.begin()) + 1;
  std::int64_t day = 0, year = 0;
  if (!parse_int(parts[2], day) || day < 1 || day > 31) throw fail();
  if (!parse_int(parts[5], year)) throw fail();
  const auto clock = parts[3];
  if (clock.size() != 8 || clock[2] != ':' || clock[5] != ':') throw fail();
  std::int64_t hh = 0, mm = 0, ss = 0;
  if (!parse_int(clock.substr(0, 2), hh) || !parse_int(clock.substr(3, 2), mm) ||
      !parse_int(clock.substr(6, 2), ss) || hh > 23 || mm > 59 || ss > 60) {
    throw fail();
  }
  const auto zone = parts[4];
  std::int64_t zone_hhmm = 0;
  if (zone.size() != 5 || (zone[0] != '+' && zone[0] != '-') ||
      !parse_int(zone.substr(1), zone_hhmm)) {
    throw fail();
  }
  const std::int64_t zone_seconds =
      (zone[0] == '-' ? -1 : 1) * ((zone_hhmm / 100) * 3600 + (zone_hhmm % 100) * 60);
  return days_from_civil(year, month, static_cast<unsigned>(day)) * 86400 + hh * 3600 +
         mm * 60 + ss - zone_seconds;
}

CheckInRecord parse_checkin_line(std::string_view line, InputFormat format) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (!valid_utf8(line)) throw Error(ErrorCode::InvalidEncoding, "line is not valid UTF-8");
  const auto cols = split_tabs(line);
  const std::size_t expected = format == InputFormat::NativeTsv ? 5 : 8;
  if (cols.size() != expected) {
    throw Error(ErrorCode::ColumnCountMismatch, "expected " + std::to_string(expected) +
                                                    " columns, got " +
                                                    std::to_string(cols.size()));
  }
  CheckInRecord r;
  r.user_id = std::string(cols[0]);
  r.poi_id = std::string(cols[1]);
  if (format == InputFormat::NativeTsv) {
    r.lat = parse_coordinate(cols[2], 90.0, "latitude");
    r.lon = parse_coordinate(cols[3], 180.0, "longitude");
    if (!parse_int(cols[4], r.timestamp)) {
      throw Error(ErrorCode::TimestampUnparsable, "bad timestamp '" + std::string(cols[4]) + "'");
    }
  } else {
    r.lat = parse_coordinate(cols[4], 90.0, "latitude");
    r.lon = parse_coordinate(cols[5], 180.0, "longitude");
    std::int64_t tz_minutes = 0;
    if (!parse_int(cols[6], tz_minutes)) {
      throw Error(ErrorCode::TimestampUnparsable,
                  "bad timezone offset '" + std::string(cols[6]) + "'");
    }
    r.timestamp = parse_foursquare_utc(cols[7]);
  }
  if (r.timestamp < 0) {
    throw Error(ErrorCode::TimestampUnparsable, "negative timestamp " + std::to_string(r.timestamp));
  }
  return r;
}

std::vector<CheckInRecord> parse_checkins(std::istream& in, InputFormat format,
                                          ParseReport* report, double max_malformed_ratio) {
  ParseReport local;
  ParseReport& rep = report != nullptr ? *report : local;
  rep = ParseReport{};
  std::vector<CheckInRecord> records;
  std::optional<Error> first_error;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    ++rep.lines;
    try {
      records.push_back(parse_checkin_line(line, format));
    } catch (const Error& e) {
      ++rep.malformed;
      if (!first_error) first_error = e;
      if (rep.messages.size() < 20) {
        rep.messages.push_back("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  if (in.bad()) throw Error(ErrorCode::Io, "stream read failed");
  if (rep.malformed > 0 &&
      static_cast<double>(rep.malformed) > max_malformed_ratio * static_cast<double>(rep.lines)) {
    throw Error(first_error->code(),
                std::to_string(rep.malformed) + " of " + std::to_string(rep.lines) +
                    " lines malformed (threshold " + format_double(100.0 * max_malformed_ratio) +
                    "%); first: " + rep.messages.front());
  }
  return records;
}

HistoryBuild build_histories(const std::vector<CheckInRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::EmptyCorpus, "no check-in records");
  HistoryBuild out;
  std::unordered_map<std::string, PoiIndex> poi_index;
  std::unordered_map<std::string, std::size_t> user_slot;
  std::vector<std::string> user_order;
  std::vector<std::vector<Visit>> raw;

  for (const auto& r : records) {
    auto [pit, pnew] = poi_index.try_emplace(r.poi_id, static_cast<PoiIndex>(out.poi_ids.size()));
    if (pnew) {
      out.poi_ids.push_back(r.poi_id);
      out.poi_table.push_back({r.lat, r.lon});
    } else if (out.poi_table[pit->second] != LatLon{r.lat, r.lon}) {
      ++out.coordinate_conflicts;
    }
    auto [uit, unew] = user_slot.try_emplace(r.user_id, raw.size());
    if (unew) {
      user_order.push_back(r.user_id);
      raw.emplace_back();
    }
    raw[uit->second].push_back({pit->second, r.timestamp});
  }

  for (std::size_t slot = 0; slot < raw.size(); ++slot) {
    auto& visits = raw[slot];
    if (visits.size() < 2) {
      ++out.dropped_users;
      continue;
    }
    std::stable_sort(visits.begin(), visits.end(),
                     [](const Visit& a, const Visit& b) { return a.timestamp < b.timestamp; });
    UserHistory h;
    h.user_index = static_cast<UserIndex>(out.histories.size());
    h.visits = std::move(visits);
    out.histories.push_back(std::move(h));
    out.user_ids.push_back(user_order[slot]);
  }
  if (out.histories.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "no user has two or more check-ins");
  }
  return out;
}

PoiIndex draw_negative(std::uint64_t seed, UserIndex user, std::size_t position,
                       const std::vector<PoiIndex>& visited, std::size_t num_pois) {
  if (visited.size() >= num_pois) {
    throw Error(ErrorCode::NoNegativeCandidates,
                "user " + std::to_string(user) + " has visited every POI");
  }
  Rng rng = keyed_rng({seed, user, position});
  // k-th unvisited POI, walking the sorted visit set.
  std::uint64_t k = uniform_index(rng, num_pois - visited.size());
  for (PoiIndex v : visited) {
    if (v <= k) {
      ++k;
    } else {
      break;
    }
  }
  return static_cast<PoiIndex>(k);
}

DatasetSplit generate_samples(const std::vector<UserHistory>& histories,
                              const std::vector<LatLon>& poi_table, std::uint64_t rng_seed,
                              std::size_t max_seq_len) {
  if (max_seq_len == 0) throw Error(ErrorCode::InvalidConfig, "max_seq_len must be positive");
  DatasetSplit split;
  split.poi_table = poi_table;
  split.num_pois = poi_table.size();
  split.num_users = histories.size();
  std::vector<Sample> evaluation;

  for (const auto& h : histories) {
    if (h.visits.size() < 2) {
      throw Error(ErrorCode::EmptyCorpus,
                  "history of user " + std::to_string(h.user_index) + " is shorter than 2");
    }
    std::vector<PoiIndex> visited;
    visited.reserve(h.visits.size());
    for (const auto& v : h.visits) visited.push_back(v.poi);
    std::sort(visited.begin(), visited.end());
    visited.erase(std::unique(visited.begin(), visited.end()), visited.end());

    const std::size_t n = h.visits.size();
    for (std::size_t t = 1; t < n; ++t) {
      Sample pos;
      pos.user = h.user_index;
      const std::size_t begin = t > max_seq_len ? t - max_seq_len : 0;
      for (std::size_t i = begin; i < t; ++i) pos.context.push_back(h.visits[i].poi);
      pos.target = h.visits[t].poi;
      pos.label = 1;
      Sample neg = pos;
      neg.target = draw_negative(rng_seed, h.user_index, t, visited, split.num_pois);
      neg.label = 0;
      auto& dest = t + 1 == n ? evaluation : split.train;
      dest.push_back(std::move(pos));
      dest.push_back(std::move(neg));
    }
  }

  Rng rng = keyed_rng({rng_seed});
  shuffle(std::span<Sample>(evaluation), rng);
  const std::size_t half = (evaluation.size() + 1) / 2;
  split.test.assign(std::make_move_iterator(evaluation.begin()),
                    std::make_move_iterator(evaluation.begin() + static_cast<std::ptrdiff_t>(half)));
  split.validation.assign(
      std::make_move_iterator(evaluation.begin() + static_cast<std::ptrdiff_t>(half)),
      std::make_move_iterator(evaluation.end()));
  return split;
}

DatasetSplit train_fraction_slice(const DatasetSplit& split, double fraction,
                                  std::uint64_t rng_seed) {
  int fifths = 0;
  for (int k = 1; k <= 5; ++k) {
    if (std::abs(fraction - k / 5.0) < 1e-9) fifths = k;
  }
  if (fifths == 0) {
    throw Error(ErrorCode::InvalidFraction,
                "train fraction must be one of 0.2, 0.4, 0.6, 0.8, 1.0; got " +
                    format_double(fraction));
  }
  DatasetSplit out = split;
  if (fifths == 5) return out;

  std::vector<std::vector<std::size_t>> by_user(split.num_users);
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const auto u = split.train[i].user;
    if (u >= by_user.size()) by_user.resize(u + 1);
    by_user[u].push_back(i);
  }
  std::vector<std::size_t> keep;
  for (std::size_t u = 0; u < by_user.size(); ++u) {
    auto& idx = by_user[u];
    const std::size_t n = idx.size();
    const std::size_t retain = (static_cast<std::size_t>(fifths) * n + 4) / 5;
    Rng rng = keyed_rng({rng_seed, u});
    for (std::size_t i = 0; i < retain; ++i) {
      std::size_t j = i + uniform_index(rng, n - i);
      std::swap(idx[i], idx[j]);
    }
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(retain));
  }
  std::sort(keep.begin(), keep.end());
  out.train.clear();
  out.train.reserve(keep.size());
  for (std::size_t i : keep) out.train.push_back(split.train[i]);
  return out;
}

// ---------------------------------------------------------------------------

std::string sample_to_json_line(const Sample& s) {
  std::string line = "{\"user\":" + std::to_string(s.user) + ",\"context\":[";
  for (std::size_t i = 0; i < s.context.size(); ++i) {
    if (i > 0) line.push_back(',');
    line += std::to_string(s.context[i]);
  }
  line += "],\"target\":" + std::to_string(s.target) +
          ",\"label\":" + std::to_string(static_cast<int>(s.label)) + "}";
  return line;
}

Sample sample_from_json_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    Sample s;
    s.user = j.at("user").get<UserIndex>();
    s.context = j.at("context").get<std::vector<PoiIndex>>();
    s.target = j.at("target").get<PoiIndex>();
    const int label = j.at("label").get<int>();
    if (label != 0 && label != 1) throw Error(ErrorCode::CorruptFile, "label must be 0 or 1");
    s.label = static_cast<std::uint8_t>(label);
    if (s.context.empty()) throw Error(ErrorCode::CorruptFile, "empty context");
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("bad sample record: ") + e.what());
  }
}

void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += sample_to_json_line(s);
    out.push_back('\n');
  }
  io::write_file_atomic(path, out);
}

std::vector<Sample> read_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<Sample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    samples.push_back(sample_from_json_line(line));
  }
  return samples;
}

void write_bundle(const std::filesystem::path& dir, const DatasetSplit& split,
                  const BundleMeta& meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string());
  write_samples(dir / "samples.train", split.train);
  write_samples(dir / "samples.valid", split.validation);
  write_samples(dir / "samples.test", split.test);

  std::string pois;
  for (std::size_t i = 0; i < split.poi_table.size(); ++i) {
    pois += std::to_string(i) + '\t' + format_double(split.poi_table[i].lat) + '\t' +
            format_double(split.poi_table[i].lon) + '\n';
  }
  io::write_file_atomic(dir / "pois.tsv", pois);

  json m;
  m["num_users"] = split.num_users;
  m["num_pois"] = split.num_pois;
  m["seed"] = meta.seed;
  m["format"] = meta.format;
  m["max_seq_len"] = meta.max_seq_len;
  m["records"] = meta.records;
  m["malformed_lines"] = meta.malformed_lines;
  m["dropped_users"] = meta.dropped_users;
  m["coordinate_conflicts"] = meta.coordinate_conflicts;
  m["num_train"] = split.train.size();
  m["num_valid"] = split.validation.size();
  m["num_test"] = split.test.size();
  io::write_file_atomic(dir / "meta.json", m.dump(2) + "\n");
}

DatasetSplit read_bundle(const std::filesystem::path& dir, BundleMeta* meta) {
  DatasetSplit split;
  json m;
  try {
    m = json::parse(io::read_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("meta.json: ") + e.what());
  }
  try {
    split.num_users = m.at("num_users").get<std::size_t>();
    split.num_pois = m.at("num_pois").get<std::size_t>();
    if (meta != nullptr) {
      meta->num_users = split.num_users;
      meta->num_pois = split.num_pois;
      meta->seed = m.at("seed").get<std::uint64_t>();
      meta->format = m.at("format").get<std::string>();
      meta->max_seq_len = m.at("max_seq_len").get<std::size_t>();
      meta->records = m.value("records", std::size_t{0});
      meta->malformed_lines = m.value("malformed_lines", std::size_t{0});
      meta->dropped_users = m.value("dropped_users", std::size_t{0});
      meta->coordinate_conflicts = m.value("coordinate_conflicts", std::size_t{0});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("meta.json: ") + e.what());
  }

  const std::string pois = io::read_file(dir / "pois.tsv");
  split.poi_table.resize(split.num_pois);
  std::vector<bool> seen(split.num_pois, false);
  std::size_t start = 0;
  while (start < pois.size()) {
    std::size_t nl = pois.find('\n', start);
    if (nl == std::string::npos) nl = pois.size();
    std::string_view line(pois.data() + start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    std::int64_t idx = 0;
    if (cols.size() != 3 || !parse_int(cols[0], idx) || idx < 0 ||
        static_cast<std::size_t>(idx) >= split.num_pois) {
      throw Error(ErrorCode::CorruptFile, "pois.tsv: bad line '" + std::string(line) + "'");
    }
    split.poi_table[idx] = {parse_coordinate(cols[1], 90.0, "latitude"),
                            parse_coordinate(cols[2], 180.0, "longitude")};
    seen[idx] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(ErrorCode::CorruptFile, "pois.tsv does not cover every POI index");
  }

  split.train = read_samples(dir / "samples.train");
  split.validation = read_samples(dir / "samples.valid");
  split.test = read_samples(dir / "samples.test");
  auto check = [&](const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
      if (s.user >= split.num_users || s.target >= split.num_pois) {
        throw Error(ErrorCode::CorruptFile, "sample index out of range");
      }
      for (auto p : s.context) {
        if (p >= split.num_pois) throw Error(ErrorCode::CorruptFile, "context index out of range");
      }
    }
  };
  check(split.train);
  check(split.validation);
  check(split.test);
  return split;
}

}  // namespace disenpoi
