#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "disenpoi/graphs.hpp"
#include "disenpoi/ingest.hpp"

namespace disenpoi::cli {

struct PrepareOptions {
  std::filesystem::path input;
  InputFormat format = InputFormat::NativeTsv;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::size_t max_seq_len = kDefaultMaxSeqLen;
  double delta_d = 1.0;
};

struct TrainOptions {
  std::filesystem::path data;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
};

struct EvaluateOptions {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  std::string split = "test";
  bool diagnostics = false;
  std::optional<double> train_fraction;
  std::optional<std::filesystem::path> out;  // defaults to the checkpoint's directory
};

// Each command throws disenpoi::Error on failure.
void cmd_prepare(const PrepareOptions& opt, std::ostream& log);
void cmd_train(const TrainOptions& opt, std::ostream& log);
nlohmann::json cmd_evaluate(const EvaluateOptions& opt, std::ostream& out);

/// Reuses <bundle>/geo_graph.bin when it was built for `delta_d`, otherwise
/// builds the graph from the bundle's POI table.
GeoGraph load_or_build_geo_graph(const std::filesystem::path& bundle, const DatasetSplit& data,
                                 double delta_d);

// manifest.<command>.json: what ran, on which inputs (git blob hashes), when.
struct RunManifest {
  std::string command;
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path data_path;
  std::filesystem::path out_dir;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // path, hash
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json extra;  // resolved config, counts
};

nlohmann::json to_json(const RunManifest& m);
void write_manifest(const RunManifest& m);
/// Recomputes every recorded input hash; throws ManifestMismatch on the
/// first file whose contents changed.
void verify_manifest(const std::filesystem::path& manifest_path);

/// Parses argv and dispatches. Returns the process exit code: 0 success,
/// 1 I/O, 2 data validation, 3 compatibility.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace disenpoi::cli
