#include "commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "disenpoi/error.hpp"
#include "disenpoi/evaluator.hpp"
#include "disenpoi/io.hpp"
#include "disenpoi/model.hpp"
#include "disenpoi/parallel.hpp"
#include "disenpoi/trainer.hpp"

namespace disenpoi::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void hash_input(RunManifest& m, const fs::path& path) {
  m.input_hashes.emplace_back(path.string(), io::git_blob_hash(io::read_file(path)));
}

void hash_bundle(RunManifest& m, const fs::path& dir) {
  for (const char* name : {"meta.json", "pois.tsv", "samples.train", "samples.valid", "samples.test"}) {
    hash_input(m, dir / name);
  }
}

std::string format_metric(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

}  // namespace

GeoGraph load_or_build_geo_graph(const fs::path& bundle, const DatasetSplit& data,
                                 double delta_d) {
  const fs::path cached = bundle / "geo_graph.bin";
  if (fs::exists(cached)) {
    GeoGraph g = read_geo_graph(cached);
    if (g.delta_d() == delta_d && g.num_nodes() == data.num_pois) return g;
  }
  return build_geo_graph(data.poi_table, delta_d);
}

json to_json(const RunManifest& m) {
  json hashes = json::array();
  for (const auto& [path, hash] : m.input_hashes) hashes.push_back({{"path", path}, {"git_blob", hash}});
  return json{{"command", m.command},
              {"config_path", m.config_path ? json(m.config_path->string()) : json(nullptr)},
              {"data_path", m.data_path.string()},
              {"out_dir", m.out_dir.string()},
              {"inputs", hashes},
              {"wall_clock_seconds", m.wall_clock_seconds},
              {"seed", m.seed},
              {"details", m.extra}};
}

void write_manifest(const RunManifest& m) {
  io::write_file_atomic(m.out_dir / ("manifest." + m.command + ".json"), to_json(m).dump(2) + "\n");
}

void verify_manifest(const fs::path& manifest_path) {
  json m;
  try {
    m = json::parse(io::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, manifest_path.string() + ": " + e.what());
  }
  for (const auto& entry : m.at("inputs")) {
    const std::string path = entry.at("path").get<std::string>();
    const std::string expected = entry.at("git_blob").get<std::string>();
    if (io::git_blob_hash(io::read_file(path)) != expected) {
      throw Error(ErrorCode::ManifestMismatch, "input changed since the run: " + path);
    }
  }
}

void cmd_prepare(const PrepareOptions& opt, std::ostream& log) {
  const auto start = Clock::now();
  if (!(opt.delta_d > 0.0)) throw Error(ErrorCode::InvalidConfig, "--delta-d must be positive");
  if (opt.max_seq_len == 0) throw Error(ErrorCode::InvalidConfig, "--max-seq-len must be positive");
  std::ifstream in(opt.input, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + opt.input.string());

  ParseReport report;
  const std::vector<CheckInRecord> records = parse_checkins(in, opt.format, &report);
  if (in.bad()) throw Error(ErrorCode::Io, "read failed: " + opt.input.string());
  const HistoryBuild hb = build_histories(records);
  const DatasetSplit split = generate_samples(hb.histories, hb.poi_table, opt.seed, opt.max_seq_len);

  BundleMeta meta;
  meta.seed = opt.seed;
  meta.format = std::string(to_string(opt.format));
  meta.max_seq_len = opt.max_seq_len;
  meta.records = records.size();
  meta.malformed_lines = report.malformed;
  meta.dropped_users = hb.dropped_users;
  meta.coordinate_conflicts = hb.coordinate_conflicts;
  ensure_dir(opt.out);
  write_bundle(opt.out, split, meta);

  GeoBuildStats stats;
  const GeoGraph graph = build_geo_graph(split.poi_table, opt.delta_d, &stats);
  write_geo_graph(opt.out / "geo_graph.bin", graph);

  for (const auto& msg : report.messages) log << "skipped: " << msg << '\n';
  log << "records " << records.size() << ", malformed " << report.malformed << ", users "
      << split.num_users << ", pois " << split.num_pois << ", geo edges " << graph.num_edges()
      << ", co-located pairs " << stats.colocated_pairs << '\n'
      << "samples train " << split.train.size() << ", valid " << split.validation.size()
      << ", test " << split.test.size() << '\n';

  RunManifest m;
  m.command = "prepare";
  m.data_path = opt.input;
  m.out_dir = opt.out;
  m.seed = opt.seed;
  hash_input(m, opt.input);
  m.extra = {{"format", meta.format},
             {"max_seq_len", opt.max_seq_len},
             {"delta_d", opt.delta_d},
             {"geo_edges", graph.num_edges()},
             {"colocated_pairs", stats.colocated_pairs}};
  m.wall_clock_seconds = seconds_since(start);
  write_manifest(m);
}

void cmd_train(const TrainOptions& opt, std::ostream& log) {
  const auto start = Clock::now();
  TrainConfig config;
  if (opt.config) {
    json j;
    try {
      j = json::parse(io::read_file(*opt.config));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, opt.config->string() + ": " + e.what());
    }
    config = train_config_from_json(j);
  }
  const DatasetSplit data = read_bundle(opt.data);
  const GeoGraph graph = load_or_build_geo_graph(opt.data, data, config.delta_d);
  ensure_dir(opt.out);

  std::string log_lines;
  FitResult result = fit(config, data, graph, [&](const EpochLog& e) {
    json line = to_json(e);
    log_lines += line.dump() + "\n";
    log << line.dump() << '\n' << std::flush;
  });
  save_checkpoint(opt.out / "model.ckpt", result.model);
  io::write_file_atomic(opt.out / "train.log.jsonl", log_lines);

  RunManifest m;
  m.command = "train";
  m.config_path = opt.config;
  m.data_path = opt.data;
  m.out_dir = opt.out;
  m.seed = config.seed;
  if (opt.config) hash_input(m, *opt.config);
  hash_bundle(m, opt.data);
  m.extra = {{"config", to_json(config)},
             {"best_epoch", result.best_epoch ? json(*result.best_epoch) : json(nullptr)},
             {"parameters", result.model.params().num_scalars()},
             {"geo_edges", graph.num_edges()}};
  m.wall_clock_seconds = seconds_since(start);
  write_manifest(m);
}

json cmd_evaluate(const EvaluateOptions& opt, std::ostream& out) {
  const auto start = Clock::now();
  if (opt.split != "test" && opt.split != "valid") {
    throw Error(ErrorCode::InvalidConfig, "--split must be test or valid");
  }
  if (opt.train_fraction) {
    // Validates the tag against the accepted fractions.
    train_fraction_slice(DatasetSplit{}, *opt.train_fraction, 0);
  }
  const DatasetSplit data = read_bundle(opt.data);
  Model model = load_checkpoint(opt.ckpt);
  if (model.config().num_pois != data.num_pois) {
    throw Error(ErrorCode::ManifestMismatch,
                "checkpoint has " + std::to_string(model.config().num_pois) +
                    " POIs, bundle has " + std::to_string(data.num_pois));
  }
  const GeoGraph graph = load_or_build_geo_graph(opt.data, data, model.config().delta_d);
  const fs::path out_dir = opt.out ? *opt.out : opt.ckpt.parent_path();
  ensure_dir(out_dir.empty() ? fs::path(".") : out_dir);

  const std::vector<Sample>& samples = opt.split == "test" ? data.test : data.validation;
  std::optional<DiagnosticOptions> diag;
  if (opt.diagnostics) {
    diag = DiagnosticOptions{};
    diag->embeddings_out = out_dir / "embeddings.tsv";
  }
  MetricsReport report = evaluate_split(model, graph, data, samples, opt.split, diag);
  report.train_fraction = opt.train_fraction;
  const json j = to_json(report);
  io::write_file_atomic(out_dir / "report.json", j.dump(2) + "\n");

  out << "split " << opt.split << "  auc " << format_metric(report.auc) << "  logloss "
      << format_metric(report.logloss) << "  n " << report.n_samples << '\n';
  if (report.diagnostics) {
    const Diagnostics& d = *report.diagnostics;
    out << "cos(e_g',p_g') " << format_metric(d.cos_eg_pg) << "  cos(e_g',p_s') "
        << format_metric(d.cos_eg_ps) << "  cos(e_s',p_s') " << format_metric(d.cos_es_ps)
        << "  cos(e_s',p_g') " << format_metric(d.cos_es_pg) << '\n';
    if (d.recommendation_distance_km) {
      out << "top-10 recommendation distance " << format_metric(*d.recommendation_distance_km)
          << " km over " << d.distance_users << " users\n";
    }
  }

  RunManifest m;
  m.command = "evaluate";
  m.data_path = opt.data;
  m.out_dir = out_dir;
  hash_bundle(m, opt.data);
  hash_input(m, opt.ckpt);
  m.extra = {{"split", opt.split}, {"diagnostics", opt.diagnostics}};
  m.wall_clock_seconds = seconds_since(start);
  write_manifest(m);
  return j;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"disenpoi: next-POI visit prediction from geographical and sequential graphs"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: DISENPOI_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);

  PrepareOptions prep;
  std::string format_name = "native-tsv";
  auto* prepare = app.add_subcommand("prepare", "Parse check-ins and write a dataset bundle");
  prepare->add_option("--input", prep.input, "Check-in file")->required();
  prepare->add_option("--format", format_name, "native-tsv or foursquare-tsv")
      ->check(CLI::IsMember({"native-tsv", "foursquare-tsv"}));
  prepare->add_option("--out", prep.out, "Bundle directory")->required();
  prepare->add_option("--seed", prep.seed, "Negative sampling and split seed");
  prepare->add_option("--max-seq-len", prep.max_seq_len, "Context length cap");
  prepare->add_option("--delta-d", prep.delta_d, "Geo graph radius in km");

  TrainOptions train;
  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset bundle");
  train_cmd->add_option("--data", train.data, "Bundle directory")->required();
  train_cmd->add_option("--config", config_path, "JSON training config");
  train_cmd->add_option("--out", train.out, "Output directory")->required();

  EvaluateOptions eval;
  double fraction = 0.0;
  auto* evaluate = app.add_subcommand("evaluate", "Score a split with a checkpoint");
  evaluate->add_option("--data", eval.data, "Bundle directory")->required();
  evaluate->add_option("--ckpt", eval.ckpt, "model.ckpt")->required();
  evaluate->add_option("--split", eval.split, "test or valid")
      ->check(CLI::IsMember({"test", "valid"}));
  evaluate->add_flag("--diagnostics", eval.diagnostics, "Cosine summary, distances, embeddings.tsv");
  auto* fraction_opt =
      evaluate->add_option("--train-fraction", fraction, "Tag the report with a training fraction");
  std::string eval_out;
  auto* eval_out_opt = evaluate->add_option("--out", eval_out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    set_num_threads(threads > 0 ? threads
                                : threads_from_env(static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))));
    if (*prepare) {
      prep.format = parse_input_format(format_name);
      cmd_prepare(prep, err);
    } else if (*train_cmd) {
      if (!config_path.empty()) train.config = config_path;
      cmd_train(train, err);
    } else if (*evaluate) {
      if (*fraction_opt) eval.train_fraction = fraction;
      if (*eval_out_opt) eval.out = eval_out;
      cmd_evaluate(eval, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace disenpoi::cli
