#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "disenpoi/graphs.hpp"
#include "disenpoi/ingest.hpp"
#include "disenpoi/model.hpp"

namespace disenpoi {

/// Probability that a random positive outscores a random negative, ties
/// counted 1/2, via midrank rank-sums. Throws DegenerateLabels unless both
/// classes are present.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Mean binary cross-entropy with scores clamped to [1e-7, 1 - 1e-7].
double logloss(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct Diagnostics {
  double cos_eg_pg = 0.0;  // cos(e_g', p_g')
  double cos_eg_ps = 0.0;  // cos(e_g', p_s')
  double cos_es_ps = 0.0;  // cos(e_s', p_s')
  double cos_es_pg = 0.0;  // cos(e_s', p_g')
  std::optional<double> recommendation_distance_km;
  std::size_t distance_users = 0;

  double geo_margin() const { return cos_eg_pg - cos_eg_ps; }
  double seq_margin() const { return cos_es_ps - cos_es_pg; }
};

struct MetricsReport {
  std::string split;
  double auc = 0.5;
  double logloss = 0.0;
  std::size_t n_samples = 0;
  std::optional<double> train_fraction;
  std::optional<Diagnostics> diagnostics;
};

nlohmann::json to_json(const MetricsReport& report);

/// Cosine similarity; 0 when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

struct DiagnosticOptions {
  std::size_t pool_size = 200;
  std::size_t top_k = 10;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> embeddings_out;  // embeddings.tsv
};

/// Mean cosine similarities of the projected embeddings against both
/// proxies, optionally exporting raw vectors as
/// "<sample>\t<role>\t<v_1>\t...\t<v_D>" lines.
Diagnostics disentanglement_diagnostics(Model& model, const GeoGraph& graph,
                                        std::span<const Sample> samples,
                                        const std::optional<std::filesystem::path>& embeddings_out = {});

/// Scores every candidate as the target for `context`, keeps the top_k by
/// score (ties by lower POI index) and returns their mean haversine
/// distance from the last context POI.
double recommendation_distance(Model& model, const GeoGraph& graph,
                               std::span<const LatLon> poi_table,
                               std::span<const PoiIndex> context,
                               std::span<const PoiIndex> candidate_pool, std::size_t top_k);

/// Mean recommendation distance over the positive samples, each with a
/// candidate pool of `pool_size` POIs drawn without replacement from a
/// generator keyed by (seed, sample position).
double mean_recommendation_distance(Model& model, const GeoGraph& graph,
                                    std::span<const LatLon> poi_table,
                                    std::span<const Sample> samples, const DiagnosticOptions& opt,
                                    std::size_t* users = nullptr);

/// Scores `samples` and fills auc/logloss; with `diagnostics` also the
/// cosine summary and recommendation distance. Throws ManifestMismatch if
/// the model was built for a different POI count.
MetricsReport evaluate_split(Model& model, const GeoGraph& graph, const DatasetSplit& data,
                             std::span<const Sample> samples, const std::string& split_name,
                             const std::optional<DiagnosticOptions>& diagnostics = {});

}  // namespace disenpoi
